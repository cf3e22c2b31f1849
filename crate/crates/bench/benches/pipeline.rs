use std::hint::black_box;

use compliance_bench::{synthetic_corpus, synthetic_workflow};
use compliance_core::config::Registry;
use compliance_core::gateway::{Matcher, ScriptedBackend};
use compliance_core::judge::judge_conversation;
use compliance_core::metrics::{aggregate, AggregateOptions};
use compliance_core::model::Workflow;
use compliance_core::model::{parse_record, ParseMode};
use compliance_core::scaling::{
    dedup_workflows_with, ScalingError, SimilarityConfig, SimilarityOracle, WorkflowRewriter,
};
use compliance_core::util::sha256_hex;
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_metrics_aggregate(c: &mut Criterion) {
    let (corpus, runs) = synthetic_corpus(100, 16, 4);
    c.bench_function("aggregate_100_dialogues_4_runs", |b| {
        b.iter(|| {
            let report = aggregate(
                black_box(&runs),
                black_box(&corpus),
                AggregateOptions::default(),
            )
            .unwrap();
            black_box(report)
        })
    });
}

struct HashOracle;

impl SimilarityOracle for HashOracle {
    fn blended(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError> {
        let (x, y) = if a.workflow_id <= b.workflow_id {
            (&a.workflow_id, &b.workflow_id)
        } else {
            (&b.workflow_id, &a.workflow_id)
        };
        let digest = sha256_hex(format!("{x}:{y}").as_bytes());
        let word = u64::from_str_radix(&digest[..12], 16).unwrap();
        Ok((word % 1000) as f64 / 999.0)
    }
}

struct DiscardingRewriter;

impl WorkflowRewriter for DiscardingRewriter {
    fn rewrite(&self, duplicate: &Workflow, _: &[Workflow]) -> Result<Workflow, ScalingError> {
        Ok(duplicate.clone())
    }
}

fn bench_dedup(c: &mut Criterion) {
    let pool: Vec<Workflow> = (0..12)
        .map(|i| synthetic_workflow(&format!("wf{i}"), 5))
        .collect();
    let config = SimilarityConfig::default();
    c.bench_function("dedup_12_workflows", |b| {
        b.iter(|| {
            let (result, trace) = dedup_workflows_with(
                black_box(pool.clone()),
                &config,
                &HashOracle,
                &DiscardingRewriter,
            )
            .unwrap();
            black_box((result, trace))
        })
    });
}

fn bench_corpus_parse(c: &mut Criterion) {
    let (corpus, _) = synthetic_corpus(1, 16, 1);
    let line = serde_json::to_string(&corpus[0]).unwrap();
    c.bench_function("parse_and_validate_record", |b| {
        b.iter(|| black_box(parse_record(black_box(&line), 1, ParseMode::Strict).unwrap()))
    });
}

fn bench_chat_judge_roundtrip(c: &mut Criterion) {
    let (corpus, runs) = synthetic_corpus(1, 8, 1);
    let dialogue = &corpus[0];
    let response = serde_json::to_string(
        &runs[0]
            .predictions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let g = p.guideline.as_ref().unwrap();
                serde_json::json!({
                    "turn": i + 1,
                    "category": "workflow",
                    "key": g.key,
                    "phase_index": g.phase_index,
                    "violation": p.violated,
                })
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let backend = ScriptedBackend::builder("bench")
        .entry(Matcher::tag("compliance_judge"), response)
        .build();
    let registry = Registry::uniform(backend);
    let gateway = registry.named("bench").unwrap();
    c.bench_function("chat_judge_prompt_and_parse_8_turns", |b| {
        b.iter(|| {
            let run = judge_conversation(
                black_box(gateway),
                "bench_judge",
                black_box(dialogue),
                &dialogue.oracle_document,
                1,
            )
            .unwrap();
            black_box(run)
        })
    });
}

criterion_group!(
    benches,
    bench_metrics_aggregate,
    bench_dedup,
    bench_corpus_parse,
    bench_chat_judge_roundtrip
);
criterion_main!(benches);
