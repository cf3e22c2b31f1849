//! Synthetic fixture builders shared by the benchmarks.

use std::collections::BTreeMap;

use compliance_core::judge::{JudgeMode, JudgeRun, TurnPrediction};
use compliance_core::model::{
    Guideline, GuidelineDocument, GuidelineRef, LabeledDialogue, Phase, Turn, TurnLabel,
    VariantKind, Workflow,
};
use compliance_core::util::derive_rng;
use rand::Rng;

pub fn synthetic_workflow(id: &str, phases: usize) -> Workflow {
    Workflow {
        workflow_id: id.to_string(),
        intent: format!("intent for {id}"),
        phases: (1..=phases)
            .map(|i| Phase {
                phase_index: i,
                guideline: Guideline::workflow(
                    format!("{id}_p{i}"),
                    format!("Perform step {i} of {id} with the required confirmations"),
                ),
            })
            .collect(),
    }
}

/// A corpus of `count` dialogues with `turns` turns each, roughly 30%
/// violated, plus a perfect judge run per dialogue per repetition.
pub fn synthetic_corpus(
    count: usize,
    turns: usize,
    runs_per_dialogue: usize,
) -> (Vec<LabeledDialogue>, Vec<JudgeRun>) {
    let mut rng = derive_rng(4242, &["bench", "corpus"]);
    let workflow = synthetic_workflow("wf", turns);
    let mut corpus = Vec::with_capacity(count);
    let mut runs = Vec::new();
    for d in 0..count {
        let mut doc = GuidelineDocument {
            universal: vec![Guideline::universal("be_kind", "Always be kind")],
            workflow: workflow.clone(),
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        let mut labels = Vec::with_capacity(turns);
        for i in 1..=turns {
            let violated = rng.random_range(0.0..1.0) < 0.3;
            if violated {
                doc.injection_map
                    .insert(format!("wf_p{i}"), VariantKind::WorkflowModified);
            }
            labels.push(TurnLabel {
                guideline: GuidelineRef::workflow(format!("wf_p{i}"), i),
                violated,
            });
        }
        let dialogue = LabeledDialogue {
            dialogue_id: format!("dlg_{d:05}"),
            domain: "airline".into(),
            turns: (1..=turns)
                .map(|i| Turn {
                    assistant: format!("assistant message {i} with enough text to be realistic"),
                    user: format!("user message {i}"),
                })
                .collect(),
            labels: labels.clone(),
            source_document: doc.clone(),
            oracle_document: {
                let mut oracle = doc.clone();
                oracle.injection_map.clear();
                oracle
            },
        };
        for run_index in 1..=runs_per_dialogue as u32 {
            runs.push(JudgeRun {
                dialogue_id: dialogue.dialogue_id.clone(),
                judge_id: "bench_judge".into(),
                run_index,
                mode: JudgeMode::ChatJudge,
                predictions: labels
                    .iter()
                    .map(|l| TurnPrediction {
                        guideline: Some(l.guideline.clone()),
                        violated: l.violated,
                        parse_failed: false,
                    })
                    .collect(),
                unparseable: false,
                raw_output: String::new(),
            });
        }
        corpus.push(dialogue);
    }
    (corpus, runs)
}
