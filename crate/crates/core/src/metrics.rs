//! The three compliance metrics and their reward-model relaxations, run and
//! domain aggregation, and report rendering.
//!
//! SGA scores only compliant turns and demands the exact governing guideline
//! plus a non-violation verdict; VDA scores only violated turns and accepts
//! any flagged violation regardless of the named guideline; CLA requires
//! both the guideline and the violation label to be correct at every turn.
//! Undefined components (no compliant turns, no violated turns) are excluded
//! from aggregates rather than zero-filled.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{JudgeMode, JudgeRun, TurnPrediction};
use crate::model::{GuidelineCategory, GuidelineRef, LabeledDialogue, TurnLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{labels} labels but {preds} predictions")]
    LengthMismatch { labels: usize, preds: usize },
    #[error("predictions reference unknown dialogue `{dialogue_id}`")]
    OrphanRun { dialogue_id: String },
    #[error("io failure: {0}")]
    Io(String),
}

/// Guideline match rule: category and key must agree, and the phase index
/// must match exactly when the truth is a workflow ref.
pub fn guideline_matches(truth: &GuidelineRef, predicted: Option<&GuidelineRef>) -> bool {
    let Some(predicted) = predicted else {
        return false;
    };
    if predicted.category != truth.category || predicted.key != truth.key {
        return false;
    }
    if truth.category == GuidelineCategory::Workflow {
        predicted.phase_index == truth.phase_index
    } else {
        true
    }
}

fn check_lengths(labels: &[TurnLabel], preds: &[TurnPrediction]) -> Result<(), MetricsError> {
    if labels.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    Ok(())
}

/// Strict Guideline Accuracy over compliant turns; None when the dialogue
/// has no compliant turns.
pub fn score_sga(
    labels: &[TurnLabel],
    preds: &[TurnPrediction],
) -> Result<Option<f64>, MetricsError> {
    check_lengths(labels, preds)?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for (label, pred) in labels.iter().zip(preds) {
        if label.violated {
            continue;
        }
        total += 1;
        if !pred.parse_failed
            && !pred.violated
            && guideline_matches(&label.guideline, pred.guideline.as_ref())
        {
            correct += 1;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Violation Detection Accuracy over violated turns, irrespective of the
/// predicted guideline; None when the dialogue has no violated turns.
pub fn score_vda(
    labels: &[TurnLabel],
    preds: &[TurnPrediction],
) -> Result<Option<f64>, MetricsError> {
    check_lengths(labels, preds)?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for (label, pred) in labels.iter().zip(preds) {
        if !label.violated {
            continue;
        }
        total += 1;
        if !pred.parse_failed && pred.violated {
            correct += 1;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Conversation-Level Accuracy: every turn needs the correct guideline and
/// the correct violation label.
pub fn score_cla(labels: &[TurnLabel], preds: &[TurnPrediction]) -> Result<bool, MetricsError> {
    check_lengths(labels, preds)?;
    Ok(labels.iter().zip(preds).all(|(label, pred)| {
        !pred.parse_failed
            && pred.violated == label.violated
            && guideline_matches(&label.guideline, pred.guideline.as_ref())
    }))
}

/// CLA on violation labels alone, the laxer reading used for sensitivity
/// analysis and for reward models that predict no guideline.
pub fn score_cla_violation_only(
    labels: &[TurnLabel],
    preds: &[TurnPrediction],
) -> Result<bool, MetricsError> {
    check_lengths(labels, preds)?;
    Ok(labels
        .iter()
        .zip(preds)
        .all(|(label, pred)| !pred.parse_failed && pred.violated == label.violated))
}

/// The reward-model relaxation: SGA becomes the fraction of compliant turns
/// with a non-violation verdict, VDA is unchanged, CLA uses violation labels
/// alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxedScores {
    pub sga: Option<f64>,
    pub vda: Option<f64>,
    pub cla: bool,
}

pub fn score_relaxed(
    labels: &[TurnLabel],
    preds: &[TurnPrediction],
) -> Result<RelaxedScores, MetricsError> {
    check_lengths(labels, preds)?;
    let mut compliant_total = 0usize;
    let mut compliant_correct = 0usize;
    for (label, pred) in labels.iter().zip(preds) {
        if label.violated {
            continue;
        }
        compliant_total += 1;
        if !pred.parse_failed && !pred.violated {
            compliant_correct += 1;
        }
    }
    Ok(RelaxedScores {
        sga: (compliant_total > 0).then(|| compliant_correct as f64 / compliant_total as f64),
        vda: score_vda(labels, preds)?,
        cla: score_cla_violation_only(labels, preds)?,
    })
}

/// Per-conversation scores for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationScore {
    pub dialogue_id: String,
    pub sga: Option<f64>,
    pub vda: Option<f64>,
    pub cla: bool,
    pub mode: JudgeMode,
}

/// How CLA treats guideline identification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaMode {
    #[default]
    Strict,
    ViolationLabelOnly,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AggregateOptions {
    pub relaxed: bool,
    pub cla_mode: ClaMode,
}

/// Aggregated means per (judge, domain), averaged over runs per dialogue and
/// then over dialogues per domain, with undefined components excluded from
/// denominators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub prompt_version: String,
    pub relaxed: bool,
    pub cla_mode: ClaMode,
    /// Averaging order, recorded because the per-domain numbers depend on it.
    pub averaging: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub judge: String,
    pub domain: String,
    pub sga: Option<f64>,
    pub vda: Option<f64>,
    pub cla: f64,
    pub conversations: usize,
    pub compliant_turns: usize,
    pub violated_turns: usize,
    pub unparseable_runs: usize,
}

/// Score one run against its dialogue labels. Unparseable runs score as
/// all-incorrect rather than being dropped.
pub fn score_run(
    dialogue: &LabeledDialogue,
    run: &JudgeRun,
    options: AggregateOptions,
) -> Result<ConversationScore, MetricsError> {
    let labels = &dialogue.labels;
    if run.unparseable {
        let has_compliant = labels.iter().any(|l| !l.violated);
        let has_violated = labels.iter().any(|l| l.violated);
        return Ok(ConversationScore {
            dialogue_id: dialogue.dialogue_id.clone(),
            sga: has_compliant.then_some(0.0),
            vda: has_violated.then_some(0.0),
            cla: false,
            mode: run.mode,
        });
    }
    let preds = &run.predictions;
    let (sga, vda, cla) = if options.relaxed {
        let relaxed = score_relaxed(labels, preds)?;
        (relaxed.sga, relaxed.vda, relaxed.cla)
    } else {
        let cla = match options.cla_mode {
            ClaMode::Strict => score_cla(labels, preds)?,
            ClaMode::ViolationLabelOnly => score_cla_violation_only(labels, preds)?,
        };
        (score_sga(labels, preds)?, score_vda(labels, preds)?, cla)
    };
    Ok(ConversationScore {
        dialogue_id: dialogue.dialogue_id.clone(),
        sga,
        vda,
        cla,
        mode: run.mode,
    })
}

pub fn aggregate(
    runs: &[JudgeRun],
    corpus: &[LabeledDialogue],
    options: AggregateOptions,
) -> Result<BenchmarkReport, MetricsError> {
    let by_id: BTreeMap<&str, &LabeledDialogue> =
        corpus.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();

    // (judge, dialogue) -> runs
    let mut grouped: BTreeMap<(String, String), Vec<&JudgeRun>> = BTreeMap::new();
    for run in runs {
        if !by_id.contains_key(run.dialogue_id.as_str()) {
            return Err(MetricsError::OrphanRun {
                dialogue_id: run.dialogue_id.clone(),
            });
        }
        grouped
            .entry((run.judge_id.clone(), run.dialogue_id.clone()))
            .or_default()
            .push(run);
    }

    struct DialogueMean {
        sga: Option<f64>,
        vda: Option<f64>,
        cla: f64,
        unparseable: usize,
    }

    // (judge, domain) -> per-dialogue means
    let mut domains: BTreeMap<(String, String), Vec<(&LabeledDialogue, DialogueMean)>> =
        BTreeMap::new();
    for ((judge, dialogue_id), dialogue_runs) in &grouped {
        let dialogue = by_id[dialogue_id.as_str()];
        let mut sga_values = Vec::new();
        let mut vda_values = Vec::new();
        let mut cla_values = Vec::new();
        let mut unparseable = 0usize;
        for run in dialogue_runs {
            let score = score_run(dialogue, run, options)?;
            if let Some(v) = score.sga {
                sga_values.push(v);
            }
            if let Some(v) = score.vda {
                vda_values.push(v);
            }
            cla_values.push(if score.cla { 1.0 } else { 0.0 });
            if run.unparseable {
                unparseable += 1;
            }
        }
        let mean = |values: &[f64]| -> Option<f64> {
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        domains
            .entry((judge.clone(), dialogue.domain.clone()))
            .or_default()
            .push((
                dialogue,
                DialogueMean {
                    sga: mean(&sga_values),
                    vda: mean(&vda_values),
                    cla: mean(&cla_values).unwrap_or(0.0),
                    unparseable,
                },
            ));
    }

    let mut rows = Vec::new();
    for ((judge, domain), dialogues) in domains {
        let mean_of = |extract: &dyn Fn(&DialogueMean) -> Option<f64>| -> Option<f64> {
            let values: Vec<f64> = dialogues.iter().filter_map(|(_, m)| extract(m)).collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        let sga = mean_of(&|m| m.sga);
        let vda = mean_of(&|m| m.vda);
        let cla = mean_of(&|m| Some(m.cla)).unwrap_or(0.0);
        let compliant_turns = dialogues
            .iter()
            .map(|(d, _)| d.labels.iter().filter(|l| !l.violated).count())
            .sum();
        let violated_turns = dialogues
            .iter()
            .map(|(d, _)| d.labels.iter().filter(|l| l.violated).count())
            .sum();
        let unparseable_runs = dialogues.iter().map(|(_, m)| m.unparseable).sum();
        rows.push(ReportRow {
            judge,
            domain,
            sga,
            vda,
            cla,
            conversations: dialogues.len(),
            compliant_turns,
            violated_turns,
            unparseable_runs,
        });
    }

    Ok(BenchmarkReport {
        metadata: ReportMetadata {
            prompt_version: crate::prompts::prompt_version(),
            relaxed: options.relaxed,
            cla_mode: options.cla_mode,
            averaging: "per-conversation over runs, then per-domain over conversations".into(),
        },
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

fn pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}

/// Render with deterministic (judge, domain) ordering and percentages to two
/// decimals. The JSON form round-trips to an equal report.
pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => {
            let mut out = String::from(
                "judge,domain,sga,vda,cla,conversations,compliant_turns,violated_turns,unparseable_runs\n",
            );
            for row in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    row.judge,
                    row.domain,
                    pct(row.sga),
                    pct(row.vda),
                    pct(Some(row.cla)),
                    row.conversations,
                    row.compliant_turns,
                    row.violated_turns,
                    row.unparseable_runs
                ));
            }
            out
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<20} {:<12} {:>8} {:>8} {:>8} {:>6} {:>10}\n",
                "judge", "domain", "SGA", "VDA", "CLA", "conv", "unparse"
            ));
            for row in &report.rows {
                out.push_str(&format!(
                    "{:<20} {:<12} {:>8} {:>8} {:>8} {:>6} {:>10}\n",
                    row.judge,
                    row.domain,
                    pct(row.sga),
                    pct(row.vda),
                    pct(Some(row.cla)),
                    row.conversations,
                    row.unparseable_runs
                ));
            }
            out.push_str(&format!(
                "(prompts {}, {}, cla={:?}{})\n",
                report.metadata.prompt_version,
                report.metadata.averaging,
                report.metadata.cla_mode,
                if report.metadata.relaxed {
                    ", relaxed"
                } else {
                    ""
                }
            ));
            out
        }
    }
}

/// The eight-entry error taxonomy, a tagging schema for manual annotation.
/// Tags are stored and loaded but never auto-assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    ScopeMisattribution,
    SemanticMisunderstanding,
    FalseNegativeOnSatisfaction,
    FalsePositiveOnViolation,
    OverlyStrict,
    AcceptingNonEquivalentBehavior,
    ReasoningChainError,
    IgnoredKeyEvidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Sga,
    Vda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTag {
    pub dialogue_id: String,
    pub turn: usize,
    pub metric: MetricKind,
    pub error_type: ErrorType,
    #[serde(default)]
    pub note: String,
}

pub fn save_error_tags(tags: &[ErrorTag], path: &Path) -> Result<(), MetricsError> {
    let mut out = String::new();
    for tag in tags {
        out.push_str(&serde_json::to_string(tag).expect("tag serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| MetricsError::Io(e.to_string()))?;
    }
    std::fs::write(path, out).map_err(|e| MetricsError::Io(e.to_string()))
}

pub fn load_error_tags(path: &Path) -> Result<Vec<ErrorTag>, MetricsError> {
    let file = std::fs::File::open(path).map_err(|e| MetricsError::Io(e.to_string()))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| MetricsError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MetricsError::Io(e.to_string()))?);
    }
    Ok(out)
}

pub fn save_report(report: &BenchmarkReport, path: &Path) -> Result<(), MetricsError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| MetricsError::Io(e.to_string()))?;
    }
    std::fs::write(path, render_report(report, ReportFormat::Json))
        .map_err(|e| MetricsError::Io(e.to_string()))
}

pub fn load_report(path: &Path) -> Result<BenchmarkReport, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| MetricsError::Io(e.to_string()))
}
