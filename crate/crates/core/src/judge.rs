//! Compliance judging over labeled corpora: whole-conversation chat judges
//! with a strict per-turn output schema and multi-run repetition, plus the
//! two reward-model adaptations (classifier score sign, generative majority
//! vote).
//!
//! Judges always receive the oracle document; the possibly-violating content
//! is only ever visible through the transcript.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{GuidelineCategory, GuidelineDocument, GuidelineRef, LabeledDialogue};
use crate::prompts;
use crate::util::{parallel_map, parse_json_lenient};

/// Repetition counts: `runs` whole-conversation passes for chat judges,
/// `votes` per-turn samples for generative reward models.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JudgingConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_votes")]
    pub votes: usize,
}

fn default_runs() -> usize {
    4
}
fn default_votes() -> usize {
    3
}

impl Default for JudgingConfig {
    fn default() -> Self {
        JudgingConfig {
            runs: default_runs(),
            votes: default_votes(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    ChatJudge,
    RewardClassifier,
    RewardGenerative,
}

/// A judge's verdict for one turn. Reward modes carry no guideline; a turn
/// whose verdict could not be determined is marked `parse_failed` and scores
/// as incorrect everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<GuidelineRef>,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

impl TurnPrediction {
    pub fn unparseable() -> Self {
        TurnPrediction {
            guideline: None,
            violated: false,
            parse_failed: true,
        }
    }
}

/// One judging pass over one dialogue, with the raw model output for audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeRun {
    pub dialogue_id: String,
    pub judge_id: String,
    pub run_index: u32,
    pub mode: JudgeMode,
    pub predictions: Vec<TurnPrediction>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparseable: bool,
    #[serde(default)]
    pub raw_output: String,
}

/// Whole-conversation chat judging: one call carrying the full oracle
/// document and transcript, parsed against a strict per-turn schema with up
/// to two repair retries. Irrecoverable outputs yield a run flagged
/// unparseable (scored as all-incorrect), never an error.
pub fn judge_conversation(
    gateway: &Gateway,
    judge_id: &str,
    dialogue: &LabeledDialogue,
    doc: &GuidelineDocument,
    run_index: u32,
) -> Result<JudgeRun, GatewayError> {
    debug_assert!(
        doc.injection_map.is_empty(),
        "judges must receive the oracle document"
    );
    let n = dialogue.turn_count();
    let original = prompts::chat_judge(doc, &dialogue.turns);
    let mut request = original.clone();
    let mut raw_output = String::new();
    for _attempt in 0..3 {
        let response = gateway.complete(&request)?;
        raw_output = response.content.clone();
        match parse_judge_output(&raw_output, n) {
            Ok(predictions) => {
                return Ok(JudgeRun {
                    dialogue_id: dialogue.dialogue_id.clone(),
                    judge_id: judge_id.to_string(),
                    run_index,
                    mode: JudgeMode::ChatJudge,
                    predictions,
                    unparseable: false,
                    raw_output,
                })
            }
            Err(error) => {
                request = prompts::chat_judge_repair(&original, &raw_output, &error);
            }
        }
    }
    Ok(JudgeRun {
        dialogue_id: dialogue.dialogue_id.clone(),
        judge_id: judge_id.to_string(),
        run_index,
        mode: JudgeMode::ChatJudge,
        predictions: Vec::new(),
        unparseable: true,
        raw_output,
    })
}

/// Strict schema: a JSON array with exactly one object per assistant turn,
/// 1-based turn ids each appearing once, category/key present, phase_index
/// present exactly for workflow refs, boolean violation.
fn parse_judge_output(text: &str, n: usize) -> Result<Vec<TurnPrediction>, String> {
    let value = parse_json_lenient(text).ok_or("no JSON array found")?;
    let items = value.as_array().ok_or("expected a JSON array")?;
    if items.len() != n {
        return Err(format!("expected {n} turn objects, got {}", items.len()));
    }
    let mut slots: Vec<Option<TurnPrediction>> = vec![None; n];
    let mut seen = BTreeSet::new();
    for item in items {
        let turn = item["turn"].as_u64().ok_or("missing integer `turn`")? as usize;
        if turn < 1 || turn > n {
            return Err(format!("turn id {turn} out of range 1..={n}"));
        }
        if !seen.insert(turn) {
            return Err(format!("duplicate turn id {turn}"));
        }
        let category = match item["category"].as_str() {
            Some("workflow") => GuidelineCategory::Workflow,
            Some("condition") => GuidelineCategory::Condition,
            Some("universal") => GuidelineCategory::Universal,
            other => return Err(format!("bad category {other:?}")),
        };
        let key = item["key"]
            .as_str()
            .filter(|k| !k.is_empty())
            .ok_or("missing `key`")?
            .to_string();
        let phase_index = item
            .get("phase_index")
            .and_then(|v| v.as_u64())
            .map(|v| v as usize);
        match (category, phase_index) {
            (GuidelineCategory::Workflow, None) => {
                return Err(format!("workflow ref for turn {turn} lacks phase_index"))
            }
            (GuidelineCategory::Workflow, Some(_)) => {}
            (_, Some(_)) => {
                return Err(format!(
                    "non-workflow ref for turn {turn} carries phase_index"
                ))
            }
            (_, None) => {}
        }
        let violated = item["violation"]
            .as_bool()
            .ok_or("missing boolean `violation`")?;
        slots[turn - 1] = Some(TurnPrediction {
            guideline: Some(GuidelineRef {
                category,
                key,
                phase_index,
            }),
            violated,
            parse_failed: false,
        });
    }
    Ok(slots
        .into_iter()
        .map(|p| p.expect("all turns seen"))
        .collect())
}

/// Repeat chat judging `runs` times over the corpus. Per-dialogue gateway
/// failures are recorded as unparseable runs and the benchmark continues.
pub fn run_benchmark(
    gateway: &Gateway,
    judge_id: &str,
    corpus: &[LabeledDialogue],
    runs: usize,
    workers: usize,
) -> Vec<JudgeRun> {
    let mut tasks = Vec::with_capacity(runs * corpus.len());
    for run_index in 1..=runs as u32 {
        for dialogue in corpus {
            tasks.push((run_index, dialogue));
        }
    }
    parallel_map(
        tasks,
        workers,
        |(run_index, dialogue)| match judge_conversation(
            gateway,
            judge_id,
            dialogue,
            &dialogue.oracle_document,
            run_index,
        ) {
            Ok(run) => run,
            Err(error) => JudgeRun {
                dialogue_id: dialogue.dialogue_id.clone(),
                judge_id: judge_id.to_string(),
                run_index,
                mode: JudgeMode::ChatJudge,
                predictions: Vec::new(),
                unparseable: true,
                raw_output: format!("gateway failure: {error}"),
            },
        },
    )
}

/// Classifier reward model: score the conversation prefix up to each
/// assistant turn; a negative score flags a violation, zero and positive map
/// to compliant. Turns whose score call fails are flagged unparseable.
pub fn reward_classifier_eval(
    gateway: &Gateway,
    judge_id: &str,
    dialogue: &LabeledDialogue,
) -> JudgeRun {
    let mut predictions = Vec::with_capacity(dialogue.turn_count());
    for turn_index in 1..=dialogue.turn_count() {
        let request = prompts::reward_prefix(&dialogue.turns, turn_index);
        match gateway.score(&request) {
            Ok(score) => predictions.push(TurnPrediction {
                guideline: None,
                violated: score < 0.0,
                parse_failed: false,
            }),
            Err(_) => predictions.push(TurnPrediction::unparseable()),
        }
    }
    JudgeRun {
        dialogue_id: dialogue.dialogue_id.clone(),
        judge_id: judge_id.to_string(),
        run_index: 1,
        mode: JudgeMode::RewardClassifier,
        predictions,
        unparseable: false,
        raw_output: String::new(),
    }
}

/// Generative reward model: each assistant turn is presented individually
/// `votes` times; the majority of parsed verdicts decides. A vote that fails
/// to parse abstains; when abstentions leave no strict majority of the
/// configured vote count, the turn is flagged unparseable.
pub fn reward_generative_eval(
    gateway: &Gateway,
    judge_id: &str,
    dialogue: &LabeledDialogue,
    doc: &GuidelineDocument,
    votes: usize,
) -> Result<JudgeRun, GatewayError> {
    let threshold = votes / 2 + 1;
    let mut predictions = Vec::with_capacity(dialogue.turn_count());
    let mut raw_output = String::new();
    for (idx, turn) in dialogue.turns.iter().enumerate() {
        let mut violated_votes = 0usize;
        let mut compliant_votes = 0usize;
        for _ in 0..votes {
            let response = gateway.complete(&prompts::reward_generative(doc, turn, idx + 1))?;
            raw_output.push_str(&response.content);
            raw_output.push('\n');
            match parse_vote(&response.content) {
                Some(true) => violated_votes += 1,
                Some(false) => compliant_votes += 1,
                None => {}
            }
        }
        if violated_votes >= threshold {
            predictions.push(TurnPrediction {
                guideline: None,
                violated: true,
                parse_failed: false,
            });
        } else if compliant_votes >= threshold {
            predictions.push(TurnPrediction {
                guideline: None,
                violated: false,
                parse_failed: false,
            });
        } else {
            predictions.push(TurnPrediction::unparseable());
        }
    }
    Ok(JudgeRun {
        dialogue_id: dialogue.dialogue_id.clone(),
        judge_id: judge_id.to_string(),
        run_index: 1,
        mode: JudgeMode::RewardGenerative,
        predictions,
        unparseable: false,
        raw_output,
    })
}

fn parse_vote(text: &str) -> Option<bool> {
    let upper = text.trim().to_uppercase();
    let violated = upper.contains("VIOLATED");
    let compliant = upper.contains("COMPLIANT");
    match (violated, compliant) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

/// Predictions file: one JudgeRun JSON object per line.
pub fn save_runs(runs: &[JudgeRun], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for run in runs {
        let line = serde_json::to_string(run)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

pub fn load_runs(path: &Path) -> std::io::Result<Vec<JudgeRun>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let run: JudgeRun = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(run);
    }
    Ok(out)
}
