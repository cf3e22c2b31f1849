//! Core data model: guidelines, guideline documents, labeled dialogues, and
//! the JSONL corpus format shared by every pipeline stage.
//!
//! All types are immutable after construction and safe to share across
//! workers. Validation never throws; it reports findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three admitted guideline categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineCategory {
    Universal,
    Workflow,
    Condition,
}

impl fmt::Display for GuidelineCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidelineCategory::Universal => write!(f, "universal"),
            GuidelineCategory::Workflow => write!(f, "workflow"),
            GuidelineCategory::Condition => write!(f, "condition"),
        }
    }
}

/// How an injected variant corrupts its oracle guideline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    WorkflowModified,
    ConditionOmitsAction,
    ConditionAddsConflict,
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::WorkflowModified => write!(f, "workflow_modified"),
            VariantKind::ConditionOmitsAction => write!(f, "condition_omits_action"),
            VariantKind::ConditionAddsConflict => write!(f, "condition_adds_conflict"),
        }
    }
}

/// A single guideline: slug key plus natural-language content.
///
/// Condition guidelines carry both a trigger and an action; the other
/// categories carry neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guideline {
    pub key: String,
    pub content: String,
    pub category: GuidelineCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

impl Guideline {
    pub fn universal(key: impl Into<String>, content: impl Into<String>) -> Self {
        Guideline {
            key: key.into(),
            content: content.into(),
            category: GuidelineCategory::Universal,
            trigger: None,
            action: None,
        }
    }

    pub fn workflow(key: impl Into<String>, content: impl Into<String>) -> Self {
        Guideline {
            key: key.into(),
            content: content.into(),
            category: GuidelineCategory::Workflow,
            trigger: None,
            action: None,
        }
    }

    pub fn condition(
        key: impl Into<String>,
        trigger: impl Into<String>,
        action: impl Into<String>,
    ) -> Self {
        let trigger = trigger.into();
        let action = action.into();
        Guideline {
            key: key.into(),
            content: format!("When {trigger}, {action}"),
            category: GuidelineCategory::Condition,
            trigger: Some(trigger),
            action: Some(action),
        }
    }
}

/// One workflow step: a workflow-category guideline at a 1-based position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub phase_index: usize,
    #[serde(flatten)]
    pub guideline: Guideline,
}

/// An ordered sequence of per-phase guidelines realizing one user intent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    pub workflow_id: String,
    pub intent: String,
    pub phases: Vec<Phase>,
}

impl Workflow {
    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn phase_by_key(&self, key: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.guideline.key == key)
    }

    /// Intent plus all phase text, used as the embedding payload.
    pub fn concatenated_text(&self) -> String {
        let mut out = self.intent.clone();
        for phase in &self.phases {
            out.push('\n');
            out.push_str(&phase.guideline.content);
        }
        out
    }
}

/// The rulebook served to agents and judges: the full universal set, a single
/// workflow, and a subset of condition guidelines. `injection_map` records
/// which keys carry injected variant content (empty for oracle documents).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidelineDocument {
    pub universal: Vec<Guideline>,
    pub workflow: Workflow,
    pub conditions: Vec<Guideline>,
    #[serde(default)]
    pub injection_map: BTreeMap<String, VariantKind>,
}

impl GuidelineDocument {
    /// Look up a guideline's content by key across all three sections.
    pub fn content_for_key(&self, key: &str) -> Option<&str> {
        self.guideline_by_key(key).map(|g| g.content.as_str())
    }

    pub fn guideline_by_key(&self, key: &str) -> Option<&Guideline> {
        self.universal
            .iter()
            .find(|g| g.key == key)
            .or_else(|| self.workflow.phase_by_key(key).map(|p| &p.guideline))
            .or_else(|| self.conditions.iter().find(|g| g.key == key))
    }

    /// Resolve a reference, checking category (and phase for workflow refs).
    pub fn resolve(&self, gref: &GuidelineRef) -> Option<&Guideline> {
        match gref.category {
            GuidelineCategory::Universal => self.universal.iter().find(|g| g.key == gref.key),
            GuidelineCategory::Workflow => {
                let phase = self.workflow.phase_by_key(&gref.key)?;
                match gref.phase_index {
                    Some(idx) if idx == phase.phase_index => Some(&phase.guideline),
                    _ => None,
                }
            }
            GuidelineCategory::Condition => self.conditions.iter().find(|g| g.key == gref.key),
        }
    }

    pub fn all_keys(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.universal.iter().map(|g| g.key.as_str()).collect();
        keys.extend(
            self.workflow
                .phases
                .iter()
                .map(|p| p.guideline.key.as_str()),
        );
        keys.extend(self.conditions.iter().map(|g| g.key.as_str()));
        keys
    }

    /// Fixed canonical text layout: universal first, then numbered workflow
    /// phases, then conditions. Judge prompts embed this rendering so
    /// category/key/phase references are well-defined for the parser.
    pub fn render_canonical(&self) -> String {
        let mut out = String::new();
        out.push_str("## Universal Compliance\n");
        for g in &self.universal {
            out.push_str(&format!("- [{}] {}\n", g.key, g.content));
        }
        out.push_str(&format!(
            "## Workflow: {} ({})\n",
            self.workflow.intent, self.workflow.workflow_id
        ));
        for phase in &self.workflow.phases {
            out.push_str(&format!(
                "{}. [{}] {}\n",
                phase.phase_index, phase.guideline.key, phase.guideline.content
            ));
        }
        out.push_str("## Condition Guidelines\n");
        for g in &self.conditions {
            let trigger = g.trigger.as_deref().unwrap_or("");
            let action = g.action.as_deref().unwrap_or("");
            out.push_str(&format!("- [{}] When {}: {}\n", g.key, trigger, action));
        }
        out
    }
}

/// The (category, key, phase) triple that labels and predictions use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineRef {
    pub category: GuidelineCategory,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_index: Option<usize>,
}

impl GuidelineRef {
    pub fn workflow(key: impl Into<String>, phase_index: usize) -> Self {
        GuidelineRef {
            category: GuidelineCategory::Workflow,
            key: key.into(),
            phase_index: Some(phase_index),
        }
    }

    pub fn condition(key: impl Into<String>) -> Self {
        GuidelineRef {
            category: GuidelineCategory::Condition,
            key: key.into(),
            phase_index: None,
        }
    }

    pub fn universal(key: impl Into<String>) -> Self {
        GuidelineRef {
            category: GuidelineCategory::Universal,
            key: key.into(),
            phase_index: None,
        }
    }
}

/// Ground-truth annotation for one assistant turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnLabel {
    #[serde(flatten)]
    pub guideline: GuidelineRef,
    pub violated: bool,
}

/// One assistant/user exchange. The user message may be empty on the final
/// turn when the simulated user signals completion without a farewell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub assistant: String,
    pub user: String,
}

/// A turn-labeled dialogue plus both the served (possibly injected) document
/// and its oracle counterpart, so evaluation never needs a side lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDialogue {
    pub dialogue_id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
    pub labels: Vec<TurnLabel>,
    pub source_document: GuidelineDocument,
    pub oracle_document: GuidelineDocument,
}

impl LabeledDialogue {
    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }

    pub fn violation_count(&self) -> usize {
        self.labels.iter().filter(|l| l.violated).count()
    }
}

/// A single validation finding; the variants cover every document and
/// dialogue invariant the validator checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DuplicateKey {
        key: String,
    },
    DanglingInjection {
        key: String,
    },
    EmptyKey {
        section: String,
    },
    EmptyContent {
        key: String,
    },
    MalformedCondition {
        key: String,
        detail: String,
    },
    StrayTriggerAction {
        key: String,
    },
    WrongCategory {
        key: String,
        expected: GuidelineCategory,
    },
    EmptyPhases {
        workflow_id: String,
    },
    NonContiguousPhases {
        workflow_id: String,
    },
    TurnLabelMismatch {
        turns: usize,
        labels: usize,
    },
    TurnCountOutOfBounds {
        turns: usize,
        max: usize,
    },
    UnresolvedLabel {
        turn: usize,
        key: String,
    },
    LabelSoundness {
        turn: usize,
        key: String,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateKey { key } => write!(f, "duplicate key `{key}`"),
            Finding::DanglingInjection { key } => {
                write!(f, "injection_map names absent key `{key}`")
            }
            Finding::EmptyKey { section } => write!(f, "empty key in {section} section"),
            Finding::EmptyContent { key } => write!(f, "empty content for `{key}`"),
            Finding::MalformedCondition { key, detail } => {
                write!(f, "condition `{key}` malformed: {detail}")
            }
            Finding::StrayTriggerAction { key } => {
                write!(f, "non-condition `{key}` carries trigger/action")
            }
            Finding::WrongCategory { key, expected } => {
                write!(f, "`{key}` should be category {expected}")
            }
            Finding::EmptyPhases { workflow_id } => {
                write!(f, "workflow `{workflow_id}` has no phases")
            }
            Finding::NonContiguousPhases { workflow_id } => {
                write!(
                    f,
                    "workflow `{workflow_id}` phase indices not contiguous 1..k"
                )
            }
            Finding::TurnLabelMismatch { turns, labels } => {
                write!(f, "{turns} turns but {labels} labels")
            }
            Finding::TurnCountOutOfBounds { turns, max } => {
                write!(f, "turn count {turns} outside 1..={max}")
            }
            Finding::UnresolvedLabel { turn, key } => {
                write!(
                    f,
                    "turn {turn} label `{key}` does not resolve in source document"
                )
            }
            Finding::LabelSoundness { turn, key } => {
                write!(
                    f,
                    "turn {turn}: violated flag disagrees with injection_map membership of `{key}`"
                )
            }
        }
    }
}

/// Every invariant violation found in one pass. Empty report ⟺ well-formed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            write!(f, "ok")
        } else {
            for finding in &self.findings {
                writeln!(f, "- {finding}")?;
            }
            Ok(())
        }
    }
}

/// Check every document invariant; never throws.
pub fn validate_document(doc: &GuidelineDocument) -> ValidationReport {
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();

    let mut check_guideline = |g: &Guideline, expected: GuidelineCategory, section: &str| {
        let mut out = Vec::new();
        if g.key.is_empty() {
            out.push(Finding::EmptyKey {
                section: section.to_string(),
            });
        } else if !seen.insert(g.key.clone()) {
            out.push(Finding::DuplicateKey { key: g.key.clone() });
        }
        if g.content.is_empty() {
            out.push(Finding::EmptyContent { key: g.key.clone() });
        }
        if g.category != expected {
            out.push(Finding::WrongCategory {
                key: g.key.clone(),
                expected,
            });
        }
        match expected {
            GuidelineCategory::Condition => {
                if g.trigger.as_deref().is_none_or(str::is_empty) {
                    out.push(Finding::MalformedCondition {
                        key: g.key.clone(),
                        detail: "missing trigger".to_string(),
                    });
                }
                if g.action.as_deref().is_none_or(str::is_empty) {
                    out.push(Finding::MalformedCondition {
                        key: g.key.clone(),
                        detail: "missing action".to_string(),
                    });
                }
            }
            _ => {
                if g.trigger.is_some() || g.action.is_some() {
                    out.push(Finding::StrayTriggerAction { key: g.key.clone() });
                }
            }
        }
        out
    };

    for g in &doc.universal {
        findings.extend(check_guideline(
            g,
            GuidelineCategory::Universal,
            "universal",
        ));
    }
    for phase in &doc.workflow.phases {
        findings.extend(check_guideline(
            &phase.guideline,
            GuidelineCategory::Workflow,
            "workflow",
        ));
    }
    for g in &doc.conditions {
        findings.extend(check_guideline(
            g,
            GuidelineCategory::Condition,
            "conditions",
        ));
    }

    if doc.workflow.phases.is_empty() {
        findings.push(Finding::EmptyPhases {
            workflow_id: doc.workflow.workflow_id.clone(),
        });
    } else {
        let contiguous = doc
            .workflow
            .phases
            .iter()
            .enumerate()
            .all(|(i, p)| p.phase_index == i + 1);
        if !contiguous {
            findings.push(Finding::NonContiguousPhases {
                workflow_id: doc.workflow.workflow_id.clone(),
            });
        }
    }

    for key in doc.injection_map.keys() {
        if doc.guideline_by_key(key).is_none() {
            findings.push(Finding::DanglingInjection { key: key.clone() });
        }
    }

    ValidationReport { findings }
}

/// Check dialogue invariants: paired lengths, turn bounds, label resolution,
/// and the core soundness guarantee (violated ⟺ key injected).
pub fn validate_dialogue(dialogue: &LabeledDialogue, max_turns: usize) -> ValidationReport {
    let mut findings = validate_document(&dialogue.source_document).findings;

    if dialogue.turns.len() != dialogue.labels.len() {
        findings.push(Finding::TurnLabelMismatch {
            turns: dialogue.turns.len(),
            labels: dialogue.labels.len(),
        });
    }
    if dialogue.turns.is_empty() || dialogue.turns.len() > max_turns {
        findings.push(Finding::TurnCountOutOfBounds {
            turns: dialogue.turns.len(),
            max: max_turns,
        });
    }
    for (i, label) in dialogue.labels.iter().enumerate() {
        let turn = i + 1;
        if dialogue.source_document.resolve(&label.guideline).is_none() {
            findings.push(Finding::UnresolvedLabel {
                turn,
                key: label.guideline.key.clone(),
            });
        }
        let injected = dialogue
            .source_document
            .injection_map
            .contains_key(&label.guideline.key);
        if label.violated != injected {
            findings.push(Finding::LabelSoundness {
                turn,
                key: label.guideline.key.clone(),
            });
        }
    }

    ValidationReport { findings }
}

/// Errors while reading or writing corpora.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// Whether unknown fields in corpus records are rejected or ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Read a JSONL corpus. Every record is parsed and validated; order is
/// preserved. The dialogue turn bound is not known here, so only the lower
/// bound (N ≥ 1) is enforced at load time.
pub fn load_corpus(path: &Path, mode: ParseMode) -> Result<Vec<LabeledDialogue>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        out.push(parse_record(&line, line_no, mode)?);
    }
    Ok(out)
}

/// Parse one corpus line, enforcing the exact field schema in strict mode.
pub fn parse_record(
    line: &str,
    line_no: usize,
    mode: ParseMode,
) -> Result<LabeledDialogue, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRecord {
        line: line_no,
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if mode == ParseMode::Strict {
        schema::check_record(&value).map_err(&malformed)?;
    }
    let dialogue: LabeledDialogue =
        serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    let report = validate_dialogue(&dialogue, usize::MAX);
    if !report.is_empty() {
        return Err(malformed(format!("validation failed: {report}")));
    }
    Ok(dialogue)
}

/// Write a JSONL corpus; `load_corpus` on the result returns an equal list.
/// Dialogues are validated first so the file is always loadable.
pub fn save_corpus(dialogues: &[LabeledDialogue], path: &Path) -> Result<(), CorpusError> {
    for (idx, dialogue) in dialogues.iter().enumerate() {
        let report = validate_dialogue(dialogue, usize::MAX);
        if !report.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: idx + 1,
                reason: format!("refusing to save invalid dialogue: {report}"),
            });
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for dialogue in dialogues {
        let line = serde_json::to_string(dialogue)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

mod schema {
    //! Recursive known-field check for strict corpus parsing.

    use serde_json::Value;

    fn check_keys(obj: &Value, known: &[&str], ctx: &str) -> Result<(), String> {
        let map = obj
            .as_object()
            .ok_or_else(|| format!("{ctx}: expected object"))?;
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(format!("{ctx}: unknown field `{key}`"));
            }
        }
        Ok(())
    }

    fn check_guideline(v: &Value, ctx: &str, extra: &[&str]) -> Result<(), String> {
        let mut known = vec!["key", "content", "category", "trigger", "action"];
        known.extend_from_slice(extra);
        check_keys(v, &known, ctx)
    }

    fn check_document(v: &Value, ctx: &str) -> Result<(), String> {
        check_keys(
            v,
            &["universal", "workflow", "conditions", "injection_map"],
            ctx,
        )?;
        if let Some(items) = v.get("universal").and_then(Value::as_array) {
            for g in items {
                check_guideline(g, &format!("{ctx}.universal"), &[])?;
            }
        }
        if let Some(wf) = v.get("workflow") {
            check_keys(
                wf,
                &["workflow_id", "intent", "phases"],
                &format!("{ctx}.workflow"),
            )?;
            if let Some(phases) = wf.get("phases").and_then(Value::as_array) {
                for p in phases {
                    check_guideline(p, &format!("{ctx}.workflow.phases"), &["phase_index"])?;
                }
            }
        }
        if let Some(items) = v.get("conditions").and_then(Value::as_array) {
            for g in items {
                check_guideline(g, &format!("{ctx}.conditions"), &[])?;
            }
        }
        Ok(())
    }

    pub fn check_record(v: &Value) -> Result<(), String> {
        check_keys(
            v,
            &[
                "dialogue_id",
                "domain",
                "turns",
                "labels",
                "source_document",
                "oracle_document",
            ],
            "record",
        )?;
        if let Some(turns) = v.get("turns").and_then(Value::as_array) {
            for t in turns {
                check_keys(t, &["assistant", "user"], "turns")?;
            }
        }
        if let Some(labels) = v.get("labels").and_then(Value::as_array) {
            for l in labels {
                check_keys(l, &["category", "key", "phase_index", "violated"], "labels")?;
            }
        }
        for field in ["source_document", "oracle_document"] {
            if let Some(doc) = v.get(field) {
                check_document(doc, field)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_workflow() -> Workflow {
        Workflow {
            workflow_id: "book_flight_v1".into(),
            intent: "book flight".into(),
            phases: (1..=3)
                .map(|i| Phase {
                    phase_index: i,
                    guideline: Guideline::workflow(
                        format!("book_flight_v1_step_{i}"),
                        format!("Carry out step {i} of the booking flow"),
                    ),
                })
                .collect(),
        }
    }

    pub(crate) fn sample_document() -> GuidelineDocument {
        GuidelineDocument {
            universal: vec![Guideline::universal("be_empathetic", "Always show empathy")],
            workflow: sample_workflow(),
            conditions: vec![Guideline::condition(
                "human_agent_request",
                "the user requests a human agent",
                "transfer immediately",
            )],
            injection_map: BTreeMap::new(),
        }
    }

    fn sample_dialogue() -> LabeledDialogue {
        let doc = sample_document();
        LabeledDialogue {
            dialogue_id: "dlg_00001".into(),
            domain: "airline".into(),
            turns: vec![
                Turn {
                    assistant: "Hello, how can I help?".into(),
                    user: "I want to book a flight.".into(),
                },
                Turn {
                    assistant: "Where are you flying to?".into(),
                    user: "Lisbon.".into(),
                },
            ],
            labels: vec![
                TurnLabel {
                    guideline: GuidelineRef::workflow("book_flight_v1_step_1", 1),
                    violated: false,
                },
                TurnLabel {
                    guideline: GuidelineRef::workflow("book_flight_v1_step_2", 2),
                    violated: false,
                },
            ],
            source_document: doc.clone(),
            oracle_document: doc,
        }
    }

    #[test]
    fn well_formed_document_has_empty_report() {
        assert!(validate_document(&sample_document()).is_empty());
    }

    #[test]
    fn duplicate_key_across_sections_is_one_finding() {
        let mut doc = sample_document();
        doc.conditions.push(Guideline::condition(
            "book_flight_v1_step_2",
            "something",
            "do something",
        ));
        let report = validate_document(&doc);
        assert_eq!(
            report.findings,
            vec![Finding::DuplicateKey {
                key: "book_flight_v1_step_2".into()
            }]
        );
    }

    #[test]
    fn dangling_injection_is_reported() {
        let mut doc = sample_document();
        doc.injection_map
            .insert("no_such_key".into(), VariantKind::WorkflowModified);
        let report = validate_document(&doc);
        assert_eq!(
            report.findings,
            vec![Finding::DanglingInjection {
                key: "no_such_key".into()
            }]
        );
    }

    #[test]
    fn condition_without_trigger_is_malformed() {
        let mut doc = sample_document();
        doc.conditions[0].trigger = None;
        let report = validate_document(&doc);
        assert!(report
            .findings
            .iter()
            .any(|f| matches!(f, Finding::MalformedCondition { .. })));
    }

    #[test]
    fn non_contiguous_phases_flagged() {
        let mut doc = sample_document();
        doc.workflow.phases[2].phase_index = 5;
        let report = validate_document(&doc);
        assert!(report
            .findings
            .iter()
            .any(|f| matches!(f, Finding::NonContiguousPhases { .. })));
    }

    #[test]
    fn validation_is_pure() {
        let doc = sample_document();
        assert_eq!(validate_document(&doc), validate_document(&doc));
    }

    #[test]
    fn label_soundness_violation_detected() {
        let mut dialogue = sample_dialogue();
        dialogue.labels[0].violated = true; // key not in injection_map
        let report = validate_dialogue(&dialogue, 20);
        assert!(report
            .findings
            .iter()
            .any(|f| matches!(f, Finding::LabelSoundness { turn: 1, .. })));
    }

    #[test]
    fn corpus_round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let dialogues = vec![sample_dialogue(), sample_dialogue()];
        save_corpus(&dialogues, &path).unwrap();
        let loaded = load_corpus(&path, ParseMode::Strict).unwrap();
        assert_eq!(loaded, dialogues);
    }

    #[test]
    fn empty_file_loads_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path, ParseMode::Strict).unwrap().is_empty());
    }

    #[test]
    fn saving_invalid_dialogue_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut dialogue = sample_dialogue();
        dialogue.labels[1].violated = true; // breaks label soundness
        let err = save_corpus(&[dialogue], &path).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 1, .. }));
        assert!(!path.exists());
    }

    #[test]
    fn saving_empty_list_writes_zero_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("none.jsonl");
        save_corpus(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(load_corpus(&path, ParseMode::Strict).unwrap().is_empty());
    }

    #[test]
    fn mismatched_lengths_is_malformed_record() {
        let mut dialogue = sample_dialogue();
        dialogue.labels.pop();
        let line = serde_json::to_string(&dialogue).unwrap();
        let err = parse_record(&line, 3, ParseMode::Strict).unwrap_err();
        match err {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_field_rejected_in_strict_mode_only() {
        let mut value = serde_json::to_value(sample_dialogue()).unwrap();
        value["extra_field"] = serde_json::json!(1);
        let line = serde_json::to_string(&value).unwrap();
        assert!(parse_record(&line, 1, ParseMode::Strict).is_err());
        assert!(parse_record(&line, 1, ParseMode::Lenient).is_ok());
    }

    #[test]
    fn missing_file_is_io_failure() {
        let err =
            load_corpus(Path::new("/nonexistent/corpus.jsonl"), ParseMode::Strict).unwrap_err();
        assert!(matches!(err, CorpusError::IoFailure(_)));
    }

    #[test]
    fn canonical_rendering_is_stable() {
        let doc = sample_document();
        let rendered = doc.render_canonical();
        assert!(rendered.contains("## Universal Compliance"));
        assert!(rendered.contains("1. [book_flight_v1_step_1]"));
        assert!(rendered.contains(
            "- [human_agent_request] When the user requests a human agent: transfer immediately"
        ));
        assert_eq!(rendered, doc.render_canonical());
    }
}
