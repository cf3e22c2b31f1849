//! Violation variant generation and adversarial optimization.
//!
//! Candidates are generated under three constraints (text-observable change,
//! strict mutual exclusivity, full case coverage), then optimized by an
//! adversarial judge-and-refine loop: a variant is kept only when the content
//! judge confirms a real behavior change and the compliance judge, shown the
//! original oracle guideline, fails to detect the violation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Registry, Role};
use crate::gateway::GatewayError;
use crate::model::{Guideline, GuidelineCategory, LabeledDialogue, Turn, VariantKind};
use crate::prompts::{self, tags};
use crate::scaling::GuidelinePool;
use crate::util::parse_json_lenient;

/// Batch size `n` and the round budget of the adversarial loop.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForgeConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// Evaluate the whole batch even after an acceptance.
    #[serde(default)]
    pub harvest_all: bool,
    /// Screen generated candidates with the constraint judges before the
    /// adversarial loop; eligible candidates seed round one.
    #[serde(default = "default_prefilter")]
    pub constraint_prefilter: bool,
}

fn default_batch() -> usize {
    4
}
fn default_rounds() -> usize {
    3
}
fn default_prefilter() -> bool {
    true
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            batch_size: default_batch(),
            max_rounds: default_rounds(),
            harvest_all: false,
            constraint_prefilter: default_prefilter(),
        }
    }
}

/// Why an accepted variant was accepted: the round, both judge verdicts, and
/// the feedback that conditioned its generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub round: u32,
    pub content_judge_verdict: bool,
    pub compliance_judge_verdict: bool,
    #[serde(default)]
    pub feedback_used: Vec<String>,
}

/// A corrupted guideline linked to its oracle key. Condition variants carry
/// the (preserved) trigger and the modified action; `acceptance` is present
/// exactly on variants that survived the adversarial loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationVariant {
    pub oracle_key: String,
    pub kind: VariantKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceRecord>,
}

/// Verdicts of the three generation constraints. A candidate is eligible for
/// optimization only when all three hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub text_observable: bool,
    pub mutually_exclusive: bool,
    pub case_coverage: bool,
    pub notes: String,
}

impl ConstraintReport {
    pub fn eligible(&self) -> bool {
        self.text_observable && self.mutually_exclusive && self.case_coverage
    }
}

/// Accepted variants per oracle key; the `variants.json` payload.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariantStore {
    pub variants: BTreeMap<String, Vec<ViolationVariant>>,
}

impl VariantStore {
    pub fn insert(&mut self, variant: ViolationVariant) {
        self.variants
            .entry(variant.oracle_key.clone())
            .or_default()
            .push(variant);
    }

    pub fn for_key(&self, key: &str) -> &[ViolationVariant] {
        self.variants.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_variants(&self, key: &str) -> bool {
        !self.for_key(key).is_empty()
    }

    pub fn len(&self) -> usize {
        self.variants.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self, ForgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ForgeError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ForgeError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ForgeError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ForgeError::Io(e.to_string()))?;
        }
        let text = serde_json::to_string_pretty(self).expect("variant store serializes");
        std::fs::write(path, text).map_err(|e| ForgeError::Io(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("malformed variant output: {0}")]
    MalformedVariant(String),
    #[error("oracle guideline `{key}` has category {actual}, expected {expected}")]
    WrongCategory {
        key: String,
        actual: GuidelineCategory,
        expected: GuidelineCategory,
    },
    #[error("turn {turn} of `{dialogue}` is not governed by oracle `{key}`")]
    OracleNotApplied {
        dialogue: String,
        turn: usize,
        key: String,
    },
    #[error("io failure: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A candidate before judging: the variant plus its regenerated reply when
/// the generator produced both in one call.
struct CandidateDraft {
    variant: ViolationVariant,
    reply: Option<String>,
}

pub struct ForgeEngine<'a> {
    registry: &'a Registry,
    config: ForgeConfig,
}

impl<'a> ForgeEngine<'a> {
    pub fn new(registry: &'a Registry, config: ForgeConfig) -> Self {
        ForgeEngine { registry, config }
    }

    /// Generate a batch of modified workflow guidelines strictly incompatible
    /// with the oracle; the prompt carries accumulated judge feedback and all
    /// three constraint instructions.
    pub fn generate_workflow_variants(
        &self,
        oracle: &Guideline,
        feedback: &[String],
    ) -> Result<Vec<ViolationVariant>, ForgeError> {
        if oracle.category != GuidelineCategory::Workflow {
            return Err(ForgeError::WrongCategory {
                key: oracle.key.clone(),
                actual: oracle.category,
                expected: GuidelineCategory::Workflow,
            });
        }
        let gateway = self.registry.gateway(Role::Generator)?;
        let count = self.config.batch_size;
        let mut last = String::new();
        for _ in 0..3 {
            let response =
                gateway.complete(&prompts::forge_generate(&oracle.content, count, feedback))?;
            last = response.content.clone();
            if let Some(items) = parse_json_lenient(&response.content).and_then(|v| {
                v.as_array().map(|a| {
                    a.iter()
                        .filter_map(|s| s.as_str().map(str::to_string))
                        .filter(|s| !s.is_empty())
                        .collect::<Vec<_>>()
                })
            }) {
                if items.len() >= count {
                    return Ok(items
                        .into_iter()
                        .take(count)
                        .map(|content| ViolationVariant {
                            oracle_key: oracle.key.clone(),
                            kind: VariantKind::WorkflowModified,
                            content,
                            trigger: None,
                            action: None,
                            acceptance: None,
                        })
                        .collect());
                }
            }
        }
        Err(ForgeError::MalformedVariant(last))
    }

    /// Generate one condition variant that either omits the triggered action
    /// or adds conflicting behavior. The trigger text must survive verbatim.
    pub fn generate_condition_variant(
        &self,
        oracle: &Guideline,
    ) -> Result<ViolationVariant, ForgeError> {
        if oracle.category != GuidelineCategory::Condition {
            return Err(ForgeError::WrongCategory {
                key: oracle.key.clone(),
                actual: oracle.category,
                expected: GuidelineCategory::Condition,
            });
        }
        let trigger = oracle.trigger.clone().unwrap_or_default();
        let action = oracle.action.clone().unwrap_or_default();
        let gateway = self.registry.gateway(Role::Generator)?;
        let mut last = String::new();
        for _ in 0..3 {
            let response = gateway.complete(&prompts::forge_condition(&trigger, &action))?;
            last = response.content.clone();
            match parse_condition_variant(&response.content, oracle, &trigger) {
                Ok(variant) => return Ok(variant),
                Err(_) => continue,
            }
        }
        Err(ForgeError::MalformedVariant(last))
    }

    /// One judge call per constraint; a verdict that fails to parse counts
    /// as a failed constraint.
    pub fn check_constraints(
        &self,
        oracle: &Guideline,
        variant: &ViolationVariant,
    ) -> Result<ConstraintReport, ForgeError> {
        let gateway = self.registry.gateway(Role::Judge(0))?;
        let mut verdicts = [false; 3];
        let mut notes = Vec::new();
        for (i, tag) in [
            tags::CONSTRAINT_TEXT_OBSERVABLE,
            tags::CONSTRAINT_MUTUAL_EXCLUSION,
            tags::CONSTRAINT_CASE_COVERAGE,
        ]
        .into_iter()
        .enumerate()
        {
            let response = gateway.complete(&prompts::constraint_check(
                tag,
                &oracle.content,
                &variant.content,
            ))?;
            match parse_json_lenient(&response.content) {
                Some(value) => {
                    verdicts[i] = value["pass"].as_bool().unwrap_or(false);
                    if let Some(note) = value["note"].as_str() {
                        if !note.is_empty() {
                            notes.push(note.to_string());
                        }
                    }
                }
                None => notes.push(format!("{tag}: unparseable verdict")),
            }
        }
        Ok(ConstraintReport {
            text_observable: verdicts[0],
            mutually_exclusive: verdicts[1],
            case_coverage: verdicts[2],
            notes: notes.join("; "),
        })
    }

    /// The adversarial judge-and-refine loop for one oracle guideline applied
    /// at one turn of a seed conversation.
    ///
    /// Per round, up to `batch_size` candidates are drawn (each generated
    /// together with its regenerated reply in a single call, conditioned on
    /// the feedback accumulated in earlier rounds), then judged: the content
    /// judge compares the original and regenerated replies ignoring wording
    /// and tone; the compliance judge sees the original oracle plus the
    /// modified conversation. A candidate is accepted on
    /// (changed ∧ ¬detected); otherwise both judges' feedback joins the pool.
    pub fn adversarial_optimize(
        &self,
        oracle: &Guideline,
        seed_conversation: &LabeledDialogue,
        turn_index: usize,
    ) -> Result<Vec<ViolationVariant>, ForgeError> {
        self.adversarial_optimize_seeded(oracle, seed_conversation, turn_index, Vec::new())
    }

    /// As `adversarial_optimize`, but candidates that already passed the
    /// constraint pre-filter seed round one (their replies are regenerated by
    /// the assistant role).
    pub fn adversarial_optimize_seeded(
        &self,
        oracle: &Guideline,
        seed_conversation: &LabeledDialogue,
        turn_index: usize,
        initial_candidates: Vec<ViolationVariant>,
    ) -> Result<Vec<ViolationVariant>, ForgeError> {
        let labels = &seed_conversation.labels;
        let applied = turn_index >= 1
            && turn_index <= labels.len()
            && labels[turn_index - 1].guideline.key == oracle.key;
        if !applied {
            return Err(ForgeError::OracleNotApplied {
                dialogue: seed_conversation.dialogue_id.clone(),
                turn: turn_index,
                key: oracle.key.clone(),
            });
        }
        let history = &seed_conversation.turns[..turn_index - 1];
        let original_reply = &seed_conversation.turns[turn_index - 1].assistant;
        let trigger = oracle.trigger.clone().unwrap_or_default();

        let mut feedback: Vec<String> = Vec::new();
        let mut accepted: Vec<ViolationVariant> = Vec::new();
        let seeds = initial_candidates;

        'rounds: for round in 1..=self.config.max_rounds as u32 {
            let round_feedback = feedback.clone();
            for slot in 0..self.config.batch_size {
                let draft = if round == 1 && slot < seeds.len() {
                    Some(CandidateDraft {
                        variant: seeds[slot].clone(),
                        reply: None,
                    })
                } else {
                    self.generate_candidate(
                        oracle,
                        history,
                        original_reply,
                        &round_feedback,
                        &trigger,
                    )?
                };
                // an unparseable candidate generation consumes its slot
                let Some(draft) = draft else { continue };

                let reply = match draft.reply {
                    Some(reply) => reply,
                    None => {
                        let gateway = self.registry.gateway(Role::Assistant)?;
                        gateway
                            .complete(&prompts::forge_reply(&draft.variant.content, history))?
                            .content
                    }
                };

                let (changed, f1) = self.content_judge_verdict(original_reply, &reply)?;
                let mut modified_turns: Vec<Turn> = seed_conversation.turns.clone();
                modified_turns[turn_index - 1].assistant = reply;
                let (detected, f2) =
                    self.compliance_judge_verdict(&oracle.content, &modified_turns, turn_index)?;

                if changed && !detected {
                    let mut variant = draft.variant;
                    variant.acceptance = Some(AcceptanceRecord {
                        round,
                        content_judge_verdict: true,
                        compliance_judge_verdict: false,
                        feedback_used: round_feedback.clone(),
                    });
                    accepted.push(variant);
                    if !self.config.harvest_all {
                        return Ok(accepted);
                    }
                } else {
                    feedback.push(f1);
                    feedback.push(f2);
                }
            }
            if self.config.harvest_all && !accepted.is_empty() {
                break 'rounds;
            }
        }
        Ok(accepted)
    }

    /// One call producing the candidate variant together with its regenerated
    /// reply. Returns None when the output is unparseable.
    fn generate_candidate(
        &self,
        oracle: &Guideline,
        history: &[Turn],
        original_reply: &str,
        feedback: &[String],
        trigger: &str,
    ) -> Result<Option<CandidateDraft>, ForgeError> {
        let gateway = self.registry.gateway(Role::Generator)?;
        let response = gateway.complete(&prompts::forge_candidate(
            oracle,
            history,
            original_reply,
            feedback,
        ))?;
        let Some(value) = parse_json_lenient(&response.content) else {
            return Ok(None);
        };
        let reply = value["reply"].as_str().unwrap_or_default().to_string();
        if reply.is_empty() {
            return Ok(None);
        }
        let variant = match oracle.category {
            GuidelineCategory::Condition => match parse_condition_fields(&value, oracle, trigger) {
                Some(variant) => variant,
                None => return Ok(None),
            },
            _ => {
                let content = value["guideline"].as_str().unwrap_or_default().to_string();
                if content.is_empty() {
                    return Ok(None);
                }
                ViolationVariant {
                    oracle_key: oracle.key.clone(),
                    kind: VariantKind::WorkflowModified,
                    content,
                    trigger: None,
                    action: None,
                    acceptance: None,
                }
            }
        };
        Ok(Some(CandidateDraft {
            variant,
            reply: Some(reply),
        }))
    }

    /// Judge parse failures count as (changed = false), i.e. rejection.
    fn content_judge_verdict(
        &self,
        original: &str,
        regenerated: &str,
    ) -> Result<(bool, String), ForgeError> {
        let gateway = self.registry.gateway(Role::Judge(0))?;
        let response = gateway.complete(&prompts::content_judge(original, regenerated))?;
        Ok(match parse_json_lenient(&response.content) {
            Some(value) => (
                value["changed"].as_bool().unwrap_or(false),
                value["feedback"]
                    .as_str()
                    .unwrap_or("no content-judge feedback")
                    .to_string(),
            ),
            None => (false, "unparseable content-judge output".to_string()),
        })
    }

    /// Judge parse failures count as (detected = true), i.e. rejection.
    fn compliance_judge_verdict(
        &self,
        oracle_content: &str,
        turns: &[Turn],
        turn_index: usize,
    ) -> Result<(bool, String), ForgeError> {
        let gateway = self.registry.gateway(Role::Judge(1))?;
        let response = gateway.complete(&prompts::adversarial_compliance_judge(
            oracle_content,
            turns,
            turn_index,
        ))?;
        Ok(match parse_json_lenient(&response.content) {
            Some(value) => (
                value["detected"].as_bool().unwrap_or(true),
                value["feedback"]
                    .as_str()
                    .unwrap_or("no compliance-judge feedback")
                    .to_string(),
            ),
            None => (true, "unparseable compliance-judge output".to_string()),
        })
    }

    /// Full forge stage: for every oracle guideline applied somewhere in the
    /// seed corpus, optionally pre-filter generated candidates through the
    /// constraint judges, then run the adversarial loop turn by turn until
    /// one turn yields accepted variants.
    pub fn forge_all(
        &self,
        pool: &GuidelinePool,
        seed_corpus: &[LabeledDialogue],
    ) -> Result<VariantStore, ForgeError> {
        let mut store = VariantStore::default();
        // key -> (dialogue index, applied turn indices)
        let mut applications: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for (d_idx, dialogue) in seed_corpus.iter().enumerate() {
            for (t_idx, label) in dialogue.labels.iter().enumerate() {
                applications
                    .entry(label.guideline.key.clone())
                    .or_default()
                    .push((d_idx, t_idx + 1));
            }
        }
        for (key, turns) in &applications {
            let Some(oracle) = lookup_pool_guideline(pool, key) else {
                continue;
            };
            let seeds = if self.config.constraint_prefilter {
                let candidates = match oracle.category {
                    GuidelineCategory::Workflow => self.generate_workflow_variants(oracle, &[])?,
                    GuidelineCategory::Condition => vec![self.generate_condition_variant(oracle)?],
                    GuidelineCategory::Universal => continue,
                };
                let mut eligible = Vec::new();
                for candidate in candidates {
                    if self.check_constraints(oracle, &candidate)?.eligible() {
                        eligible.push(candidate);
                    }
                }
                eligible
            } else {
                Vec::new()
            };
            for (d_idx, turn) in turns {
                let accepted = self.adversarial_optimize_seeded(
                    oracle,
                    &seed_corpus[*d_idx],
                    *turn,
                    seeds.clone(),
                )?;
                if !accepted.is_empty() {
                    for variant in accepted {
                        store.insert(variant);
                    }
                    break; // first accepting turn wins for this guideline
                }
            }
        }
        Ok(store)
    }
}

fn lookup_pool_guideline<'p>(pool: &'p GuidelinePool, key: &str) -> Option<&'p Guideline> {
    for workflow in &pool.workflows {
        if let Some(phase) = workflow.phase_by_key(key) {
            return Some(&phase.guideline);
        }
    }
    pool.conditions.iter().find(|g| g.key == key)
}

fn parse_condition_variant(
    text: &str,
    oracle: &Guideline,
    expected_trigger: &str,
) -> Result<ViolationVariant, ForgeError> {
    let value =
        parse_json_lenient(text).ok_or_else(|| ForgeError::MalformedVariant(text.into()))?;
    parse_condition_fields(&value, oracle, expected_trigger)
        .ok_or_else(|| ForgeError::MalformedVariant(text.into()))
}

/// Condition variant payload: the trigger must match the oracle verbatim.
fn parse_condition_fields(
    value: &serde_json::Value,
    oracle: &Guideline,
    expected_trigger: &str,
) -> Option<ViolationVariant> {
    let kind = match value["kind"].as_str()? {
        "omit_action" => VariantKind::ConditionOmitsAction,
        "add_conflict" => VariantKind::ConditionAddsConflict,
        _ => return None,
    };
    let trigger = value["trigger"].as_str()?;
    let action = value["action"].as_str()?;
    if trigger != expected_trigger || action.is_empty() {
        return None;
    }
    Some(ViolationVariant {
        oracle_key: oracle.key.clone(),
        kind,
        content: format!("When {trigger}, {action}"),
        trigger: Some(trigger.to_string()),
        action: Some(action.to_string()),
        acceptance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Matcher, ScriptedBackend};
    use crate::model::{GuidelineDocument, GuidelineRef, TurnLabel, Workflow};

    fn oracle_workflow_guideline() -> Guideline {
        Guideline::workflow("wf_a_p1", "provide at most 3 options")
    }

    fn oracle_condition_guideline() -> Guideline {
        Guideline::condition(
            "human_agent_request",
            "user requests a human agent",
            "transfer immediately",
        )
    }

    fn seed_dialogue(oracle: &Guideline) -> LabeledDialogue {
        let workflow = Workflow {
            workflow_id: "wf_a".into(),
            intent: "demo".into(),
            phases: vec![crate::model::Phase {
                phase_index: 1,
                guideline: oracle_workflow_guideline(),
            }],
        };
        let doc = GuidelineDocument {
            universal: vec![],
            workflow,
            conditions: vec![oracle_condition_guideline()],
            injection_map: BTreeMap::new(),
        };
        let guideline_ref = match oracle.category {
            GuidelineCategory::Condition => GuidelineRef::condition(oracle.key.clone()),
            _ => GuidelineRef::workflow(oracle.key.clone(), 1),
        };
        LabeledDialogue {
            dialogue_id: "seed_0".into(),
            domain: "airline".into(),
            turns: vec![Turn {
                assistant: "Here are three options for you.".into(),
                user: "Thanks.".into(),
            }],
            labels: vec![TurnLabel {
                guideline: guideline_ref,
                violated: false,
            }],
            source_document: doc.clone(),
            oracle_document: doc,
        }
    }

    fn engine(backend: ScriptedBackend, config: ForgeConfig) -> (Registry, ForgeConfig) {
        (Registry::uniform(backend), config)
    }

    #[test]
    fn batch_generation_respects_n_and_feedback_reaches_prompt() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_GENERATE),
                r#"["must provide exactly 5 options"]"#,
            )
            .build();
        let (registry, config) = engine(
            backend,
            ForgeConfig {
                batch_size: 1,
                ..ForgeConfig::default()
            },
        );
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let variants = forge
            .generate_workflow_variants(&oracle, &["too similar".into()])
            .unwrap();
        assert_eq!(variants.len(), 1);
        assert_eq!(variants[0].kind, VariantKind::WorkflowModified);
        let records = registry.audit().records();
        assert!(records[0].request_text.contains("too similar"));
        assert!(records[0]
            .request_text
            .contains("provide at most 3 options"));
    }

    #[test]
    fn condition_variant_keeps_trigger_verbatim() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CONDITION),
                r#"{"kind": "omit_action", "trigger": "user requests a human agent", "action": "continue assisting in chat"}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let variant = forge
            .generate_condition_variant(&oracle_condition_guideline())
            .unwrap();
        assert_eq!(variant.kind, VariantKind::ConditionOmitsAction);
        assert_eq!(
            variant.trigger.as_deref(),
            Some("user requests a human agent")
        );
        assert_eq!(
            variant.action.as_deref(),
            Some("continue assisting in chat")
        );
    }

    #[test]
    fn altered_trigger_is_malformed() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CONDITION),
                r#"{"kind": "omit_action", "trigger": "user is upset", "action": "do nothing"}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let err = forge
            .generate_condition_variant(&oracle_condition_guideline())
            .unwrap_err();
        assert!(matches!(err, ForgeError::MalformedVariant(_)));
    }

    #[test]
    fn add_conflict_kind_is_recorded() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CONDITION),
                r#"{"kind": "add_conflict", "trigger": "user requests a human agent", "action": "transfer immediately and also upsell a premium plan"}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let variant = forge
            .generate_condition_variant(&oracle_condition_guideline())
            .unwrap();
        assert_eq!(variant.kind, VariantKind::ConditionAddsConflict);
    }

    #[test]
    fn subset_trap_fails_mutual_exclusivity() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::CONSTRAINT_TEXT_OBSERVABLE),
                r#"{"pass": true, "note": "asks a different count"}"#,
            )
            .entry(
                Matcher::tag(tags::CONSTRAINT_MUTUAL_EXCLUSION),
                r#"{"pass": false, "note": "only 2 options still satisfies at most 3"}"#,
            )
            .entry(
                Matcher::tag(tags::CONSTRAINT_CASE_COVERAGE),
                r#"{"pass": true, "note": "single case"}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let variant = ViolationVariant {
            oracle_key: oracle.key.clone(),
            kind: VariantKind::WorkflowModified,
            content: "provide at only 2 options".into(),
            trigger: None,
            action: None,
            acceptance: None,
        };
        let report = forge.check_constraints(&oracle, &variant).unwrap();
        assert!(!report.mutually_exclusive);
        assert!(report.text_observable);
        assert!(!report.eligible());
    }

    #[test]
    fn rephrasing_and_partial_coverage_fail_their_constraints() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::CONSTRAINT_TEXT_OBSERVABLE),
                r#"{"pass": false, "note": "same behavior in new words"}"#,
            )
            .entry(
                Matcher::tag(tags::CONSTRAINT_MUTUAL_EXCLUSION),
                r#"{"pass": true, "note": "wording differs"}"#,
            )
            .entry(
                Matcher::tag(tags::CONSTRAINT_CASE_COVERAGE),
                r#"{"pass": false, "note": "handles 1 of the oracle's 2 cases"}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let variant = ViolationVariant {
            oracle_key: oracle.key.clone(),
            kind: VariantKind::WorkflowModified,
            content: "kindly provide no more than three options".into(),
            trigger: None,
            action: None,
            acceptance: None,
        };
        let report = forge.check_constraints(&oracle, &variant).unwrap();
        assert!(!report.text_observable);
        assert!(!report.case_coverage);
        assert!(!report.eligible());
        assert!(report.notes.contains("same behavior"));
    }

    #[test]
    fn unparseable_constraint_verdict_counts_as_fail() {
        let backend = ScriptedBackend::builder("s")
            .entry(Matcher::tag(tags::CONSTRAINT_TEXT_OBSERVABLE), "sure, fine")
            .entry(
                Matcher::tag(tags::CONSTRAINT_MUTUAL_EXCLUSION),
                r#"{"pass": true}"#,
            )
            .entry(
                Matcher::tag(tags::CONSTRAINT_CASE_COVERAGE),
                r#"{"pass": true}"#,
            )
            .build();
        let (registry, config) = engine(backend, ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let variant = ViolationVariant {
            oracle_key: oracle.key.clone(),
            kind: VariantKind::WorkflowModified,
            content: "x".into(),
            trigger: None,
            action: None,
            acceptance: None,
        };
        let report = forge.check_constraints(&oracle, &variant).unwrap();
        assert!(!report.text_observable);
        assert!(!report.eligible());
    }

    fn accepting_backend() -> ScriptedBackend {
        ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CANDIDATE),
                r#"{"guideline": "must provide exactly 5 options", "reply": "Here are five options."}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_CONTENT_JUDGE),
                r#"{"changed": true, "feedback": "option count differs"}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_COMPLIANCE_JUDGE),
                r#"{"detected": false, "feedback": "looks compliant"}"#,
            )
            .build()
    }

    #[test]
    fn acceptance_in_round_one_stops_immediately() {
        let (registry, config) = engine(accepting_backend(), ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let dialogue = seed_dialogue(&oracle);
        let accepted = forge.adversarial_optimize(&oracle, &dialogue, 1).unwrap();
        assert_eq!(accepted.len(), 1);
        let acceptance = accepted[0].acceptance.as_ref().unwrap();
        assert_eq!(acceptance.round, 1);
        assert!(acceptance.content_judge_verdict);
        assert!(!acceptance.compliance_judge_verdict);
        // candidate 1: one generation call + two judge calls, then stop
        assert_eq!(registry.audit().len(), 3);
    }

    #[test]
    fn all_detected_for_three_rounds_yields_empty_and_grows_feedback() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CANDIDATE),
                r#"{"guideline": "changed but obvious", "reply": "A clearly deviant reply."}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_CONTENT_JUDGE),
                r#"{"changed": true, "feedback": "content feedback"}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_COMPLIANCE_JUDGE),
                r#"{"detected": true, "feedback": "compliance feedback"}"#,
            )
            .build();
        let config = ForgeConfig {
            batch_size: 2,
            ..ForgeConfig::default()
        };
        let (registry, config) = engine(backend, config);
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let dialogue = seed_dialogue(&oracle);
        let accepted = forge.adversarial_optimize(&oracle, &dialogue, 1).unwrap();
        assert!(accepted.is_empty());
        // 3 rounds x 2 candidates x 3 calls
        assert_eq!(registry.audit().len(), 18);
        // feedback grows by 2 per rejected candidate: final round's generation
        // prompts carry feedback from the first two rounds (4 candidates x 2)
        let records = registry.audit().records();
        let generation_prompts: Vec<_> = records
            .iter()
            .filter(|r| r.tag == tags::FORGE_CANDIDATE)
            .collect();
        let last_gen = generation_prompts.last().unwrap();
        assert_eq!(last_gen.request_text.matches("content feedback").count(), 4);
        assert_eq!(
            last_gen.request_text.matches("compliance feedback").count(),
            4
        );
    }

    #[test]
    fn stylistic_only_change_is_rejected() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::FORGE_CANDIDATE),
                r#"{"guideline": "reworded oracle", "reply": "Here are three options, kindly."}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_CONTENT_JUDGE),
                r#"{"changed": false, "feedback": "same behavior, new tone"}"#,
            )
            .entry(
                Matcher::tag(tags::FORGE_COMPLIANCE_JUDGE),
                r#"{"detected": false, "feedback": "nothing to flag"}"#,
            )
            .build();
        let config = ForgeConfig {
            batch_size: 1,
            max_rounds: 1,
            ..ForgeConfig::default()
        };
        let (registry, config) = engine(backend, config);
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let dialogue = seed_dialogue(&oracle);
        let accepted = forge.adversarial_optimize(&oracle, &dialogue, 1).unwrap();
        assert!(
            accepted.is_empty(),
            "(changed=false, detected=false) must reject"
        );
    }

    #[test]
    fn oracle_must_govern_the_turn() {
        let (registry, config) = engine(accepting_backend(), ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let other = Guideline::workflow("different_key", "something else");
        let dialogue = seed_dialogue(&oracle_workflow_guideline());
        assert!(matches!(
            forge.adversarial_optimize(&other, &dialogue, 1),
            Err(ForgeError::OracleNotApplied { .. })
        ));
    }

    #[test]
    fn stored_variants_satisfy_the_acceptance_invariant() {
        let (registry, config) = engine(accepting_backend(), ForgeConfig::default());
        let forge = ForgeEngine::new(&registry, config);
        let oracle = oracle_workflow_guideline();
        let dialogue = seed_dialogue(&oracle);
        let accepted = forge.adversarial_optimize(&oracle, &dialogue, 1).unwrap();
        let mut store = VariantStore::default();
        for variant in accepted {
            store.insert(variant);
        }
        for variants in store.variants.values() {
            for variant in variants {
                let acceptance = variant
                    .acceptance
                    .as_ref()
                    .expect("stored variants carry acceptance");
                assert!(acceptance.content_judge_verdict && !acceptance.compliance_judge_verdict);
            }
        }
    }

    #[test]
    fn variant_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("variants.json");
        let mut store = VariantStore::default();
        store.insert(ViolationVariant {
            oracle_key: "k1".into(),
            kind: VariantKind::WorkflowModified,
            content: "modified".into(),
            trigger: None,
            action: None,
            acceptance: Some(AcceptanceRecord {
                round: 2,
                content_judge_verdict: true,
                compliance_judge_verdict: false,
                feedback_used: vec!["f1".into()],
            }),
        });
        store.save(&path).unwrap();
        assert_eq!(VariantStore::load(&path).unwrap(), store);
    }
}
