//! Guideline document construction with violation injection, the three-agent
//! simulation (user simulator / selector / assistant), automatic turn
//! labeling, and majority-vote adherence verification with regeneration.
//!
//! Labeling is the benchmark's core guarantee: a turn is violated exactly
//! when its governing key appears in the served document's injection map.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Registry, Role};
use crate::forge::{VariantStore, ViolationVariant};
use crate::gateway::GatewayError;
use crate::model::{
    validate_document, Guideline, GuidelineCategory, GuidelineDocument, GuidelineRef,
    LabeledDialogue, Turn, TurnLabel, VariantKind, Workflow,
};
use crate::prompts;
use crate::scaling::GuidelinePool;
use crate::util::{derive_rng, derive_seed, parallel_map, parse_json_lenient};

/// Injection rates: fraction of workflow phases replaced and the probability
/// of additionally replacing one condition guideline.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InjectionConfig {
    #[serde(default = "default_workflow_rate")]
    pub workflow_rate: f64,
    #[serde(default = "default_condition_prob")]
    pub condition_prob: f64,
}

fn default_workflow_rate() -> f64 {
    0.30
}
fn default_condition_prob() -> f64 {
    0.50
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            workflow_rate: default_workflow_rate(),
            condition_prob: default_condition_prob(),
        }
    }
}

/// Simulation parameters. The verifier panel lists provider names and must
/// be an odd count of at least three so majority votes are well-defined.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub verifier_panel: Vec<String>,
    #[serde(default = "default_max_regenerations")]
    pub max_regenerations: usize,
    #[serde(default = "default_conditions_per_doc")]
    pub conditions_per_doc: usize,
    #[serde(default = "default_sentinel")]
    pub sentinel: String,
    #[serde(default)]
    pub selector: SelectorBackend,
}

fn default_max_turns() -> usize {
    20
}
fn default_max_regenerations() -> usize {
    3
}
fn default_conditions_per_doc() -> usize {
    3
}
fn default_sentinel() -> String {
    "[[DONE]]".to_string()
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            max_turns: default_max_turns(),
            verifier_panel: Vec::new(),
            max_regenerations: default_max_regenerations(),
            conditions_per_doc: default_conditions_per_doc(),
            sentinel: default_sentinel(),
            selector: SelectorBackend::default(),
        }
    }
}

/// The selector is an LLM role with a structured output contract; the
/// rule-based backend is a deterministic alternative for tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorBackend {
    #[default]
    Llm,
    RuleBased,
}

/// Which served guidelines are variants, fixed before simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub workflow_replacements: BTreeMap<String, ViolationVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_replacement: Option<(String, ViolationVariant)>,
    pub rng_seed: u64,
}

impl InjectionPlan {
    pub fn injected_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.workflow_replacements.keys().cloned().collect();
        if let Some((key, _)) = &self.condition_replacement {
            keys.push(key.clone());
        }
        keys
    }
}

/// A simulated customer; the compliance auditor steers the conversation
/// toward the injected keys it targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub traits: String,
    pub scenario_goal: String,
    #[serde(default)]
    pub target_variants: Vec<String>,
}

/// The injected document served to agents, its oracle twin, and the plan
/// that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDocuments {
    pub injected: GuidelineDocument,
    pub oracle: GuidelineDocument,
    pub plan: InjectionPlan,
}

/// Per-run accounting written beside the corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generated: usize,
    pub rejected: usize,
    pub aborted: usize,
    pub mean_turns: f64,
    pub mean_violations: f64,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("workflow needs {required} replaceable phases but only {available} have variants")]
    NoVariantAvailable { required: usize, available: usize },
    #[error("selector output unusable at turn {turn}: {detail}")]
    SelectorParseFailure { turn: usize, detail: String },
    #[error("dialogue rejected at turn {turn} after exhausting regenerations")]
    DialogueRejected { turn: usize, feedback: Vec<String> },
    #[error("malformed persona output: {0}")]
    MalformedPersona(String),
    #[error(
        "verifier panel of {size} providers; majority voting needs an odd count of at least 3"
    )]
    InvalidPanel { size: usize },
    #[error("pool has no {0}")]
    EmptyPool(&'static str),
    #[error("document failed validation: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Decide which phases (and optionally which condition) to replace.
///
/// The workflow replacement count is `round(rate·k)` half-up with a minimum
/// of one whenever the rate is positive; a zero rate injects nothing. The
/// condition replacement happens with probability `condition_prob`, choosing
/// uniformly among the document's conditions that have accepted variants.
pub fn build_injection_plan(
    workflow: &Workflow,
    doc_conditions: &[Guideline],
    store: &VariantStore,
    config: &InjectionConfig,
    rng: &mut ChaCha8Rng,
    rng_seed: u64,
) -> Result<InjectionPlan, SynthError> {
    let k = workflow.phase_count();
    let required = if config.workflow_rate <= 0.0 {
        0
    } else {
        round_half_up(config.workflow_rate * k as f64).max(1)
    };
    let eligible: Vec<&str> = workflow
        .phases
        .iter()
        .map(|p| p.guideline.key.as_str())
        .filter(|key| store.has_variants(key))
        .collect();
    if eligible.len() < required {
        return Err(SynthError::NoVariantAvailable {
            required,
            available: eligible.len(),
        });
    }

    let mut workflow_replacements = BTreeMap::new();
    if required > 0 {
        let chosen = rand::seq::index::sample(rng, eligible.len(), required);
        let mut keys: Vec<&str> = chosen.iter().map(|i| eligible[i]).collect();
        keys.sort_unstable();
        for key in keys {
            let variants = store.for_key(key);
            let pick = rng.random_range(0..variants.len());
            workflow_replacements.insert(key.to_string(), variants[pick].clone());
        }
    }

    let mut condition_replacement = None;
    if rng.random_range(0.0..1.0) < config.condition_prob {
        let eligible_conditions: Vec<&Guideline> = doc_conditions
            .iter()
            .filter(|g| store.has_variants(&g.key))
            .collect();
        if !eligible_conditions.is_empty() {
            let which = rng.random_range(0..eligible_conditions.len());
            let condition = eligible_conditions[which];
            let variants = store.for_key(&condition.key);
            let pick = rng.random_range(0..variants.len());
            condition_replacement = Some((condition.key.clone(), variants[pick].clone()));
        }
    }

    Ok(InjectionPlan {
        workflow_replacements,
        condition_replacement,
        rng_seed,
    })
}

/// Sample a document from the pool (full universal set, one workflow, a
/// condition subset) and apply the injection plan, returning the injected
/// document together with its oracle twin.
pub fn build_sim_document(
    pool: &GuidelinePool,
    store: &VariantStore,
    injection: &InjectionConfig,
    conditions_per_doc: usize,
    seed: u64,
) -> Result<SimDocuments, SynthError> {
    if pool.workflows.is_empty() {
        return Err(SynthError::EmptyPool("workflows"));
    }
    let mut rng = derive_rng(seed, &["sim_document"]);
    let wf_idx = rng.random_range(0..pool.workflows.len());
    let workflow = pool.workflows[wf_idx].clone();

    let take = conditions_per_doc.min(pool.conditions.len());
    let mut condition_idx: Vec<usize> = if take > 0 {
        rand::seq::index::sample(&mut rng, pool.conditions.len(), take).into_vec()
    } else {
        Vec::new()
    };
    condition_idx.sort_unstable();
    let conditions: Vec<Guideline> = condition_idx
        .iter()
        .map(|&i| pool.conditions[i].clone())
        .collect();

    let plan = build_injection_plan(&workflow, &conditions, store, injection, &mut rng, seed)?;

    let oracle = GuidelineDocument {
        universal: pool.universal.clone(),
        workflow: workflow.clone(),
        conditions: conditions.clone(),
        injection_map: BTreeMap::new(),
    };

    let mut injected = oracle.clone();
    for (key, variant) in &plan.workflow_replacements {
        for phase in &mut injected.workflow.phases {
            if &phase.guideline.key == key {
                phase.guideline.content = variant.content.clone();
            }
        }
        injected
            .injection_map
            .insert(key.clone(), VariantKind::WorkflowModified);
    }
    if let Some((key, variant)) = &plan.condition_replacement {
        for condition in &mut injected.conditions {
            if &condition.key == key {
                if let Some(action) = &variant.action {
                    condition.action = Some(action.clone());
                }
                condition.content = variant.content.clone();
            }
        }
        injected.injection_map.insert(key.clone(), variant.kind);
    }

    let report = validate_document(&injected);
    if !report.is_empty() {
        return Err(SynthError::InvalidDocument(report.to_string()));
    }
    Ok(SimDocuments {
        injected,
        oracle,
        plan,
    })
}

struct RuleSelectorState {
    workflow_turns: usize,
}

pub struct SynthEngine<'a> {
    registry: &'a Registry,
    simulation: SimulationConfig,
    injection: InjectionConfig,
    domain: String,
    root_seed: u64,
}

impl<'a> SynthEngine<'a> {
    pub fn new(
        registry: &'a Registry,
        simulation: SimulationConfig,
        injection: InjectionConfig,
        domain: impl Into<String>,
        root_seed: u64,
    ) -> Self {
        SynthEngine {
            registry,
            simulation,
            injection,
            domain: domain.into(),
            root_seed,
        }
    }

    /// Run the three-agent loop: selector picks the governing guideline,
    /// assistant replies conditioned on its (possibly injected) content,
    /// user simulator answers or signals completion. Labels fall out of the
    /// injection map.
    pub fn simulate(
        &self,
        docs: &SimDocuments,
        persona: &Persona,
        dialogue_id: &str,
    ) -> Result<LabeledDialogue, SynthError> {
        let doc = &docs.injected;
        let universal_text = doc
            .universal
            .iter()
            .map(|g| format!("- [{}] {}", g.key, g.content))
            .collect::<Vec<_>>()
            .join("\n");
        let mut turns: Vec<Turn> = Vec::new();
        let mut labels: Vec<TurnLabel> = Vec::new();
        let mut rule_state = RuleSelectorState { workflow_turns: 0 };
        let mut max_phase_seen = 0usize;

        for turn_index in 1..=self.simulation.max_turns {
            let guideline_ref = match self.simulation.selector {
                SelectorBackend::RuleBased => self.rule_select(doc, &turns, &mut rule_state),
                SelectorBackend::Llm => self.llm_select(doc, &turns, turn_index, max_phase_seen)?,
            };
            if let Some(phase) = guideline_ref.phase_index {
                max_phase_seen = max_phase_seen.max(phase);
            }
            let content = doc
                .resolve(&guideline_ref)
                .map(|g| g.content.clone())
                .ok_or_else(|| SynthError::SelectorParseFailure {
                    turn: turn_index,
                    detail: format!("unresolvable ref `{}`", guideline_ref.key),
                })?;

            let assistant_gw = self.registry.gateway(Role::Assistant)?;
            let reply = assistant_gw
                .complete(&prompts::assistant(
                    &universal_text,
                    &content,
                    &turns,
                    turn_index,
                ))?
                .content;

            let user_gw = self.registry.gateway(Role::UserSim)?;
            let user_raw = user_gw
                .complete(&prompts::user_sim(
                    persona,
                    &turns,
                    &reply,
                    turn_index,
                    &self.simulation.sentinel,
                ))?
                .content;
            let (user_message, done) = strip_sentinel(&user_raw, &self.simulation.sentinel);

            let violated = doc.injection_map.contains_key(&guideline_ref.key);
            turns.push(Turn {
                assistant: reply,
                user: user_message,
            });
            labels.push(TurnLabel {
                guideline: guideline_ref,
                violated,
            });
            if done {
                break;
            }
        }

        Ok(LabeledDialogue {
            dialogue_id: dialogue_id.to_string(),
            domain: self.domain.clone(),
            turns,
            labels,
            source_document: doc.clone(),
            oracle_document: docs.oracle.clone(),
        })
    }

    /// Deterministic selector: a condition governs when its trigger text
    /// appears in the latest user message; otherwise the workflow advances
    /// one phase per workflow-governed turn and holds at the final phase.
    fn rule_select(
        &self,
        doc: &GuidelineDocument,
        turns: &[Turn],
        state: &mut RuleSelectorState,
    ) -> GuidelineRef {
        if let Some(last_user) = turns.last().map(|t| t.user.to_lowercase()) {
            for condition in &doc.conditions {
                if let Some(trigger) = &condition.trigger {
                    if !trigger.is_empty() && last_user.contains(&trigger.to_lowercase()) {
                        return GuidelineRef::condition(condition.key.clone());
                    }
                }
            }
        }
        let k = doc.workflow.phase_count();
        let phase_index = (state.workflow_turns + 1).min(k);
        state.workflow_turns += 1;
        let phase = &doc.workflow.phases[phase_index - 1];
        GuidelineRef::workflow(phase.guideline.key.clone(), phase_index)
    }

    /// LLM selector with a structured output contract. Non-resolving refs,
    /// universal refs, and backwards workflow phases all count as parse
    /// failures; three such failures abort the dialogue.
    fn llm_select(
        &self,
        doc: &GuidelineDocument,
        turns: &[Turn],
        turn_index: usize,
        max_phase_seen: usize,
    ) -> Result<GuidelineRef, SynthError> {
        let gateway = self.registry.gateway(Role::Selector)?;
        let request = prompts::selector(doc, turns, turn_index);
        let mut detail = String::new();
        for _ in 0..3 {
            let response = gateway.complete(&request)?;
            detail = response.content.clone();
            let Some(value) = parse_json_lenient(&response.content) else {
                continue;
            };
            let category = match value["category"].as_str() {
                Some("workflow") => GuidelineCategory::Workflow,
                Some("condition") => GuidelineCategory::Condition,
                _ => continue,
            };
            let Some(key) = value["key"].as_str() else {
                continue;
            };
            let guideline_ref = match category {
                GuidelineCategory::Workflow => {
                    let Some(phase) = value["phase_index"].as_u64() else {
                        continue;
                    };
                    let phase = phase as usize;
                    if phase < max_phase_seen {
                        continue; // workflow phases never move backwards
                    }
                    GuidelineRef::workflow(key, phase)
                }
                _ => GuidelineRef::condition(key),
            };
            if doc.resolve(&guideline_ref).is_some() {
                return Ok(guideline_ref);
            }
        }
        Err(SynthError::SelectorParseFailure {
            turn: turn_index,
            detail,
        })
    }

    /// Majority-vote adherence check per turn against the SERVED guideline
    /// content, regenerating failing replies from the judges' feedback up to
    /// `max_regenerations` times. Persistent failure rejects the dialogue.
    pub fn verify_and_repair(
        &self,
        dialogue: LabeledDialogue,
    ) -> Result<LabeledDialogue, SynthError> {
        let panel = &self.simulation.verifier_panel;
        if panel.is_empty() {
            return Ok(dialogue);
        }
        if panel.len() < 3 || panel.len().is_multiple_of(2) {
            return Err(SynthError::InvalidPanel { size: panel.len() });
        }
        let mut turns = dialogue.turns.clone();
        for (idx, label) in dialogue.labels.iter().enumerate() {
            let turn_no = idx + 1;
            let content = dialogue
                .source_document
                .resolve(&label.guideline)
                .map(|g| g.content.clone())
                .unwrap_or_default();
            let mut reply = turns[idx].assistant.clone();
            let mut attempt = 0usize;
            loop {
                let votes = self.panel_votes(panel, &content, &reply, turn_no)?;
                let fails: Vec<&String> = votes
                    .iter()
                    .filter(|(adheres, _)| !adheres)
                    .map(|(_, feedback)| feedback)
                    .collect();
                if fails.len() * 2 < panel.len() {
                    turns[idx].assistant = reply;
                    break;
                }
                if attempt >= self.simulation.max_regenerations {
                    return Err(SynthError::DialogueRejected {
                        turn: turn_no,
                        feedback: fails.into_iter().cloned().collect(),
                    });
                }
                attempt += 1;
                let feedback: Vec<String> = fails.into_iter().cloned().collect();
                let gateway = self.registry.gateway(Role::Assistant)?;
                reply = gateway
                    .complete(&prompts::assistant_regen(
                        &content,
                        &turns[..idx],
                        turn_no,
                        &reply,
                        &feedback,
                    ))?
                    .content;
            }
        }
        Ok(LabeledDialogue { turns, ..dialogue })
    }

    fn panel_votes(
        &self,
        panel: &[String],
        content: &str,
        reply: &str,
        turn_no: usize,
    ) -> Result<Vec<(bool, String)>, SynthError> {
        let seats: Vec<(usize, String)> = panel.iter().cloned().enumerate().collect();
        let votes = parallel_map(seats, self.registry.workers(), |(seat, provider)| {
            let gateway = self.registry.named(&provider)?;
            let response =
                gateway.complete(&prompts::verifier(seat + 1, content, reply, turn_no))?;
            Ok(match parse_json_lenient(&response.content) {
                Some(value) => (
                    value["adheres"].as_bool().unwrap_or(false),
                    value["feedback"]
                        .as_str()
                        .unwrap_or("no feedback")
                        .to_string(),
                ),
                None => (false, "unparseable verifier output".to_string()),
            })
        });
        votes.into_iter().collect::<Result<Vec<_>, SynthError>>()
    }

    /// Generate personas whose goals exercise the document's injected keys.
    pub fn generate_personas(
        &self,
        doc: &GuidelineDocument,
        count: usize,
    ) -> Result<Vec<Persona>, SynthError> {
        let target_keys: Vec<String> = doc.injection_map.keys().cloned().collect();
        let gateway = self.registry.gateway(Role::Generator)?;
        let mut last = String::new();
        for _ in 0..3 {
            let response =
                gateway.complete(&prompts::personas(&self.domain, &target_keys, count))?;
            last = response.content.clone();
            let parsed = parse_json_lenient(&response.content).and_then(|value| {
                value.as_array().map(|items| {
                    items
                        .iter()
                        .filter_map(|item| {
                            let name = item["name"].as_str()?.to_string();
                            Some(Persona {
                                name,
                                traits: item["traits"].as_str().unwrap_or_default().to_string(),
                                scenario_goal: item["scenario_goal"]
                                    .as_str()
                                    .unwrap_or_default()
                                    .to_string(),
                                target_variants: target_keys.clone(),
                            })
                        })
                        .collect::<Vec<_>>()
                })
            });
            if let Some(personas) = parsed {
                if personas.len() >= count {
                    return Ok(personas.into_iter().take(count).collect());
                }
            }
        }
        Err(SynthError::MalformedPersona(last))
    }

    /// Produce a labeled corpus: per dialogue, sample and inject a document,
    /// generate a persona, simulate, verify, and collect. Rejected dialogues
    /// are excluded and counted; selector aborts are counted as aborted.
    pub fn synth_corpus(
        &self,
        pool: &GuidelinePool,
        store: &VariantStore,
        count: usize,
        id_prefix: &str,
    ) -> Result<(Vec<LabeledDialogue>, RunReport), SynthError> {
        let mut generated = Vec::new();
        let mut report = RunReport::default();
        for i in 0..count {
            let doc_seed = derive_seed(self.root_seed, &["synth", id_prefix, &i.to_string()]);
            let docs = build_sim_document(
                pool,
                store,
                &self.injection,
                self.simulation.conditions_per_doc,
                doc_seed,
            )?;
            let persona = self
                .generate_personas(&docs.injected, 1)?
                .into_iter()
                .next()
                .expect("one persona requested");
            let dialogue_id = format!("{id_prefix}_{i:05}");
            match self.simulate(&docs, &persona, &dialogue_id) {
                Ok(dialogue) => match self.verify_and_repair(dialogue) {
                    Ok(dialogue) => {
                        report.mean_turns += dialogue.turn_count() as f64;
                        report.mean_violations += dialogue.violation_count() as f64;
                        generated.push(dialogue);
                    }
                    Err(SynthError::DialogueRejected { .. }) => report.rejected += 1,
                    Err(other) => return Err(other),
                },
                Err(SynthError::SelectorParseFailure { .. }) => report.aborted += 1,
                Err(other) => return Err(other),
            }
        }
        report.generated = generated.len();
        if report.generated > 0 {
            report.mean_turns /= report.generated as f64;
            report.mean_violations /= report.generated as f64;
        }
        Ok((generated, report))
    }
}

/// Strip the completion sentinel from a user message; recognized before the
/// turn is appended. The cleaned remainder (possibly empty) is stored.
fn strip_sentinel(raw: &str, sentinel: &str) -> (String, bool) {
    if raw.contains(sentinel) {
        (raw.replace(sentinel, "").trim().to_string(), true)
    } else {
        (raw.trim().to_string(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::AcceptanceRecord;
    use crate::gateway::{Matcher, ScriptedBackend};
    use crate::model::Phase;
    use crate::prompts::tags;

    fn workflow_k(k: usize) -> Workflow {
        Workflow {
            workflow_id: "wf".into(),
            intent: "demo intent".into(),
            phases: (1..=k)
                .map(|i| Phase {
                    phase_index: i,
                    guideline: Guideline::workflow(format!("wf_p{i}"), format!("Do step {i}")),
                })
                .collect(),
        }
    }

    fn variant_for(key: &str) -> ViolationVariant {
        ViolationVariant {
            oracle_key: key.into(),
            kind: VariantKind::WorkflowModified,
            content: format!("Corrupted {key}"),
            trigger: None,
            action: None,
            acceptance: Some(AcceptanceRecord {
                round: 1,
                content_judge_verdict: true,
                compliance_judge_verdict: false,
                feedback_used: vec![],
            }),
        }
    }

    fn full_store(workflow: &Workflow, conditions: &[Guideline]) -> VariantStore {
        let mut store = VariantStore::default();
        for phase in &workflow.phases {
            store.insert(variant_for(&phase.guideline.key));
        }
        for condition in conditions {
            store.insert(ViolationVariant {
                oracle_key: condition.key.clone(),
                kind: VariantKind::ConditionOmitsAction,
                content: format!("When {}, do nothing", condition.trigger.as_deref().unwrap()),
                trigger: condition.trigger.clone(),
                action: Some("do nothing".into()),
                acceptance: None,
            });
        }
        store
    }

    fn pool_with(workflow: Workflow, conditions: Vec<Guideline>) -> GuidelinePool {
        GuidelinePool {
            domain: "airline".into(),
            universal: vec![Guideline::universal("be_kind", "Always be kind")],
            workflows: vec![workflow],
            conditions,
            seed_intents: vec![],
            provenance: BTreeMap::new(),
        }
    }

    #[test]
    fn k10_plan_has_exactly_three_workflow_replacements() {
        let workflow = workflow_k(10);
        let store = full_store(&workflow, &[]);
        let config = InjectionConfig::default();
        let mut rng = derive_rng(42, &["plan"]);
        let plan = build_injection_plan(&workflow, &[], &store, &config, &mut rng, 42).unwrap();
        assert_eq!(plan.workflow_replacements.len(), 3);
    }

    #[test]
    fn zero_rate_injects_no_workflow_variants() {
        let workflow = workflow_k(4);
        let store = full_store(&workflow, &[]);
        let config = InjectionConfig {
            workflow_rate: 0.0,
            condition_prob: 0.0,
        };
        let mut rng = derive_rng(7, &["plan"]);
        let plan = build_injection_plan(&workflow, &[], &store, &config, &mut rng, 7).unwrap();
        assert!(plan.workflow_replacements.is_empty());
        assert!(plan.condition_replacement.is_none());
    }

    #[test]
    fn positive_rate_guarantees_at_least_one_replacement() {
        let workflow = workflow_k(2); // 0.3 * 2 = 0.6 rounds to 1
        let store = full_store(&workflow, &[]);
        let config = InjectionConfig::default();
        let mut rng = derive_rng(3, &["plan"]);
        let plan = build_injection_plan(&workflow, &[], &store, &config, &mut rng, 3).unwrap();
        assert_eq!(plan.workflow_replacements.len(), 1);
    }

    #[test]
    fn missing_variants_yield_no_variant_available() {
        let workflow = workflow_k(4);
        let store = VariantStore::default();
        let config = InjectionConfig::default();
        let mut rng = derive_rng(5, &["plan"]);
        let err = build_injection_plan(&workflow, &[], &store, &config, &mut rng, 5).unwrap_err();
        assert!(matches!(
            err,
            SynthError::NoVariantAvailable {
                required: 1,
                available: 0
            }
        ));
    }

    #[test]
    fn fixed_seed_builds_identical_documents() {
        let workflow = workflow_k(5);
        let conditions = vec![Guideline::condition(
            "cond_a",
            "user asks for manager",
            "escalate",
        )];
        let store = full_store(&workflow, &conditions);
        let pool = pool_with(workflow, conditions);
        let config = InjectionConfig::default();
        let a = build_sim_document(&pool, &store, &config, 3, 99).unwrap();
        let b = build_sim_document(&pool, &store, &config, 99, 99);
        let c = build_sim_document(&pool, &store, &config, 3, 99).unwrap();
        assert_eq!(a, c);
        // different parameters may legitimately differ; just check b built
        assert!(b.is_ok());
    }

    #[test]
    fn injected_document_carries_oracle_twin_and_map() {
        let workflow = workflow_k(4);
        let store = full_store(&workflow, &[]);
        let pool = pool_with(workflow, vec![]);
        let config = InjectionConfig::default();
        let docs = build_sim_document(&pool, &store, &config, 3, 11).unwrap();
        assert!(docs.oracle.injection_map.is_empty());
        assert!(!docs.injected.injection_map.is_empty());
        for key in docs.injected.injection_map.keys() {
            let injected_content = docs.injected.content_for_key(key).unwrap();
            let oracle_content = docs.oracle.content_for_key(key).unwrap();
            assert_ne!(injected_content, oracle_content);
            assert!(injected_content.starts_with("Corrupted"));
        }
    }

    fn sim_config(selector: SelectorBackend, panel: Vec<String>) -> SimulationConfig {
        SimulationConfig {
            selector,
            verifier_panel: panel,
            ..SimulationConfig::default()
        }
    }

    fn persona() -> Persona {
        Persona {
            name: "Jo".into(),
            traits: "curt".into(),
            scenario_goal: "get the task done".into(),
            target_variants: vec![],
        }
    }

    #[test]
    fn scripted_happy_path_walks_phases_and_labels_cleanly() {
        let workflow = workflow_k(4);
        let pool = pool_with(workflow, vec![]);
        let oracle = GuidelineDocument {
            universal: pool.universal.clone(),
            workflow: pool.workflows[0].clone(),
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        let docs = SimDocuments {
            injected: oracle.clone(),
            oracle,
            plan: InjectionPlan {
                workflow_replacements: BTreeMap::new(),
                condition_replacement: None,
                rng_seed: 0,
            },
        };
        let backend = ScriptedBackend::builder("s")
            .entry(Matcher::tag(tags::ASSISTANT), "Working on it.")
            .entry_outcomes(
                Matcher::tag(tags::USER_SIM),
                vec![
                    crate::gateway::ScriptOutcome::text("go on"),
                    crate::gateway::ScriptOutcome::text("go on"),
                    crate::gateway::ScriptOutcome::text("go on"),
                    crate::gateway::ScriptOutcome::text("thanks [[DONE]]"),
                ],
            )
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(SelectorBackend::RuleBased, vec![]),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = engine.simulate(&docs, &persona(), "dlg_0").unwrap();
        assert_eq!(dialogue.turn_count(), 4);
        assert!(dialogue.labels.iter().all(|l| !l.violated));
        let phases: Vec<usize> = dialogue
            .labels
            .iter()
            .map(|l| l.guideline.phase_index.unwrap())
            .collect();
        assert_eq!(phases, vec![1, 2, 3, 4]);
        assert_eq!(dialogue.turns[3].user, "thanks");
    }

    #[test]
    fn injected_phase_turn_is_the_only_violated_one() {
        let workflow = workflow_k(4);
        let store = {
            let mut s = VariantStore::default();
            s.insert(variant_for("wf_p2"));
            s
        };
        let mut injected = GuidelineDocument {
            universal: vec![],
            workflow: workflow.clone(),
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        let oracle = injected.clone();
        injected.workflow.phases[1].guideline.content = store.for_key("wf_p2")[0].content.clone();
        injected
            .injection_map
            .insert("wf_p2".into(), VariantKind::WorkflowModified);
        let docs = SimDocuments {
            injected,
            oracle,
            plan: InjectionPlan {
                workflow_replacements: store
                    .variants
                    .iter()
                    .flat_map(|(k, v)| v.iter().map(move |x| (k.clone(), x.clone())))
                    .collect(),
                condition_replacement: None,
                rng_seed: 0,
            },
        };
        let backend = ScriptedBackend::builder("s")
            .entry(Matcher::tag(tags::ASSISTANT), "Reply.")
            .entry_outcomes(
                Matcher::tag(tags::USER_SIM),
                vec![
                    crate::gateway::ScriptOutcome::text("go"),
                    crate::gateway::ScriptOutcome::text("go"),
                    crate::gateway::ScriptOutcome::text("go"),
                    crate::gateway::ScriptOutcome::text("[[DONE]]"),
                ],
            )
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(SelectorBackend::RuleBased, vec![]),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = engine.simulate(&docs, &persona(), "dlg_0").unwrap();
        let flags: Vec<bool> = dialogue.labels.iter().map(|l| l.violated).collect();
        assert_eq!(flags, vec![false, true, false, false]);
        // final-turn user message may be empty when only the sentinel was sent
        assert_eq!(dialogue.turns[3].user, "");
    }

    #[test]
    fn never_terminating_user_caps_at_max_turns() {
        let workflow = workflow_k(4);
        let pool = pool_with(workflow, vec![]);
        let oracle = GuidelineDocument {
            universal: pool.universal.clone(),
            workflow: pool.workflows[0].clone(),
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        let docs = SimDocuments {
            injected: oracle.clone(),
            oracle,
            plan: InjectionPlan {
                workflow_replacements: BTreeMap::new(),
                condition_replacement: None,
                rng_seed: 0,
            },
        };
        let backend = ScriptedBackend::builder("s")
            .entry(Matcher::tag(tags::ASSISTANT), "Still here.")
            .entry(Matcher::tag(tags::USER_SIM), "tell me more")
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(SelectorBackend::RuleBased, vec![]),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = engine.simulate(&docs, &persona(), "dlg_0").unwrap();
        assert_eq!(dialogue.turn_count(), 20);
        // phases hold at the final phase once the workflow is exhausted
        assert_eq!(
            dialogue.labels.last().unwrap().guideline.phase_index,
            Some(4)
        );
    }

    #[test]
    fn condition_trigger_interleaves_and_phase_resumes() {
        let workflow = workflow_k(3);
        let condition = Guideline::condition("human_agent", "human agent", "transfer immediately");
        let oracle = GuidelineDocument {
            universal: vec![],
            workflow,
            conditions: vec![condition],
            injection_map: BTreeMap::new(),
        };
        let docs = SimDocuments {
            injected: oracle.clone(),
            oracle,
            plan: InjectionPlan {
                workflow_replacements: BTreeMap::new(),
                condition_replacement: None,
                rng_seed: 0,
            },
        };
        let backend = ScriptedBackend::builder("s")
            .entry(Matcher::tag(tags::ASSISTANT), "Reply.")
            .entry_outcomes(
                Matcher::tag(tags::USER_SIM),
                vec![
                    crate::gateway::ScriptOutcome::text("I want a human agent now"),
                    crate::gateway::ScriptOutcome::text("ok continue"),
                    crate::gateway::ScriptOutcome::text("fine"),
                    crate::gateway::ScriptOutcome::text("[[DONE]]"),
                ],
            )
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(SelectorBackend::RuleBased, vec![]),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = engine.simulate(&docs, &persona(), "dlg_0").unwrap();
        let categories: Vec<GuidelineCategory> = dialogue
            .labels
            .iter()
            .map(|l| l.guideline.category)
            .collect();
        assert_eq!(
            categories,
            vec![
                GuidelineCategory::Workflow,
                GuidelineCategory::Condition,
                GuidelineCategory::Workflow,
                GuidelineCategory::Workflow
            ]
        );
        // workflow phases are non-decreasing across the interleave
        let phases: Vec<Option<usize>> = dialogue
            .labels
            .iter()
            .map(|l| l.guideline.phase_index)
            .collect();
        assert_eq!(phases, vec![Some(1), None, Some(2), Some(3)]);
    }

    fn one_turn_dialogue() -> LabeledDialogue {
        let workflow = workflow_k(1);
        let doc = GuidelineDocument {
            universal: vec![],
            workflow,
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        LabeledDialogue {
            dialogue_id: "dlg_v".into(),
            domain: "airline".into(),
            turns: vec![Turn {
                assistant: "original reply".into(),
                user: "ok".into(),
            }],
            labels: vec![TurnLabel {
                guideline: GuidelineRef::workflow("wf_p1", 1),
                violated: false,
            }],
            source_document: doc.clone(),
            oracle_document: doc,
        }
    }

    #[test]
    fn all_pass_panel_leaves_dialogue_unchanged() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::VERIFY),
                r#"{"adheres": true, "feedback": "ok"}"#,
            )
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(
                SelectorBackend::RuleBased,
                vec!["v".into(), "v".into(), "v".into()],
            ),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = one_turn_dialogue();
        let repaired = engine.verify_and_repair(dialogue.clone()).unwrap();
        assert_eq!(repaired, dialogue);
    }

    #[test]
    fn two_one_fail_regenerates_exactly_that_turn() {
        // Seats 1 and 2 fail the original reply; all seats pass the
        // regenerated one.
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag_and(tags::VERIFY, "regenerated reply"),
                r#"{"adheres": true, "feedback": "fixed"}"#,
            )
            .entry(
                Matcher::tag_and(tags::VERIFY, "Panel seat: 3"),
                r#"{"adheres": true, "feedback": "fine"}"#,
            )
            .entry(
                Matcher::tag(tags::VERIFY),
                r#"{"adheres": false, "feedback": "missed the step"}"#,
            )
            .entry(Matcher::tag(tags::ASSISTANT_REGEN), "regenerated reply")
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(
                SelectorBackend::RuleBased,
                vec!["v".into(), "v".into(), "v".into()],
            ),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let dialogue = one_turn_dialogue();
        let repaired = engine.verify_and_repair(dialogue).unwrap();
        assert_eq!(repaired.turns[0].assistant, "regenerated reply");
        // regen prompt carried the failing judges' feedback
        let regen_calls: Vec<_> = registry
            .audit()
            .records()
            .into_iter()
            .filter(|r| r.tag == tags::ASSISTANT_REGEN)
            .collect();
        assert_eq!(regen_calls.len(), 1);
        assert!(regen_calls[0].request_text.contains("missed the step"));
    }

    #[test]
    fn persistent_failure_rejects_with_turn_index() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::VERIFY),
                r#"{"adheres": false, "feedback": "still wrong"}"#,
            )
            .entry(Matcher::tag(tags::ASSISTANT_REGEN), "another attempt")
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(
                SelectorBackend::RuleBased,
                vec!["v".into(), "v".into(), "v".into()],
            ),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let err = engine.verify_and_repair(one_turn_dialogue()).unwrap_err();
        match err {
            SynthError::DialogueRejected { turn, feedback } => {
                assert_eq!(turn, 1);
                assert!(!feedback.is_empty());
            }
            other => panic!("unexpected: {other}"),
        }
        // initial vote + 3 regen cycles, 3 seats each; 3 regen calls
        assert_eq!(registry.audit().count_tag(tags::VERIFY), 12);
        assert_eq!(registry.audit().count_tag(tags::ASSISTANT_REGEN), 3);
    }

    #[test]
    fn personas_target_injected_keys() {
        let backend = ScriptedBackend::builder("s")
            .entry(
                Matcher::tag(tags::PERSONA),
                r#"[{"name": "Ana", "traits": "precise", "scenario_goal": "change a booking"}, {"name": "Bo", "traits": "hurried", "scenario_goal": "cancel"}]"#,
            )
            .build();
        let registry = Registry::uniform(backend);
        let engine = SynthEngine::new(
            &registry,
            sim_config(SelectorBackend::RuleBased, vec![]),
            InjectionConfig::default(),
            "airline",
            1,
        );
        let workflow = workflow_k(2);
        let mut doc = GuidelineDocument {
            universal: vec![],
            workflow,
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        doc.injection_map
            .insert("wf_p1".into(), VariantKind::WorkflowModified);
        let personas = engine.generate_personas(&doc, 2).unwrap();
        assert_eq!(personas.len(), 2);
        assert!(personas
            .iter()
            .all(|p| p.target_variants == vec!["wf_p1".to_string()]));

        // zero injections -> empty target list
        doc.injection_map.clear();
        let personas = engine.generate_personas(&doc, 1).unwrap();
        assert!(personas[0].target_variants.is_empty());
    }
}
