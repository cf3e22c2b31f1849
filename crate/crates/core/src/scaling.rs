//! Guideline pool expansion: intent generation, diversity-conditioned
//! workflow variants, grounded condition guidelines, the iterative
//! judge-and-refine quality loop, and similarity-based workflow
//! deduplication.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Registry, Role};
use crate::gateway::GatewayError;
use crate::model::{Guideline, Phase, Workflow};
use crate::prompts;
use crate::util::{parallel_map, parse_json_lenient, sha256_hex, slugify};

/// Blended-similarity parameters: weight `alpha`, duplicate threshold `tau`,
/// and the rewrite budget per duplicate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimilarityConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_max_rewrites")]
    pub max_rewrites: u32,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    0.8
}
fn default_max_rewrites() -> u32 {
    3
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha: default_alpha(),
            tau: default_tau(),
            max_rewrites: default_max_rewrites(),
        }
    }
}

/// Expansion counts and the refine-loop iteration budget.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalingOptions {
    #[serde(default = "default_intents")]
    pub intents: usize,
    #[serde(default = "default_variants")]
    pub variants_per_intent: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_intents() -> usize {
    10
}
fn default_variants() -> usize {
    3
}
fn default_iterations() -> usize {
    10
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            intents: default_intents(),
            variants_per_intent: default_variants(),
            iterations: default_iterations(),
        }
    }
}

/// How a pool item came to be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated { iteration: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemProvenance {
    #[serde(flatten)]
    pub origin: Origin,
    /// Workflow phase keys that ground a condition guideline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grounded_in: Vec<String>,
}

/// The per-domain guideline pool from which simulation documents sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidelinePool {
    pub domain: String,
    #[serde(default)]
    pub universal: Vec<Guideline>,
    #[serde(default)]
    pub workflows: Vec<Workflow>,
    #[serde(default)]
    pub conditions: Vec<Guideline>,
    /// Extra seed intents beyond those carried by seed workflows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_intents: Vec<String>,
    /// Keyed by workflow_id or condition key.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, ItemProvenance>,
}

impl GuidelinePool {
    pub fn load(path: &Path) -> Result<Self, ScalingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScalingError::Io(format!("{}: {e}", path.display())))?;
        let pool: GuidelinePool = serde_json::from_str(&text)
            .map_err(|e| ScalingError::Io(format!("{}: {e}", path.display())))?;
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScalingError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ScalingError::Io(e.to_string()))?;
        }
        let text = serde_json::to_string_pretty(self).expect("pool serializes");
        std::fs::write(path, text).map_err(|e| ScalingError::Io(e.to_string()))
    }

    /// All intents known to the pool: seed intents plus workflow intents.
    pub fn intents(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for intent in self
            .seed_intents
            .iter()
            .chain(self.workflows.iter().map(|w| &w.intent))
        {
            if seen.insert(normalize_intent(intent)) {
                out.push(intent.clone());
            }
        }
        out
    }

    /// Every key in use: guideline keys plus workflow ids.
    pub fn all_keys(&self) -> BTreeSet<String> {
        let mut keys = BTreeSet::new();
        for g in self.universal.iter().chain(self.conditions.iter()) {
            keys.insert(g.key.clone());
        }
        for w in &self.workflows {
            keys.insert(w.workflow_id.clone());
            for p in &w.phases {
                keys.insert(p.guideline.key.clone());
            }
        }
        keys
    }

    /// Pool-level invariants: distinct keys across every section, no two
    /// workflows sharing an id, and well-formed guidelines throughout.
    pub fn validate(&self) -> crate::model::ValidationReport {
        use crate::model::Finding;
        let mut findings = Vec::new();
        let mut seen = BTreeSet::new();
        let mut check_key = |key: &str, section: &str| {
            if key.is_empty() {
                findings.push(Finding::EmptyKey {
                    section: section.to_string(),
                });
            } else if !seen.insert(key.to_string()) {
                findings.push(Finding::DuplicateKey {
                    key: key.to_string(),
                });
            }
        };
        for g in &self.universal {
            check_key(&g.key, "universal");
        }
        for w in &self.workflows {
            check_key(&w.workflow_id, "workflows");
            for p in &w.phases {
                check_key(&p.guideline.key, "workflows");
            }
        }
        for g in &self.conditions {
            check_key(&g.key, "conditions");
        }
        for w in &self.workflows {
            if w.phases.is_empty() {
                findings.push(Finding::EmptyPhases {
                    workflow_id: w.workflow_id.clone(),
                });
            } else if w
                .phases
                .iter()
                .enumerate()
                .any(|(i, p)| p.phase_index != i + 1)
            {
                findings.push(Finding::NonContiguousPhases {
                    workflow_id: w.workflow_id.clone(),
                });
            }
        }
        for g in &self.conditions {
            if g.trigger.as_deref().is_none_or(str::is_empty)
                || g.action.as_deref().is_none_or(str::is_empty)
            {
                findings.push(Finding::MalformedCondition {
                    key: g.key.clone(),
                    detail: "missing trigger or action".to_string(),
                });
            }
        }
        crate::model::ValidationReport { findings }
    }
}

/// Case-insensitive, whitespace-normalized comparison key for intents.
fn normalize_intent(intent: &str) -> String {
    intent
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("generation still yielded duplicates after {attempts} attempts")]
    GenerationExhausted { attempts: u32 },
    #[error("malformed workflow output: {0}")]
    MalformedWorkflow(String),
    #[error("malformed guideline output: {0}")]
    MalformedGuideline(String),
    #[error("similarity score unparseable after {attempts} attempts: {detail}")]
    SimilarityParseFailure { attempts: u32, detail: String },
    #[error("workflow pool is empty; condition guidelines need grounding steps")]
    EmptyWorkflows,
    #[error("io failure: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Per-iteration pass rates of the judge-and-refine loop. Exactly one record
/// carries `selected = true`: the argmax of the overall pass rate, with ties
/// broken toward the lowest iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub iterations: Vec<RefineIteration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineIteration {
    pub iteration: u32,
    pub pass_rate_overall: f64,
    pub pass_rate_nonoverlap: f64,
    pub pass_rate_nonconflict: f64,
    pub selected: bool,
}

/// Everything the deduplication loop did: every scored pair, every rewrite
/// attempt, and every removal or swap.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupTrace {
    pub comparisons: Vec<ComparisonRecord>,
    pub rewrites: Vec<RewriteRecord>,
    pub removed: Vec<String>,
    pub swapped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub a: String,
    pub b: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub workflow_id: String,
    pub attempt: u32,
    pub max_similarity: f64,
    pub accepted: bool,
}

/// Pairwise blended similarity source; the gateway-backed implementation
/// lives in `BlendedSimilarity`, tests inject fixture matrices.
pub trait SimilarityOracle {
    fn blended(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError>;
}

/// Rewrites a duplicate workflow away from the rest of the pool.
pub trait WorkflowRewriter {
    fn rewrite(&self, duplicate: &Workflow, others: &[Workflow]) -> Result<Workflow, ScalingError>;
}

/// s = α·Sim_emb + (1−α)·Sim_LLM, both clamped to [0,1], computed on the
/// canonically ordered pair so the score is symmetric by construction.
pub struct BlendedSimilarity<'a> {
    pub registry: &'a Registry,
    pub config: SimilarityConfig,
}

impl BlendedSimilarity<'_> {
    fn embedding_similarity(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError> {
        let gateway = self.registry.gateway(Role::Embedder)?;
        let vectors = gateway.embed(
            prompts::tags::EMBEDDER,
            &[a.concatenated_text(), b.concatenated_text()],
        )?;
        Ok(vectors[0].cosine(&vectors[1]).clamp(0.0, 1.0))
    }

    fn llm_similarity(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError> {
        let gateway = self.registry.gateway(Role::Judge(0))?;
        let request = prompts::similarity(a, b);
        let attempts = 2;
        let mut detail = String::new();
        for _ in 0..attempts {
            let response = gateway.complete(&request)?;
            match parse_integer_score(&response.content) {
                Some(score) => return Ok((score as f64 / 100.0).clamp(0.0, 1.0)),
                None => detail = response.content,
            }
        }
        Err(ScalingError::SimilarityParseFailure { attempts, detail })
    }
}

impl SimilarityOracle for BlendedSimilarity<'_> {
    fn blended(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError> {
        let (first, second) = if a.workflow_id <= b.workflow_id {
            (a, b)
        } else {
            (b, a)
        };
        let alpha = self.config.alpha;
        let emb = if alpha > 0.0 {
            self.embedding_similarity(first, second)?
        } else {
            0.0
        };
        let llm = if alpha < 1.0 {
            self.llm_similarity(first, second)?
        } else {
            0.0
        };
        Ok(alpha * emb + (1.0 - alpha) * llm)
    }
}

/// First integer token in the text, for the 0–100 similarity contract.
fn parse_integer_score(text: &str) -> Option<i64> {
    let trimmed = text.trim();
    if let Ok(value) = trimmed.parse::<i64>() {
        return Some(value);
    }
    let mut digits = String::new();
    for ch in trimmed.chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else if !digits.is_empty() {
            break;
        }
    }
    digits.parse().ok()
}

struct GatewayRewriter<'a> {
    registry: &'a Registry,
}

impl WorkflowRewriter for GatewayRewriter<'_> {
    fn rewrite(&self, duplicate: &Workflow, others: &[Workflow]) -> Result<Workflow, ScalingError> {
        let gateway = self.registry.gateway(Role::Refiner)?;
        let response = gateway.complete(&prompts::dedup_rewrite(duplicate, others))?;
        parse_workflow_payload(&response.content, &duplicate.workflow_id, &duplicate.intent)
    }
}

fn content_hash(workflow: &Workflow) -> String {
    sha256_hex(workflow.concatenated_text().as_bytes())
}

/// Similarity-based workflow deduplication.
///
/// Repeatedly finds a pair with blended similarity above `tau`, picks as the
/// duplicate the member with more above-`tau` neighbors (ties resolve to the
/// earlier insertion index), attempts up to `max_rewrites` rewrites accepting
/// the first whose maximum similarity to all others is at or below `tau`, and
/// discards the duplicate when every rewrite fails. Similarities of unchanged
/// items are memoized by content hash so the loop never re-queries them.
#[allow(clippy::needless_range_loop)] // index scans over a symmetric score matrix
pub fn dedup_workflows_with(
    workflows: Vec<Workflow>,
    config: &SimilarityConfig,
    oracle: &dyn SimilarityOracle,
    rewriter: &dyn WorkflowRewriter,
) -> Result<(Vec<Workflow>, DedupTrace), ScalingError> {
    let mut pool = workflows;
    let mut trace = DedupTrace::default();
    let mut memo: HashMap<(String, String), f64> = HashMap::new();

    let lookup = |a: &Workflow,
                  b: &Workflow,
                  memo: &mut HashMap<(String, String), f64>,
                  trace: &mut DedupTrace|
     -> Result<f64, ScalingError> {
        let (ha, hb) = (content_hash(a), content_hash(b));
        let key = if ha <= hb { (ha, hb) } else { (hb, ha) };
        if let Some(&score) = memo.get(&key) {
            return Ok(score);
        }
        let score = oracle.blended(a, b)?;
        trace.comparisons.push(ComparisonRecord {
            a: a.workflow_id.clone(),
            b: b.workflow_id.clone(),
            score,
        });
        memo.insert(key, score);
        Ok(score)
    };

    // Generous guard: with memoized scores each resolution strictly reduces
    // the violating-pair count, so this bound is never reached in practice.
    let max_outer = pool.len() * pool.len() * (config.max_rewrites as usize + 1) + 16;
    for _ in 0..max_outer {
        if pool.len() < 2 {
            break;
        }
        let mut scores = vec![vec![0.0f64; pool.len()]; pool.len()];
        for i in 0..pool.len() {
            for j in (i + 1)..pool.len() {
                let s = lookup(&pool[i], &pool[j], &mut memo, &mut trace)?;
                scores[i][j] = s;
                scores[j][i] = s;
            }
        }
        let mut offending = None;
        'outer: for i in 0..pool.len() {
            for j in (i + 1)..pool.len() {
                if scores[i][j] > config.tau {
                    offending = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = offending else { break };
        let neighbors = |idx: usize| {
            (0..pool.len())
                .filter(|&other| other != idx && scores[idx][other] > config.tau)
                .count()
        };
        let (ni, nj) = (neighbors(i), neighbors(j));
        // Ties resolve to the earlier insertion index.
        let dup_idx = if nj > ni { j } else { i };

        let mut resolved = false;
        for attempt in 1..=config.max_rewrites {
            let others: Vec<Workflow> = pool
                .iter()
                .enumerate()
                .filter(|(idx, _)| *idx != dup_idx)
                .map(|(_, w)| w.clone())
                .collect();
            match rewriter.rewrite(&pool[dup_idx], &others) {
                Ok(candidate) => {
                    let mut max_similarity = 0.0f64;
                    for other in &others {
                        max_similarity =
                            max_similarity.max(lookup(&candidate, other, &mut memo, &mut trace)?);
                    }
                    let accepted = max_similarity <= config.tau;
                    trace.rewrites.push(RewriteRecord {
                        workflow_id: pool[dup_idx].workflow_id.clone(),
                        attempt,
                        max_similarity,
                        accepted,
                    });
                    if accepted {
                        trace.swapped.push(candidate.workflow_id.clone());
                        pool[dup_idx] = candidate;
                        resolved = true;
                        break;
                    }
                }
                Err(ScalingError::Gateway(e)) => return Err(ScalingError::Gateway(e)),
                Err(_) => {
                    trace.rewrites.push(RewriteRecord {
                        workflow_id: pool[dup_idx].workflow_id.clone(),
                        attempt,
                        max_similarity: f64::NAN,
                        accepted: false,
                    });
                }
            }
        }
        if !resolved {
            trace.removed.push(pool[dup_idx].workflow_id.clone());
            pool.remove(dup_idx);
        }
    }
    Ok((pool, trace))
}

/// Parse `{intent, phases: [{name, content}]}` model output into a Workflow
/// with slug keys derived from the workflow id and phase names.
fn parse_workflow_payload(
    text: &str,
    workflow_id: &str,
    fallback_intent: &str,
) -> Result<Workflow, ScalingError> {
    let value =
        parse_json_lenient(text).ok_or_else(|| ScalingError::MalformedWorkflow(text.into()))?;
    let intent = value["intent"]
        .as_str()
        .unwrap_or(fallback_intent)
        .to_string();
    let phases_value = value["phases"]
        .as_array()
        .ok_or_else(|| ScalingError::MalformedWorkflow("missing phases array".into()))?;
    if phases_value.is_empty() {
        return Err(ScalingError::MalformedWorkflow(
            "workflow has 0 phases".into(),
        ));
    }
    let mut phases = Vec::with_capacity(phases_value.len());
    let mut used = BTreeSet::new();
    for (i, phase) in phases_value.iter().enumerate() {
        let name = phase["name"].as_str().unwrap_or_default();
        let content = phase["content"].as_str().unwrap_or_default().to_string();
        if content.is_empty() {
            return Err(ScalingError::MalformedWorkflow(format!(
                "phase {} has empty content",
                i + 1
            )));
        }
        let base = if name.is_empty() {
            format!("{workflow_id}_step_{}", i + 1)
        } else {
            format!("{workflow_id}_{}", slugify(name))
        };
        let key = unique_key(base, &mut used);
        phases.push(Phase {
            phase_index: i + 1,
            guideline: Guideline::workflow(key, content),
        });
    }
    Ok(Workflow {
        workflow_id: workflow_id.to_string(),
        intent,
        phases,
    })
}

fn unique_key(base: String, used: &mut BTreeSet<String>) -> String {
    if used.insert(base.clone()) {
        return base;
    }
    let mut n = 2;
    loop {
        let candidate = format!("{base}_{n}");
        if used.insert(candidate.clone()) {
            return candidate;
        }
        n += 1;
    }
}

/// Re-prefix a workflow's id and phase keys when any of them collide with
/// keys already in the pool.
fn rekey_workflow_if_taken(workflow: Workflow, reserved: &mut BTreeSet<String>) -> Workflow {
    let collides = |wf: &Workflow, reserved: &BTreeSet<String>| {
        reserved.contains(&wf.workflow_id)
            || wf
                .phases
                .iter()
                .any(|p| reserved.contains(&p.guideline.key))
    };
    let mut out = workflow;
    if collides(&out, reserved) {
        let old_id = out.workflow_id.clone();
        let mut n = 2;
        loop {
            let candidate_id = format!("{old_id}_{n}");
            let mut candidate = out.clone();
            candidate.workflow_id = candidate_id.clone();
            for phase in &mut candidate.phases {
                let suffix = phase
                    .guideline
                    .key
                    .strip_prefix(&old_id)
                    .unwrap_or(&phase.guideline.key)
                    .to_string();
                phase.guideline.key = format!("{candidate_id}{suffix}");
            }
            if !collides(&candidate, reserved) {
                out = candidate;
                break;
            }
            n += 1;
        }
    }
    reserved.insert(out.workflow_id.clone());
    for phase in &out.phases {
        reserved.insert(phase.guideline.key.clone());
    }
    out
}

/// Stage output: the deduplicated pool plus audit traces.
pub struct ScaleOutput {
    pub pool: GuidelinePool,
    pub refine_trace: RefineTrace,
    pub dedup_trace: DedupTrace,
}

pub struct ScalingEngine<'a> {
    registry: &'a Registry,
    options: ScalingOptions,
    similarity: SimilarityConfig,
}

impl<'a> ScalingEngine<'a> {
    pub fn new(
        registry: &'a Registry,
        options: ScalingOptions,
        similarity: SimilarityConfig,
    ) -> Self {
        ScalingEngine {
            registry,
            options,
            similarity,
        }
    }

    /// Generate `count` distinct intents in a single inference; duplicates
    /// against seeds or within the batch force a retry of the whole call.
    pub fn generate_intents(
        &self,
        domain: &str,
        seed_intents: &[String],
        count: usize,
    ) -> Result<Vec<String>, ScalingError> {
        let gateway = self.registry.gateway(Role::Generator)?;
        let attempts = 3;
        let seeds: BTreeSet<String> = seed_intents.iter().map(|s| normalize_intent(s)).collect();
        for _ in 0..attempts {
            let response = gateway.complete(&prompts::intents(domain, seed_intents, count))?;
            let Some(value) = parse_json_lenient(&response.content) else {
                continue;
            };
            let Some(items) = value.as_array() else {
                continue;
            };
            let mut out = Vec::new();
            let mut seen = BTreeSet::new();
            let mut duplicate = false;
            for item in items {
                let Some(intent) = item.as_str() else {
                    continue;
                };
                let norm = normalize_intent(intent);
                if norm.is_empty() {
                    continue;
                }
                if seeds.contains(&norm) || !seen.insert(norm) {
                    duplicate = true;
                    break;
                }
                out.push(intent.to_string());
            }
            if !duplicate && out.len() >= count {
                out.truncate(count);
                return Ok(out);
            }
        }
        Err(ScalingError::GenerationExhausted { attempts })
    }

    /// Generate workflow variants sequentially; each generation prompt
    /// carries all prior variants for the intent so the model avoids
    /// duplicating them.
    pub fn generate_workflow_variants(
        &self,
        intent: &str,
        existing: &[Workflow],
        count: usize,
    ) -> Result<Vec<Workflow>, ScalingError> {
        let gateway = self.registry.gateway(Role::Generator)?;
        let domain = ""; // the prompt carries intent and prior variants; domain is cosmetic here
        let mut generated: Vec<Workflow> = Vec::with_capacity(count);
        for variant_index in 0..count {
            let mut context: Vec<Workflow> = existing.to_vec();
            context.extend(generated.iter().cloned());
            let workflow_id = format!(
                "{}_v{}",
                slugify(intent),
                existing.len() + variant_index + 1
            );
            let mut last_err = ScalingError::MalformedWorkflow("no attempt made".into());
            let mut parsed = None;
            for _ in 0..3 {
                let response =
                    gateway.complete(&prompts::workflow_variant(domain, intent, &context))?;
                match parse_workflow_payload(&response.content, &workflow_id, intent) {
                    Ok(workflow) => {
                        parsed = Some(workflow);
                        break;
                    }
                    Err(e) => last_err = e,
                }
            }
            match parsed {
                Some(workflow) => generated.push(workflow),
                None => return Err(last_err),
            }
        }
        Ok(generated)
    }

    /// Generate condition guidelines grounded in specific workflow steps.
    pub fn generate_condition_guidelines(
        &self,
        pool: &GuidelinePool,
    ) -> Result<Vec<(Guideline, Vec<String>)>, ScalingError> {
        if pool.workflows.is_empty() {
            return Err(ScalingError::EmptyWorkflows);
        }
        let gateway = self.registry.gateway(Role::Generator)?;
        let phase_keys: BTreeSet<String> = pool
            .workflows
            .iter()
            .flat_map(|w| w.phases.iter().map(|p| p.guideline.key.clone()))
            .collect();
        let mut reserved = pool.all_keys();
        let mut last_err = ScalingError::MalformedGuideline("no attempt made".into());
        for _ in 0..3 {
            let response = gateway.complete(&prompts::condition_guidelines(
                &pool.domain,
                &pool.workflows,
            ))?;
            match parse_condition_payload(&response.content, &phase_keys, &mut reserved) {
                Ok(conditions) => return Ok(conditions),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    /// The iterative judge-and-refine quality loop over workflow variants.
    ///
    /// Each iteration, two independent judges assess every workflow for
    /// overlap and conflict and give reasons; failing workflows are rewritten
    /// from the judges' reasons. The returned pool is the snapshot from the
    /// iteration with the highest overall pass rate.
    pub fn judge_and_refine(
        &self,
        pool: GuidelinePool,
        iterations: usize,
    ) -> Result<(GuidelinePool, RefineTrace), ScalingError> {
        let mut current = pool.workflows.clone();
        let mut snapshots: Vec<Vec<Workflow>> = Vec::with_capacity(iterations);
        let mut records = Vec::with_capacity(iterations);

        for iteration in 1..=iterations as u32 {
            snapshots.push(current.clone());
            let verdicts = parallel_map(
                current.clone(),
                self.registry.workers(),
                |workflow| -> Result<WorkflowVerdict, ScalingError> {
                    let mut verdict = WorkflowVerdict::default();
                    for seat in 0..2 {
                        let gateway = self.registry.gateway(Role::Judge(seat))?;
                        let response =
                            gateway.complete(&prompts::refine_judge(&workflow, seat + 1))?;
                        // a verdict that parses to neither pass nor fail counts as fail
                        let (non_overlapping, non_conflicting, reason) =
                            parse_refine_verdict(&response.content);
                        verdict.non_overlapping &= non_overlapping;
                        verdict.non_conflicting &= non_conflicting;
                        if let Some(reason) = reason {
                            verdict.reasons.push(reason);
                        }
                    }
                    Ok(verdict)
                },
            );
            let mut non_overlap_pass = 0usize;
            let mut non_conflict_pass = 0usize;
            let mut overall_pass = 0usize;
            let mut failures: Vec<(usize, Vec<String>)> = Vec::new();
            let total = current.len().max(1);
            for (idx, verdict) in verdicts.into_iter().enumerate() {
                let verdict = verdict?;
                if verdict.non_overlapping {
                    non_overlap_pass += 1;
                }
                if verdict.non_conflicting {
                    non_conflict_pass += 1;
                }
                if verdict.non_overlapping && verdict.non_conflicting {
                    overall_pass += 1;
                } else {
                    failures.push((idx, verdict.reasons));
                }
            }
            records.push(RefineIteration {
                iteration,
                pass_rate_overall: overall_pass as f64 / total as f64,
                pass_rate_nonoverlap: non_overlap_pass as f64 / total as f64,
                pass_rate_nonconflict: non_conflict_pass as f64 / total as f64,
                selected: false,
            });
            if iteration as usize == iterations {
                break;
            }
            for (idx, reasons) in failures {
                let gateway = self.registry.gateway(Role::Refiner)?;
                let response =
                    gateway.complete(&prompts::refine_rewrite(&current[idx], &reasons))?;
                if let Ok(rewritten) = parse_workflow_payload(
                    &response.content,
                    &current[idx].workflow_id,
                    &current[idx].intent,
                ) {
                    current[idx] = rewritten;
                }
            }
        }

        let selected_idx = records
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.pass_rate_overall
                    .partial_cmp(&b.pass_rate_overall)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(ib.cmp(ia)) // ties -> lowest iteration
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        records[selected_idx].selected = true;

        let mut out = pool;
        out.workflows = snapshots[selected_idx].clone();
        Ok((
            out,
            RefineTrace {
                iterations: records,
            },
        ))
    }

    /// Blended similarity per the combined score: α·Sim_emb + (1−α)·Sim_LLM.
    pub fn blended_similarity(&self, a: &Workflow, b: &Workflow) -> Result<f64, ScalingError> {
        BlendedSimilarity {
            registry: self.registry,
            config: self.similarity,
        }
        .blended(a, b)
    }

    pub fn dedup_workflows(
        &self,
        pool: GuidelinePool,
    ) -> Result<(GuidelinePool, DedupTrace), ScalingError> {
        let oracle = BlendedSimilarity {
            registry: self.registry,
            config: self.similarity,
        };
        let rewriter = GatewayRewriter {
            registry: self.registry,
        };
        let (workflows, trace) =
            dedup_workflows_with(pool.workflows.clone(), &self.similarity, &oracle, &rewriter)?;
        let mut out = pool;
        out.workflows = workflows;
        Ok((out, trace))
    }

    /// Full stage: expand intents, workflow variants, and conditions, then
    /// run the refine loop and deduplication. Universal guidelines pass
    /// through untouched.
    pub fn scale(&self, domain: &str, seeds: &GuidelinePool) -> Result<ScaleOutput, ScalingError> {
        let mut pool = seeds.clone();
        pool.domain = domain.to_string();
        for workflow in &pool.workflows {
            pool.provenance
                .entry(workflow.workflow_id.clone())
                .or_insert(ItemProvenance {
                    origin: Origin::Seed,
                    grounded_in: Vec::new(),
                });
        }
        for condition in &pool.conditions {
            pool.provenance
                .entry(condition.key.clone())
                .or_insert(ItemProvenance {
                    origin: Origin::Seed,
                    grounded_in: Vec::new(),
                });
        }

        let seed_intents = pool.intents();
        let new_intents = self.generate_intents(domain, &seed_intents, self.options.intents)?;
        let mut reserved = pool.all_keys();
        for intent in &new_intents {
            let variants =
                self.generate_workflow_variants(intent, &[], self.options.variants_per_intent)?;
            for workflow in variants {
                // distinct intents can still slug to the same id; rekey those
                let workflow = rekey_workflow_if_taken(workflow, &mut reserved);
                pool.provenance.insert(
                    workflow.workflow_id.clone(),
                    ItemProvenance {
                        origin: Origin::Generated { iteration: 0 },
                        grounded_in: Vec::new(),
                    },
                );
                pool.workflows.push(workflow);
            }
        }

        let conditions = self.generate_condition_guidelines(&pool)?;
        for (guideline, grounded_in) in conditions {
            pool.provenance.insert(
                guideline.key.clone(),
                ItemProvenance {
                    origin: Origin::Generated { iteration: 0 },
                    grounded_in,
                },
            );
            pool.conditions.push(guideline);
        }

        let (pool, refine_trace) = self.judge_and_refine(pool, self.options.iterations)?;
        let (pool, dedup_trace) = self.dedup_workflows(pool)?;
        Ok(ScaleOutput {
            pool,
            refine_trace,
            dedup_trace,
        })
    }
}

struct WorkflowVerdict {
    non_overlapping: bool,
    non_conflicting: bool,
    reasons: Vec<String>,
}

impl Default for WorkflowVerdict {
    fn default() -> Self {
        WorkflowVerdict {
            non_overlapping: true,
            non_conflicting: true,
            reasons: Vec::new(),
        }
    }
}

fn parse_refine_verdict(text: &str) -> (bool, bool, Option<String>) {
    match parse_json_lenient(text) {
        Some(value) => {
            let non_overlapping = value["non_overlapping"].as_bool().unwrap_or(false);
            let non_conflicting = value["non_conflicting"].as_bool().unwrap_or(false);
            let reason = value["reason"].as_str().map(str::to_string);
            (non_overlapping, non_conflicting, reason)
        }
        None => (false, false, Some("unparseable judge output".to_string())),
    }
}

fn parse_condition_payload(
    text: &str,
    phase_keys: &BTreeSet<String>,
    reserved: &mut BTreeSet<String>,
) -> Result<Vec<(Guideline, Vec<String>)>, ScalingError> {
    let value =
        parse_json_lenient(text).ok_or_else(|| ScalingError::MalformedGuideline(text.into()))?;
    let items = value
        .as_array()
        .ok_or_else(|| ScalingError::MalformedGuideline("expected a JSON array".into()))?;
    if items.is_empty() {
        return Err(ScalingError::MalformedGuideline(
            "empty condition batch".into(),
        ));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let name = item["name"].as_str().unwrap_or_default();
        let trigger = item["trigger"].as_str().unwrap_or_default();
        let action = item["action"].as_str().unwrap_or_default();
        if trigger.is_empty() || action.is_empty() {
            return Err(ScalingError::MalformedGuideline(
                "condition missing trigger or action".into(),
            ));
        }
        let grounded_in: Vec<String> = item["grounded_in"]
            .as_array()
            .map(|keys| {
                keys.iter()
                    .filter_map(|k| k.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default();
        if grounded_in.is_empty() || grounded_in.iter().any(|k| !phase_keys.contains(k)) {
            return Err(ScalingError::MalformedGuideline(format!(
                "condition `{name}` not grounded in existing workflow steps"
            )));
        }
        let base = if name.is_empty() {
            "condition".to_string()
        } else {
            slugify(name)
        };
        let key = unique_key(base, reserved);
        out.push((Guideline::condition(key, trigger, action), grounded_in));
    }
    Ok(out)
}
