//! Pipeline configuration: provider definitions, role wiring, stage
//! parameters, and the registry that turns a config into live gateways.
//!
//! The pipeline's standard constants (30% workflow replacement, 50%
//! condition probability, 20-turn cap, 0.8 similarity threshold, 10 refine
//! iterations, 4 judge runs, 3 reward votes) all live here as defaulted,
//! overridable fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::ForgeConfig;
use crate::gateway::{
    AuditLog, Gateway, HttpBackend, HttpBackendConfig, RetryPolicy, ScriptedBackend,
};
use crate::judge::JudgingConfig;
use crate::scaling::{ScalingOptions, SimilarityConfig};
use crate::synth::{InjectionConfig, SimulationConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io failure for `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("role `{role}` references unknown provider `{name}`")]
    UnknownProvider { role: String, name: String },
    #[error("provider `{name}`: {reason}")]
    Provider { name: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// How a named provider is backed.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic canned provider; `script` is a path to a script spec
    /// JSON, `inline` embeds the script document directly.
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
        #[serde(default)]
        inline: Option<serde_json::Value>,
    },
    Http(HttpBackendConfig),
}

#[derive(Clone, Debug, Deserialize)]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub kind: ProviderKind,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_backoff_multiplier")]
    pub backoff_multiplier: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1_000
}
fn default_backoff_multiplier() -> f64 {
    2.0
}
fn default_max_in_flight() -> usize {
    5
}

/// Which provider serves each pipeline role; every role is independently
/// configurable.
#[derive(Clone, Debug, Deserialize)]
pub struct RoleMap {
    pub generator: String,
    pub selector: String,
    pub assistant: String,
    pub user_sim: String,
    pub judges: Vec<String>,
    pub refiner: String,
    pub embedder: String,
    #[serde(default)]
    pub scorer: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Selector,
    Assistant,
    UserSim,
    Judge(usize),
    Refiner,
    Embedder,
    Scorer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathsConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seeds: Option<PathBuf>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: default_out_dir(),
            seeds: None,
        }
    }
}

/// Parameters consumed only by the `run-all` orchestration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunAllConfig {
    #[serde(default = "default_dialogues")]
    pub dialogues: usize,
    /// Benchmark judge provider name; defaults to the first judge role.
    #[serde(default)]
    pub judge: Option<String>,
    #[serde(default = "default_seed_dialogues")]
    pub seed_dialogues: usize,
}

fn default_dialogues() -> usize {
    10
}
fn default_seed_dialogues() -> usize {
    1
}

impl Default for RunAllConfig {
    fn default() -> Self {
        RunAllConfig {
            dialogues: default_dialogues(),
            judge: None,
            seed_dialogues: default_seed_dialogues(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct PipelineConfig {
    pub domain: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub providers: BTreeMap<String, ProviderConfig>,
    pub roles: RoleMap,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub scaling: ScalingOptions,
    #[serde(default)]
    pub forge: ForgeConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub injection: InjectionConfig,
    #[serde(default)]
    pub judging: JudgingConfig,
    #[serde(default)]
    pub run_all: RunAllConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_workers() -> usize {
    1
}

impl PipelineConfig {
    /// Load from a JSON file, resolving relative script and seed paths
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for provider in config.providers.values_mut() {
            if let ProviderKind::Scripted {
                script: Some(script),
                ..
            } = &mut provider.kind
            {
                if script.is_relative() {
                    *script = base.join(&script);
                }
            }
        }
        if let Some(seeds) = &mut config.paths.seeds {
            if seeds.is_relative() {
                *seeds = base.join(&seeds);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let rate = self.injection.workflow_rate;
        if !(0.0..=1.0).contains(&rate) {
            return Err(invalid("injection.workflow_rate", "must be in [0,1]"));
        }
        let prob = self.injection.condition_prob;
        if !(0.0..=1.0).contains(&prob) {
            return Err(invalid("injection.condition_prob", "must be in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.similarity.alpha) {
            return Err(invalid("similarity.alpha", "must be in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.similarity.tau) {
            return Err(invalid("similarity.tau", "must be in [0,1]"));
        }
        if self.roles.judges.is_empty() {
            return Err(invalid(
                "roles.judges",
                "at least one judge provider required",
            ));
        }
        let mut role_refs: Vec<(&str, &str)> = vec![
            ("roles.generator", &self.roles.generator),
            ("roles.selector", &self.roles.selector),
            ("roles.assistant", &self.roles.assistant),
            ("roles.user_sim", &self.roles.user_sim),
            ("roles.refiner", &self.roles.refiner),
            ("roles.embedder", &self.roles.embedder),
        ];
        for judge in &self.roles.judges {
            role_refs.push(("roles.judges", judge));
        }
        if let Some(scorer) = &self.roles.scorer {
            role_refs.push(("roles.scorer", scorer));
        }
        for name in &self.simulation.verifier_panel {
            role_refs.push(("simulation.verifier_panel", name));
        }
        for (role, name) in role_refs {
            if !self.providers.contains_key(name) {
                return Err(ConfigError::UnknownProvider {
                    role: role.to_string(),
                    name: name.to_string(),
                });
            }
        }
        let panel = self.simulation.verifier_panel.len();
        if panel < 3 || panel.is_multiple_of(2) {
            return Err(invalid(
                "simulation.verifier_panel",
                "verifier panel must be an odd count of at least 3",
            ));
        }
        Ok(())
    }
}

/// Live gateways for every configured provider, with one shared audit log.
pub struct Registry {
    gateways: BTreeMap<String, Gateway>,
    roles: RoleMap,
    audit: AuditLog,
    fallback: Option<Gateway>,
    workers: usize,
}

impl Registry {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, ConfigError> {
        let audit = AuditLog::new();
        let mut gateways = BTreeMap::new();
        for (name, provider) in &config.providers {
            let backend: Arc<dyn crate::gateway::Backend> = match &provider.kind {
                ProviderKind::Scripted { script, inline } => {
                    let mut spec_value = match (script, inline) {
                        (Some(path), _) => {
                            let text = std::fs::read_to_string(path).map_err(|source| {
                                ConfigError::Io {
                                    path: path.display().to_string(),
                                    source,
                                }
                            })?;
                            serde_json::from_str(&text)?
                        }
                        (None, Some(value)) => value.clone(),
                        (None, None) => serde_json::json!({}),
                    };
                    if spec_value.get("id").is_none() {
                        spec_value["id"] = serde_json::json!(name);
                    }
                    let scripted: ScriptedBackend = serde_json::from_value(spec_value)?;
                    Arc::new(scripted)
                }
                ProviderKind::Http(http) => {
                    let backend =
                        HttpBackend::new(name.clone(), http.clone()).map_err(|reason| {
                            ConfigError::Provider {
                                name: name.clone(),
                                reason,
                            }
                        })?;
                    Arc::new(backend)
                }
            };
            let policy = RetryPolicy {
                attempts: provider.retries,
                initial_backoff_ms: provider.backoff_ms,
                backoff_multiplier: provider.backoff_multiplier,
            };
            gateways.insert(
                name.clone(),
                Gateway::new(backend, policy, provider.max_in_flight, audit.clone()),
            );
        }
        Ok(Registry {
            gateways,
            roles: config.roles.clone(),
            audit,
            fallback: None,
            workers: config.workers,
        })
    }

    /// One scripted backend serving every role and every provider name;
    /// the standard harness for offline tests.
    pub fn uniform(backend: ScriptedBackend) -> Self {
        let audit = AuditLog::new();
        let gateway = Gateway::scripted(backend, audit.clone());
        Registry {
            gateways: BTreeMap::new(),
            roles: RoleMap {
                generator: "scripted".into(),
                selector: "scripted".into(),
                assistant: "scripted".into(),
                user_sim: "scripted".into(),
                judges: vec!["scripted".into()],
                refiner: "scripted".into(),
                embedder: "scripted".into(),
                scorer: Some("scripted".into()),
            },
            audit,
            fallback: Some(gateway),
            workers: 1,
        }
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn judge_count(&self) -> usize {
        self.roles.judges.len()
    }

    /// Gateway for a named provider (used by verifier panels and the
    /// benchmark `--judge` flag).
    pub fn named(&self, name: &str) -> Result<&Gateway, ConfigError> {
        self.gateways
            .get(name)
            .or(self.fallback.as_ref())
            .ok_or_else(|| ConfigError::UnknownProvider {
                role: "named".to_string(),
                name: name.to_string(),
            })
    }

    pub fn gateway(&self, role: Role) -> Result<&Gateway, ConfigError> {
        let name = match role {
            Role::Generator => self.roles.generator.clone(),
            Role::Selector => self.roles.selector.clone(),
            Role::Assistant => self.roles.assistant.clone(),
            Role::UserSim => self.roles.user_sim.clone(),
            Role::Judge(i) => {
                let judges = &self.roles.judges;
                judges[i % judges.len().max(1)].clone()
            }
            Role::Refiner => self.roles.refiner.clone(),
            Role::Embedder => self.roles.embedder.clone(),
            Role::Scorer => self
                .roles
                .scorer
                .clone()
                .ok_or_else(|| invalid("roles.scorer", "no scorer provider configured"))?,
        };
        self.named(&name)
    }
}
