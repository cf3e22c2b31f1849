//! Pipeline for synthesizing guideline-governed, turn-labeled dialogues with
//! controllably injected compliance violations, and for evaluating compliance
//! judges against those labels.
//!
//! Stages: `scaling` expands a seed guideline pool, `forge` produces
//! adversarially optimized violation variants, `synth` simulates labeled
//! dialogues with injected documents, `judge` runs chat and reward-model
//! judges, and `metrics` computes SGA/VDA/CLA. All model access goes through
//! `gateway`; `config` wires providers to roles.

pub mod config;
pub mod forge;
pub mod gateway;
pub mod judge;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod scaling;
pub mod synth;
pub mod util;

pub use config::{PipelineConfig, Registry, Role};
pub use forge::{ForgeConfig, ForgeEngine, VariantStore, ViolationVariant};
pub use gateway::{AuditLog, ChatRequest, ChatResponse, Gateway, ScriptedBackend};
pub use judge::{JudgeMode, JudgeRun, JudgingConfig, TurnPrediction};
pub use metrics::{BenchmarkReport, ConversationScore, ReportFormat};
pub use model::{
    Guideline, GuidelineCategory, GuidelineDocument, GuidelineRef, LabeledDialogue, TurnLabel,
    VariantKind, Workflow,
};
pub use scaling::{GuidelinePool, ScalingEngine, ScalingOptions, SimilarityConfig};
pub use synth::{InjectionConfig, InjectionPlan, Persona, SimulationConfig, SynthEngine};
