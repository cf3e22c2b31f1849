//! Command-line entry point wiring all pipeline stages: `scale`, `forge`,
//! `synth`, `judge`, `score`, `report`, and `run-all`. Every command emits a
//! run manifest beside its primary output; `run-all` resumes past stages
//! whose manifests still match.
//!
//! Exit codes: 0 success, 1 partial failures (rejected dialogues,
//! unparseable judge runs), 2 fatal errors.

pub mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use compliance_core::config::{PipelineConfig, Registry};
use compliance_core::forge::{ForgeEngine, VariantStore};
use compliance_core::judge::{self, JudgeMode, JudgeRun};
use compliance_core::metrics::{self, AggregateOptions, ClaMode, ReportFormat};
use compliance_core::model::{load_corpus, save_corpus, ParseMode};
use compliance_core::scaling::{GuidelinePool, ScalingEngine};
use compliance_core::synth::{InjectionConfig, SynthEngine};
use compliance_core::util::{file_sha256, sha256_hex};

use manifest::{stage_up_to_date, RunManifest};

#[derive(Parser, Debug)]
#[command(
    name = "compliance",
    version,
    about = "Synthesize guideline-governed dialogues with injected violations and evaluate compliance judges"
)]
pub struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed override; all stage randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker pool width override.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Ignore unknown fields when reading corpora.
    #[arg(long, global = true)]
    pub lenient: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Expand a seed guideline pool: intents, workflow variants, conditions,
    /// judge-and-refine, deduplication.
    Scale {
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        rewrites: Option<u32>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        intents: Option<usize>,
        #[arg(long)]
        variants: Option<usize>,
    },
    /// Generate and adversarially optimize violation variants.
    Forge {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long = "seed-dialogues")]
        seed_dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long = "harvest-all")]
        harvest_all: bool,
    },
    /// Simulate labeled dialogues from a pool and a variant store.
    Synth {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        variants: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "max-turns")]
        max_turns: Option<usize>,
        #[arg(long)]
        panel: Option<usize>,
        #[arg(long = "conditions-per-doc")]
        conditions_per_doc: Option<usize>,
    },
    /// Run a compliance judge over a corpus.
    Judge {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        judge: String,
        /// chat | reward-cls | reward-gen
        #[arg(long, default_value = "chat")]
        mode: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against corpus labels.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// table | json | csv
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long)]
        relaxed: bool,
        #[arg(long = "cla-violation-label-only")]
        cla_violation_label_only: bool,
    },
    /// Render a stored report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// table | json | csv
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Execute scale → forge → synth → judge → score → report, resuming
    /// stages whose manifests still match.
    RunAll {
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
}

/// Outcome of a command: partial means outputs exist but some work units
/// failed (rejected dialogues, unparseable judge runs).
#[derive(Debug, Default)]
pub struct Outcome {
    pub partial: bool,
    pub notes: Vec<String>,
}

impl Outcome {
    fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }
}

/// Parse argv (without the program name) and run. Returns the process exit
/// code; never panics on user errors.
pub fn run_command<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut argv: Vec<String> = vec!["compliance".into()];
    argv.extend(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own help/usage text
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(outcome) => {
            for note in &outcome.notes {
                eprintln!("note: {note}");
            }
            if outcome.partial {
                1
            } else {
                0
            }
        }
        Err(error) => {
            eprintln!("error: {error:#}");
            2
        }
    }
}

struct Ctx {
    config: PipelineConfig,
    config_hash: String,
    registry: Registry,
    seed: u64,
    parse_mode: ParseMode,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| anyhow!("this command requires --config <file>"))?;
        let config_hash =
            file_sha256(path).with_context(|| format!("config file `{}`", path.display()))?;
        let mut config = PipelineConfig::load(path)?;
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(workers) = cli.workers {
            config.workers = workers;
        }
        let registry = Registry::from_config(&config)?;
        Ok(Ctx {
            seed: config.seed,
            config_hash,
            registry,
            parse_mode: if cli.lenient {
                ParseMode::Lenient
            } else {
                ParseMode::Strict
            },
            config,
        })
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Scale { .. }
        | Command::Forge { .. }
        | Command::Synth { .. }
        | Command::Judge { .. }
        | Command::RunAll { .. } => {
            let ctx = Ctx::load(&cli)?;
            match cli.command {
                Command::Scale {
                    domain,
                    seeds,
                    out,
                    alpha,
                    tau,
                    rewrites,
                    iterations,
                    intents,
                    variants,
                } => {
                    let mut ctx = ctx;
                    if let Some(alpha) = alpha {
                        ctx.config.similarity.alpha = alpha;
                    }
                    if let Some(tau) = tau {
                        ctx.config.similarity.tau = tau;
                    }
                    if let Some(rewrites) = rewrites {
                        ctx.config.similarity.max_rewrites = rewrites;
                    }
                    if let Some(iterations) = iterations {
                        ctx.config.scaling.iterations = iterations;
                    }
                    if let Some(intents) = intents {
                        ctx.config.scaling.intents = intents;
                    }
                    if let Some(variants) = variants {
                        ctx.config.scaling.variants_per_intent = variants;
                    }
                    cmd_scale(&ctx, domain.as_deref(), seeds.as_deref(), &out)
                }
                Command::Forge {
                    pool,
                    seed_dialogues,
                    out,
                    batch,
                    rounds,
                    harvest_all,
                } => {
                    let mut ctx = ctx;
                    if let Some(batch) = batch {
                        ctx.config.forge.batch_size = batch;
                    }
                    if let Some(rounds) = rounds {
                        ctx.config.forge.max_rounds = rounds;
                    }
                    if harvest_all {
                        ctx.config.forge.harvest_all = true;
                    }
                    cmd_forge(&ctx, &pool, &seed_dialogues, &out)
                }
                Command::Synth {
                    pool,
                    variants,
                    count,
                    out,
                    max_turns,
                    panel,
                    conditions_per_doc,
                } => {
                    let mut ctx = ctx;
                    if let Some(max_turns) = max_turns {
                        ctx.config.simulation.max_turns = max_turns;
                    }
                    if let Some(conditions) = conditions_per_doc {
                        ctx.config.simulation.conditions_per_doc = conditions;
                    }
                    if let Some(panel) = panel {
                        resize_panel(&mut ctx.config, panel)?;
                    }
                    cmd_synth(&ctx, &pool, &variants, count, &out)
                }
                Command::Judge {
                    corpus,
                    judge,
                    mode,
                    runs,
                    out,
                } => cmd_judge(&ctx, &corpus, &judge, &mode, runs, &out),
                Command::RunAll { out_dir } => cmd_run_all(&ctx, out_dir.as_deref()),
                _ => unreachable!(),
            }
        }
        Command::Score {
            corpus,
            preds,
            out,
            format,
            relaxed,
            cla_violation_label_only,
        } => cmd_score(
            &cli,
            corpus,
            preds,
            out,
            format,
            *relaxed,
            *cla_violation_label_only,
        ),
        Command::Report { input, format } => cmd_report(input, format),
    }
}

fn resize_panel(config: &mut PipelineConfig, size: usize) -> Result<()> {
    let current = config.simulation.verifier_panel.clone();
    if current.is_empty() {
        bail!("--panel requires a configured verifier_panel to draw providers from");
    }
    if size < 3 || size.is_multiple_of(2) {
        bail!("--panel must be an odd count of at least 3");
    }
    config.simulation.verifier_panel = (0..size)
        .map(|i| current[i % current.len()].clone())
        .collect();
    Ok(())
}

/// Audit call counts scoped to one command within a shared registry.
struct AuditWindow {
    start: usize,
}

impl AuditWindow {
    fn open(registry: &Registry) -> Self {
        AuditWindow {
            start: registry.audit().len(),
        }
    }

    fn counts(&self, registry: &Registry) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for record in registry.audit().records().iter().skip(self.start) {
            *out.entry(record.tag.clone()).or_insert(0) += 1;
        }
        out
    }

    fn write_audit(&self, registry: &Registry, path: &Path) -> Result<()> {
        let mut text = String::new();
        for record in registry.audit().records().iter().skip(self.start) {
            text.push_str(&serde_json::to_string(record)?);
            text.push('\n');
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_stage(
    ctx: &Ctx,
    window: &AuditWindow,
    command: &str,
    inputs: &[&Path],
    outputs: &[&Path],
    primary: &Path,
    started: Instant,
    notes: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest::build(
        command,
        &ctx.config_hash,
        ctx.seed,
        inputs,
        outputs,
        window.counts(&ctx.registry),
        started.elapsed().as_millis() as u64,
        notes,
    )?;
    manifest.write_beside(primary)?;
    window.write_audit(
        &ctx.registry,
        &PathBuf::from(format!("{}.audit.jsonl", primary.display())),
    )?;
    Ok(())
}

/// Load a guideline pool and reject structurally invalid ones up front.
fn load_valid_pool(path: &Path) -> Result<GuidelinePool> {
    let pool = GuidelinePool::load(path)?;
    let report = pool.validate();
    if !report.is_empty() {
        bail!("pool `{}` failed validation:\n{report}", path.display());
    }
    Ok(pool)
}

fn cmd_scale(ctx: &Ctx, domain: Option<&str>, seeds: Option<&Path>, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let window = AuditWindow::open(&ctx.registry);
    let domain = domain.unwrap_or(&ctx.config.domain);
    let seeds_path = seeds
        .map(Path::to_path_buf)
        .or_else(|| ctx.config.paths.seeds.clone())
        .ok_or_else(|| anyhow!("no seed pool: pass --seeds or set paths.seeds in the config"))?;
    let seeds_pool = load_valid_pool(&seeds_path)?;

    let engine = ScalingEngine::new(&ctx.registry, ctx.config.scaling, ctx.config.similarity);
    let output = engine.scale(domain, &seeds_pool)?;
    output.pool.save(out)?;
    let refine_path = PathBuf::from(format!("{}.refine_trace.json", out.display()));
    let dedup_path = PathBuf::from(format!("{}.dedup_trace.json", out.display()));
    std::fs::write(
        &refine_path,
        serde_json::to_string_pretty(&output.refine_trace)?,
    )?;
    std::fs::write(
        &dedup_path,
        serde_json::to_string_pretty(&output.dedup_trace)?,
    )?;

    let mut outcome = Outcome::default();
    outcome.note(format!(
        "scaled pool: {} workflows, {} conditions",
        output.pool.workflows.len(),
        output.pool.conditions.len()
    ));
    finish_stage(
        ctx,
        &window,
        "scale",
        &[&seeds_path],
        &[out, &refine_path, &dedup_path],
        out,
        started,
        outcome.notes.clone(),
    )?;
    Ok(outcome)
}

fn cmd_forge(ctx: &Ctx, pool: &Path, seed_dialogues: &Path, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let window = AuditWindow::open(&ctx.registry);
    let pool_data = load_valid_pool(pool)?;
    let seed_corpus = load_corpus(seed_dialogues, ctx.parse_mode)?;
    let engine = ForgeEngine::new(&ctx.registry, ctx.config.forge);
    let store = engine.forge_all(&pool_data, &seed_corpus)?;
    store.save(out)?;
    let mut outcome = Outcome::default();
    outcome.note(format!(
        "accepted {} variants across {} guidelines",
        store.len(),
        store.variants.len()
    ));
    finish_stage(
        ctx,
        &window,
        "forge",
        &[pool, seed_dialogues],
        &[out],
        out,
        started,
        outcome.notes.clone(),
    )?;
    Ok(outcome)
}

fn cmd_synth(ctx: &Ctx, pool: &Path, variants: &Path, count: usize, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let window = AuditWindow::open(&ctx.registry);
    let pool_data = load_valid_pool(pool)?;
    let store = VariantStore::load(variants)?;
    let engine = SynthEngine::new(
        &ctx.registry,
        ctx.config.simulation.clone(),
        ctx.config.injection,
        ctx.config.domain.clone(),
        ctx.seed,
    );
    let (corpus, report) = engine.synth_corpus(&pool_data, &store, count, "dlg")?;
    save_corpus(&corpus, out)?;
    let report_path = PathBuf::from(format!("{}.run_report.json", out.display()));
    report.save(&report_path)?;
    let mut outcome = Outcome {
        partial: report.rejected > 0 || report.aborted > 0,
        notes: vec![],
    };
    outcome.note(format!(
        "generated {} dialogues ({} rejected, {} aborted), mean turns {:.1}, mean violations {:.1}",
        report.generated,
        report.rejected,
        report.aborted,
        report.mean_turns,
        report.mean_violations
    ));
    finish_stage(
        ctx,
        &window,
        "synth",
        &[pool, variants],
        &[out, &report_path],
        out,
        started,
        outcome.notes.clone(),
    )?;
    Ok(outcome)
}

fn parse_judge_mode(mode: &str) -> Result<JudgeMode> {
    match mode {
        "chat" => Ok(JudgeMode::ChatJudge),
        "reward-cls" => Ok(JudgeMode::RewardClassifier),
        "reward-gen" => Ok(JudgeMode::RewardGenerative),
        other => bail!("unknown judge mode `{other}` (expected chat|reward-cls|reward-gen)"),
    }
}

fn cmd_judge(
    ctx: &Ctx,
    corpus_path: &Path,
    judge_name: &str,
    mode: &str,
    runs: Option<usize>,
    out: &Path,
) -> Result<Outcome> {
    let started = Instant::now();
    let window = AuditWindow::open(&ctx.registry);
    let corpus = load_corpus(corpus_path, ctx.parse_mode)?;
    let gateway = ctx.registry.named(judge_name)?;
    let mode = parse_judge_mode(mode)?;
    let judge_runs: Vec<JudgeRun> = match mode {
        JudgeMode::ChatJudge => {
            let runs = runs.unwrap_or(ctx.config.judging.runs);
            judge::run_benchmark(gateway, judge_name, &corpus, runs, ctx.config.workers)
        }
        JudgeMode::RewardClassifier => corpus
            .iter()
            .map(|dialogue| judge::reward_classifier_eval(gateway, judge_name, dialogue))
            .collect(),
        JudgeMode::RewardGenerative => {
            let votes = ctx.config.judging.votes;
            let mut out = Vec::with_capacity(corpus.len());
            for dialogue in &corpus {
                out.push(judge::reward_generative_eval(
                    gateway,
                    judge_name,
                    dialogue,
                    &dialogue.oracle_document,
                    votes,
                )?);
            }
            out
        }
    };
    judge::save_runs(&judge_runs, out)?;
    let unparseable = judge_runs.iter().filter(|r| r.unparseable).count()
        + judge_runs
            .iter()
            .flat_map(|r| &r.predictions)
            .filter(|p| p.parse_failed)
            .count();
    let mut outcome = Outcome {
        partial: unparseable > 0,
        notes: vec![],
    };
    outcome.note(format!(
        "{} judge runs written ({} unparseable items)",
        judge_runs.len(),
        unparseable
    ));
    finish_stage(
        ctx,
        &window,
        "judge",
        &[corpus_path],
        &[out],
        out,
        started,
        outcome.notes.clone(),
    )?;
    Ok(outcome)
}

fn cmd_score(
    cli: &Cli,
    corpus_path: &Path,
    preds_path: &Path,
    out: &Path,
    format: &str,
    relaxed: bool,
    cla_violation_label_only: bool,
) -> Result<Outcome> {
    let started = Instant::now();
    let parse_mode = if cli.lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    };
    let corpus = load_corpus(corpus_path, parse_mode)?;
    let runs = judge::load_runs(preds_path)?;
    let options = AggregateOptions {
        relaxed,
        cla_mode: if cla_violation_label_only {
            ClaMode::ViolationLabelOnly
        } else {
            ClaMode::Strict
        },
    };
    let report = metrics::aggregate(&runs, &corpus, options)?;
    metrics::save_report(&report, out)?;
    let format: ReportFormat = format.parse().map_err(|e: String| anyhow!(e))?;
    println!("{}", metrics::render_report(&report, format));

    let config_hash = cli
        .config
        .as_deref()
        .map(file_sha256)
        .transpose()?
        .unwrap_or_else(|| sha256_hex(b""));
    let manifest = RunManifest::build(
        "score",
        &config_hash,
        cli.seed.unwrap_or(0),
        &[corpus_path, preds_path],
        &[out],
        BTreeMap::new(),
        started.elapsed().as_millis() as u64,
        vec![],
    )?;
    manifest.write_beside(out)?;
    Ok(Outcome::default())
}

fn cmd_report(input: &Path, format: &str) -> Result<Outcome> {
    let started = Instant::now();
    let report = metrics::load_report(input)?;
    let format: ReportFormat = format.parse().map_err(|e: String| anyhow!(e))?;
    println!("{}", metrics::render_report(&report, format));
    // manifest named after the command so it never clobbers the score manifest
    let manifest = RunManifest::build(
        "report",
        &sha256_hex(b""),
        0,
        &[input],
        &[],
        BTreeMap::new(),
        started.elapsed().as_millis() as u64,
        vec![],
    )?;
    manifest.write_beside(&PathBuf::from(format!("{}.report", input.display())))?;
    Ok(Outcome::default())
}

/// Standard artifact names inside the run-all output directory.
pub struct RunAllPaths {
    pub pool: PathBuf,
    pub seed_corpus: PathBuf,
    pub variants: PathBuf,
    pub corpus: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub report_txt: PathBuf,
}

impl RunAllPaths {
    pub fn in_dir(dir: &Path) -> Self {
        RunAllPaths {
            pool: dir.join("pool.json"),
            seed_corpus: dir.join("seed_corpus.jsonl"),
            variants: dir.join("variants.json"),
            corpus: dir.join("corpus.jsonl"),
            predictions: dir.join("predictions.jsonl"),
            report: dir.join("report.json"),
            report_txt: dir.join("report.txt"),
        }
    }
}

fn cmd_run_all(ctx: &Ctx, out_dir: Option<&Path>) -> Result<Outcome> {
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.config.paths.out_dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    let paths = RunAllPaths::in_dir(&out_dir);
    let mut outcome = Outcome::default();

    // scale
    if stage_up_to_date(&paths.pool, "scale", &ctx.config_hash) {
        outcome.note("scale: skipped (manifest hash match)");
    } else {
        let scale = cmd_scale(ctx, None, None, &paths.pool)?;
        outcome.partial |= scale.partial;
        outcome.notes.extend(scale.notes);
    }

    // forge (seed corpus with zero injections, then adversarial optimization)
    if stage_up_to_date(&paths.variants, "forge", &ctx.config_hash) {
        outcome.note("forge: skipped (manifest hash match)");
    } else {
        let started = Instant::now();
        let window = AuditWindow::open(&ctx.registry);
        let pool = load_valid_pool(&paths.pool)?;
        let seed_engine = SynthEngine::new(
            &ctx.registry,
            ctx.config.simulation.clone(),
            InjectionConfig {
                workflow_rate: 0.0,
                condition_prob: 0.0,
            },
            ctx.config.domain.clone(),
            ctx.seed,
        );
        let (seed_corpus, seed_report) = seed_engine.synth_corpus(
            &pool,
            &VariantStore::default(),
            ctx.config.run_all.seed_dialogues,
            "seed",
        )?;
        save_corpus(&seed_corpus, &paths.seed_corpus)?;
        outcome.partial |= seed_report.rejected > 0 || seed_report.aborted > 0;

        let engine = ForgeEngine::new(&ctx.registry, ctx.config.forge);
        let store = engine.forge_all(&pool, &seed_corpus)?;
        store.save(&paths.variants)?;
        let note = format!(
            "forge: {} accepted variants across {} guidelines",
            store.len(),
            store.variants.len()
        );
        finish_stage(
            ctx,
            &window,
            "forge",
            &[paths.pool.as_path()],
            &[paths.seed_corpus.as_path(), paths.variants.as_path()],
            &paths.variants,
            started,
            vec![note.clone()],
        )?;
        outcome.note(note);
    }

    // synth
    if stage_up_to_date(&paths.corpus, "synth", &ctx.config_hash) {
        outcome.note("synth: skipped (manifest hash match)");
    } else {
        let synth = cmd_synth(
            ctx,
            &paths.pool,
            &paths.variants,
            ctx.config.run_all.dialogues,
            &paths.corpus,
        )?;
        outcome.partial |= synth.partial;
        outcome.notes.extend(synth.notes);
    }

    // judge
    let judge_name = ctx
        .config
        .run_all
        .judge
        .clone()
        .unwrap_or_else(|| ctx.config.roles.judges[0].clone());
    if stage_up_to_date(&paths.predictions, "judge", &ctx.config_hash) {
        outcome.note("judge: skipped (manifest hash match)");
    } else {
        let judged = cmd_judge(
            ctx,
            &paths.corpus,
            &judge_name,
            "chat",
            None,
            &paths.predictions,
        )?;
        outcome.partial |= judged.partial;
        outcome.notes.extend(judged.notes);
    }

    // score
    if stage_up_to_date(&paths.report, "score", &ctx.config_hash) {
        outcome.note("score: skipped (manifest hash match)");
    } else {
        let started = Instant::now();
        let corpus = load_corpus(&paths.corpus, ctx.parse_mode)?;
        let runs = judge::load_runs(&paths.predictions)?;
        let report = metrics::aggregate(&runs, &corpus, AggregateOptions::default())?;
        metrics::save_report(&report, &paths.report)?;
        let manifest = RunManifest::build(
            "score",
            &ctx.config_hash,
            ctx.seed,
            &[paths.corpus.as_path(), paths.predictions.as_path()],
            &[paths.report.as_path()],
            BTreeMap::new(),
            started.elapsed().as_millis() as u64,
            vec![],
        )?;
        manifest.write_beside(&paths.report)?;
    }

    // report
    let report = metrics::load_report(&paths.report)?;
    let rendered = metrics::render_report(&report, ReportFormat::Table);
    std::fs::write(&paths.report_txt, &rendered)?;
    println!("{rendered}");

    Ok(outcome)
}
