//! `gatos`: runs the codebook pipeline, whole or one stage at a time.
//!
//! Exit codes: 0 success, 2 bad configuration or usage, 3 a stage failed,
//! 4 the model server or transcript could not answer.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use gatos_core::gateway::{
    Gateway, GatewayError, HttpBackend, ModelBackend, OfflineModel, Transcript, API_KEY_ENV, ENDPOINT_ENV,
};
use gatos_core::pipeline::{
    self, evaluate_into, load_study, load_truth, read_jsonl, ConfigError, PipelineConfig, RunOptions, Stage,
    StageOutcome,
};
use gatos_core::templates::TemplateSet;
use gatos_core::themes::ThemeRecord;
use gatos_core::{Context, StageError};

#[derive(Parser, Debug)]
#[command(name = "gatos", version, about = "Inductive codebook and theme generation from open-ended text")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, short, global = true, default_value = "gatos-out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replay model responses from this transcript; no model server is contacted.
    #[arg(long, global = true, value_name = "TRANSCRIPT", conflicts_with = "record")]
    mock: Option<PathBuf>,
    /// Call the model and append every response to this transcript.
    #[arg(long, global = true, value_name = "TRANSCRIPT")]
    record: Option<PathBuf>,
    /// Use the built-in rule-based model instead of an HTTP endpoint.
    #[arg(long, global = true)]
    offline: bool,
    /// Directory of prompt template overrides.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Concurrent model requests.
    #[arg(long, global = true, default_value_t = gatos_core::workers::DEFAULT_WORKERS)]
    workers: usize,
    /// Rerun stages even if their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// More logging (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run all stages, or a contiguous range of them.
    Run {
        #[arg(long, value_parser = parse_stage, default_value = "simulate")]
        from: Stage,
        #[arg(long, value_parser = parse_stage, default_value = "evaluate")]
        to: Stage,
    },
    /// Generate a synthetic corpus (or import the configured one).
    Simulate {
        /// Study description (TOML) replacing the config's [study] table.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Summarize every document into points.
    Summarize,
    /// Embed, reduce and cluster the summary points.
    Cluster,
    /// Grow the codebook cluster by cluster.
    Induce,
    /// Consolidate codes into themes.
    Themes,
    /// Compare themes with ground-truth sub-themes.
    Evaluate {
        /// Themes file (JSON Lines) to score instead of the run's own.
        #[arg(long, requires = "truth")]
        themes: Option<PathBuf>,
        /// Ground truth: criteria JSON, JSON array or one sub-theme per line.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Validate the configuration and print it with defaults filled in.
    CheckConfig,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Stage(StageError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure::Stage(StageError::Gateway(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Stage(StageError::Gateway(_)) => 4,
            Failure::Stage(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => error!("{m}"),
                Failure::Stage(e) => error!("{e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn backend(common: &Common, cfg: &PipelineConfig) -> Result<Arc<dyn ModelBackend>, Failure> {
    if common.offline {
        return Ok(Arc::new(OfflineModel));
    }
    let url = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| cfg.run.endpoint_url.clone());
    let key = std::env::var(API_KEY_ENV).ok();
    Ok(Arc::new(HttpBackend::new(url, key)?))
}

fn gateway(common: &Common, cfg: &PipelineConfig) -> Result<Gateway, Failure> {
    if let Some(path) = &common.mock {
        return Ok(Gateway::replay(Transcript::load(path)?));
    }
    let backend = backend(common, cfg)?;
    match &common.record {
        Some(path) => {
            let existing = if path.exists() { Transcript::load(path)? } else { Transcript::default() };
            Ok(Gateway::recording(backend, existing))
        }
        None => Ok(Gateway::live(backend)),
    }
}

fn templates(common: &Common) -> Result<TemplateSet, Failure> {
    match &common.templates {
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(TemplateSet::builtin()),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    if let Command::CheckConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if let Command::Simulate { spec: Some(spec) } = &cli.command {
        let mut study = load_study(spec)?;
        if study.data_type.is_empty() {
            study.data_type = cfg.run.data_type.clone();
        }
        if study.data_collection_context.is_empty() {
            study.data_collection_context = cfg.run.data_collection_context.clone();
        }
        cfg.study = Some(study);
    }
    let templates = templates(common)?;
    let gateway = gateway(common, &cfg)?;
    let mut ctx = Context::new(&gateway, &templates, &cfg.run);
    ctx.workers = common.workers.max(1);

    let result = dispatch(&cli.command, &ctx, &cfg, common);
    if let Some(path) = &common.record {
        gateway.transcript_snapshot().save(path)?;
        info!("transcript written to {}", path.display());
    }
    result
}

fn dispatch(command: &Command, ctx: &Context, cfg: &PipelineConfig, common: &Common) -> Result<(), Failure> {
    let single = |stage: Stage| RunOptions {
        from: stage,
        to: stage,
        force: common.force,
    };
    let opts = match command {
        Command::Run { from, to } => RunOptions {
            from: *from,
            to: *to,
            force: common.force,
        },
        Command::Simulate { .. } => single(Stage::Simulate),
        Command::Summarize => single(Stage::Summarize),
        Command::Cluster => single(Stage::Cluster),
        Command::Induce => single(Stage::Induce),
        Command::Themes => single(Stage::Themes),
        Command::Evaluate { themes: Some(themes), truth } => {
            return evaluate_files(ctx, themes, truth.as_deref(), &common.out);
        }
        Command::Evaluate { themes: None, truth } => {
            if let Some(t) = truth {
                let mut cfg = cfg.clone();
                cfg.input.truth = Some(t.clone());
                return run_range(ctx, &cfg, &common.out, &single(Stage::Evaluate));
            }
            single(Stage::Evaluate)
        }
        Command::CheckConfig => unreachable!("handled before the gateway is built"),
    };
    run_range(ctx, cfg, &common.out, &opts)
}

fn run_range(ctx: &Context, cfg: &PipelineConfig, out: &Path, opts: &RunOptions) -> Result<(), Failure> {
    let report = pipeline::run(ctx, cfg, out, opts)?;
    for (stage, outcome) in &report.outcomes {
        let verb = match outcome {
            StageOutcome::Ran => "done",
            StageOutcome::Skipped => "unchanged, skipped",
        };
        info!("{stage}: {verb}");
        if let Some(r) = report.manifest.result(*stage) {
            for w in &r.warnings {
                warn!("{stage}: {w}");
            }
        }
    }
    let summary = pipeline::stage_dir(out, Stage::Evaluate).join("summary.txt");
    if report.outcomes.iter().any(|(s, _)| *s == Stage::Evaluate) {
        if let Ok(text) = std::fs::read_to_string(summary) {
            print!("{text}");
        }
    }
    Ok(())
}

fn evaluate_files(ctx: &Context, themes: &Path, truth: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let themes: Vec<ThemeRecord> = read_jsonl(themes)?;
    let truth = truth.map(load_truth).transpose()?;
    let warnings = evaluate_into(ctx, out, &themes, truth.as_deref(), None, 0)?;
    for w in warnings {
        warn!("{w}");
    }
    let gateway_audit = ctx.gateway.drain_audit();
    if !gateway_audit.is_empty() {
        warn!("{} unexpected chat calls during evaluation", gateway_audit.len());
    }
    if let Ok(text) = std::fs::read_to_string(out.join("summary.txt")) {
        print!("{text}");
    }
    Ok(())
}
