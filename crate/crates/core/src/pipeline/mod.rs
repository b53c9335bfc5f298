//! Stage orchestration: runs the six stages in order, writes their
//! artifacts under one output directory and records a manifest so an
//! interrupted or repeated run only redoes stages whose inputs changed.

mod artifacts;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{sha256_hex, Cluster, CodeEntry, Codebook, CreationLogEntry, Document, SummaryPoint};
use crate::error::StageError;
use crate::evaluation::{coverage_report, creation_rate_report, match_table_markdown, match_themes, ratio_summary};
use crate::induction::{generate_starter_codes, induce_codebook};
use crate::semantic::{agglomerative_cluster, reduce, NeighborParams, ReduceParams, ReducedMatrix};
use crate::simulator::{generate_criteria, sample_plan, synthesize_documents, Criteria, StudySpec};
use crate::summarization::summarize_corpus;
use crate::themes::{consolidate, ThemeRecord};
use crate::Context;

pub use artifacts::{file_hash, read_json, read_jsonl, write_csv, write_json, write_jsonl};
pub use config::{validate_config, ConfigError, InputConfig, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Summarize,
    Cluster,
    Induce,
    Themes,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Summarize,
        Stage::Cluster,
        Stage::Induce,
        Stage::Themes,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Summarize => "summarize",
            Stage::Cluster => "cluster",
            Stage::Induce => "induce",
            Stage::Themes => "themes",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate => &[],
            Stage::Summarize => &[Stage::Simulate],
            Stage::Cluster => &[Stage::Summarize],
            Stage::Induce => &[Stage::Summarize, Stage::Cluster],
            Stage::Themes => &[Stage::Induce],
            Stage::Evaluate => &[Stage::Simulate, Stage::Induce, Stage::Themes],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Per-stage seed: the first eight bytes of sha256(seed || stage name).
pub fn derive_seed(seed: u64, stage: Stage) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.name().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub input_hashes: Vec<String>,
    /// Stage directory, relative to the output root.
    pub output_path: String,
    /// Hash over the stage's artifact files and their hashes.
    pub output_hash: String,
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Done(StageResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stage_statuses: BTreeMap<Stage, StageStatus>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            stage_statuses: Stage::ALL.into_iter().map(|s| (s, StageStatus::Pending)).collect(),
        }
    }

    pub fn load(out_dir: &Path) -> Result<Option<Self>, StageError> {
        let path = out_dir.join(Self::FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    fn save(&self, out_dir: &Path) -> Result<(), StageError> {
        write_json(&out_dir.join(Self::FILE), self)
    }

    pub fn result(&self, stage: Stage) -> Option<&StageResult> {
        match self.stage_statuses.get(&stage) {
            Some(StageStatus::Done(r)) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub from: Stage,
    pub to: Stage,
    /// Rerun stages even when their inputs are unchanged.
    pub force: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            from: Stage::Simulate,
            to: Stage::Evaluate,
            force: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub outcomes: Vec<(Stage, StageOutcome)>,
}

/// Hash of the effective configuration and the prompt templates.
pub fn config_hash(cfg: &PipelineConfig, template_digest: &str) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    sha256_hex(format!("{json}\n{template_digest}").as_bytes())
}

pub fn stage_dir(out_dir: &Path, stage: Stage) -> PathBuf {
    out_dir.join(stage.name())
}

/// Runs the stages from `opts.from` to `opts.to`. Stages before `from`
/// must already be complete in `out_dir`.
pub fn run(ctx: &Context, cfg: &PipelineConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunReport, StageError> {
    if opts.from > opts.to {
        return Err(StageError::Precondition(format!("from stage {} comes after to stage {}", opts.from, opts.to)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| StageError::io(out_dir, e))?;
    let chash = config_hash(cfg, &ctx.templates.digest());
    let mut manifest = match RunManifest::load(out_dir)? {
        Some(m) if m.config_hash == chash => m,
        _ => RunManifest::new(chash.clone()),
    };
    std::fs::write(out_dir.join("effective_config.toml"), cfg.to_toml()).map_err(|e| StageError::io(out_dir, e))?;

    let mut outcomes = Vec::new();
    for stage in Stage::ALL {
        if stage < opts.from || stage > opts.to {
            continue;
        }
        let inputs = stage_inputs(&manifest, cfg, stage, &chash)?;
        if !opts.force {
            if let Some(prev) = manifest.result(stage) {
                if prev.input_hashes == inputs && outputs_intact(out_dir, prev) {
                    info!("{stage}: inputs unchanged, skipping");
                    outcomes.push((stage, StageOutcome::Skipped));
                    continue;
                }
            }
        }
        info!("{stage}: running");
        let dir = stage_dir(out_dir, stage);
        std::fs::create_dir_all(&dir).map_err(|e| StageError::io(&dir, e))?;
        let started = Instant::now();
        ctx.gateway.drain_audit();
        let warnings = run_stage(ctx, cfg, out_dir, stage)?;
        let audit = ctx.gateway.drain_audit();
        write_jsonl(&dir.join("prompts.jsonl"), &audit)?;
        let outputs = hash_outputs(&dir)?;
        let output_hash = combined_hash(&outputs);
        let changed = manifest.result(stage).map(|p| p.output_hash != output_hash).unwrap_or(true);
        manifest.stage_statuses.insert(
            stage,
            StageStatus::Done(StageResult {
                stage,
                input_hashes: inputs,
                output_path: stage.name().to_string(),
                output_hash,
                outputs,
                duration_secs: started.elapsed().as_secs_f64(),
                warnings,
            }),
        );
        if changed {
            for later in Stage::ALL.into_iter().filter(|s| *s > stage) {
                manifest.stage_statuses.insert(later, StageStatus::Pending);
            }
        }
        manifest.save(out_dir)?;
        outcomes.push((stage, StageOutcome::Ran));
    }
    manifest.save(out_dir)?;
    Ok(RunReport { manifest, outcomes })
}

fn stage_inputs(manifest: &RunManifest, cfg: &PipelineConfig, stage: Stage, chash: &str) -> Result<Vec<String>, StageError> {
    let mut inputs = vec![chash.to_string(), format!("seed:{}", derive_seed(cfg.run.seed, stage))];
    for up in stage.upstream() {
        let r = manifest.result(*up).ok_or_else(|| {
            StageError::Precondition(format!("{stage} needs the {up} stage to be complete first"))
        })?;
        inputs.push(format!("{up}:{}", r.output_hash));
    }
    let external = match stage {
        Stage::Simulate if cfg.study.is_none() => cfg.input.corpus.as_deref(),
        Stage::Evaluate => cfg.input.truth.as_deref(),
        _ => None,
    };
    if let Some(path) = external {
        inputs.push(format!("{}:{}", path.display(), file_hash(path)?));
    }
    Ok(inputs)
}

fn outputs_intact(out_dir: &Path, result: &StageResult) -> bool {
    let dir = out_dir.join(&result.output_path);
    result
        .outputs
        .iter()
        .all(|(name, hash)| file_hash(&dir.join(name)).map(|h| &h == hash).unwrap_or(false))
}

fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>, StageError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| StageError::io(dir, e))? {
        let entry = entry.map_err(|e| StageError::io(dir, e))?;
        if entry.path().is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), file_hash(&entry.path())?);
        }
    }
    Ok(out)
}

fn combined_hash(outputs: &BTreeMap<String, String>) -> String {
    let joined: String = outputs.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
    sha256_hex(joined.as_bytes())
}

fn run_stage(ctx: &Context, cfg: &PipelineConfig, out: &Path, stage: Stage) -> Result<Vec<String>, StageError> {
    let dir = stage_dir(out, stage);
    let seed = derive_seed(cfg.run.seed, stage);
    match stage {
        Stage::Simulate => simulate_stage(ctx, cfg, &dir, seed),
        Stage::Summarize => summarize_stage(ctx, out, &dir),
        Stage::Cluster => cluster_stage(ctx, out, &dir, seed),
        Stage::Induce => induce_stage(ctx, out, &dir),
        Stage::Themes => themes_stage(ctx, out, &dir, seed),
        Stage::Evaluate => evaluate_stage(ctx, cfg, out, &dir),
    }
}

const CORPUS: &str = "corpus.jsonl";
const CRITERIA: &str = "criteria.json";
const POINTS: &str = "summary_points.jsonl";
const CLUSTERS: &str = "clusters.jsonl";
const CODEBOOK: &str = "codebook.jsonl";
const CREATION_LOG: &str = "creation_log.jsonl";
const THEMES: &str = "themes.jsonl";

fn simulate_stage(ctx: &Context, cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<Vec<String>, StageError> {
    let Some(study) = &cfg.study else {
        let path = cfg.input.corpus.as_deref().expect("validated config has a corpus");
        let docs = load_corpus(path)?;
        write_jsonl(&dir.join(CORPUS), &docs)?;
        return Ok(Vec::new());
    };
    let mut warnings = Vec::new();
    let criteria = generate_criteria(ctx, study)?;
    write_json(&dir.join(CRITERIA), &criteria)?;
    let plan = sample_plan(study, &criteria, &ctx.config.chat_model_id, seed)?;
    write_jsonl(&dir.join("plan.jsonl"), &plan.rows)?;
    let (docs, report) = synthesize_documents(ctx, study, &plan)?;
    if report.rejected > 0 {
        warnings.push(format!("{} of {} generated responses rejected", report.rejected, report.planned));
    }
    write_json(&dir.join("rejections.json"), &report)?;
    write_jsonl(&dir.join(CORPUS), &docs)?;
    Ok(warnings)
}

/// Reads a corpus: JSON Lines of documents, or of `{"text": ...}` objects,
/// or plain text with one response per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, StageError> {
    if let Ok(docs) = read_jsonl::<Document>(path) {
        crate::domain::validate_corpus(&docs)?;
        return Ok(docs);
    }
    #[derive(Deserialize)]
    struct TextOnly {
        text: String,
    }
    let texts: Vec<String> = match read_jsonl::<TextOnly>(path) {
        Ok(rows) => rows.into_iter().map(|r| r.text).collect(),
        Err(_) => std::fs::read_to_string(path)
            .map_err(|e| StageError::io(path, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
    };
    let docs = texts.into_iter().map(Document::imported).collect::<Result<Vec<_>, _>>()?;
    crate::domain::validate_corpus(&docs)?;
    Ok(docs)
}

fn summarize_stage(ctx: &Context, out: &Path, dir: &Path) -> Result<Vec<String>, StageError> {
    let docs: Vec<Document> = read_jsonl(&stage_dir(out, Stage::Simulate).join(CORPUS))?;
    let result = summarize_corpus(ctx, &docs)?;
    write_jsonl(&dir.join(POINTS), &result.points)?;
    write_json(&dir.join("summary_stats.json"), &result.stats)?;
    write_csv(
        &dir.join("summary_histogram.csv"),
        &["points_per_document", "documents"],
        result.stats.histogram.iter().map(|(p, n)| vec![p.to_string(), n.to_string()]),
    )?;
    write_jsonl(&dir.join("summary_failures.jsonl"), &result.failures)?;
    Ok(result
        .failures
        .iter()
        .map(|f| format!("document {} unparseable: {}", f.doc_id, f.error))
        .collect())
}

fn cluster_stage(ctx: &Context, out: &Path, dir: &Path, seed: u64) -> Result<Vec<String>, StageError> {
    let points: Vec<SummaryPoint> = read_jsonl(&stage_dir(out, Stage::Summarize).join(POINTS))?;
    if points.is_empty() {
        return Err(StageError::Precondition("no summary points to cluster".into()));
    }
    let texts: Vec<String> = points.iter().map(|p| p.text.clone()).collect();
    let ids: Vec<String> = points.iter().map(|p| p.id.clone()).collect();
    let vectors = ctx.embed(&texts)?;
    let params = ReduceParams {
        variance_target: ctx.config.pca_variance_target,
        dims: ctx.config.reduced_dims,
        seed,
        neighbor: NeighborParams::default(),
    };
    let (reduced, warnings) = reduce(&vectors, &ids, &params)?;
    let clusters = agglomerative_cluster(&reduced.coords, &reduced.row_ids, ctx.config.target_cluster_size);
    write_json(&dir.join("reduced.json"), &reduced)?;
    write_jsonl(&dir.join(CLUSTERS), &clusters)?;
    write_csv(
        &dir.join("clusters.csv"),
        &["cluster_id", "summary_point_id"],
        clusters
            .iter()
            .flat_map(|c| c.member_ids.iter().map(move |m| vec![c.id.to_string(), m.clone()])),
    )?;
    Ok(warnings)
}

fn induce_stage(ctx: &Context, out: &Path, dir: &Path) -> Result<Vec<String>, StageError> {
    let points: Vec<SummaryPoint> = read_jsonl(&stage_dir(out, Stage::Summarize).join(POINTS))?;
    let clusters: Vec<Cluster> = read_jsonl(&stage_dir(out, Stage::Cluster).join(CLUSTERS))?;
    let starters = generate_starter_codes(ctx)?;
    write_jsonl(&dir.join("starter_codes.jsonl"), &starters)?;
    let result = induce_codebook(ctx, &clusters, &points, &starters)?;
    write_jsonl(&dir.join(CODEBOOK), &result.codebook.entries)?;
    write_jsonl(&dir.join(CREATION_LOG), &result.codebook.creation_log)?;
    write_jsonl(&dir.join("decisions.jsonl"), &result.decisions)?;
    write_csv(
        &dir.join("creation_curve.csv"),
        &["cluster_ordinal", "cumulative_codes", "diagonal_reference"],
        creation_rate_report(&result.codebook).iter().map(|r| {
            vec![
                r.cluster_ordinal.to_string(),
                r.cumulative_codes.to_string(),
                r.diagonal_reference.to_string(),
            ]
        }),
    )?;
    Ok(result
        .decisions
        .iter()
        .filter_map(|d| d.error.as_ref().map(|e| format!("cluster {}: {e}", d.cluster_id)))
        .collect())
}

fn load_codebook(out: &Path) -> Result<Codebook, StageError> {
    let dir = stage_dir(out, Stage::Induce);
    Ok(Codebook {
        entries: read_jsonl::<CodeEntry>(&dir.join(CODEBOOK))?,
        creation_log: read_jsonl::<CreationLogEntry>(&dir.join(CREATION_LOG))?,
    })
}

fn themes_stage(ctx: &Context, out: &Path, dir: &Path, seed: u64) -> Result<Vec<String>, StageError> {
    let codebook = load_codebook(out)?;
    let result = consolidate(ctx, &codebook, seed)?;
    write_jsonl(&dir.join(THEMES), &result.themes)?;
    write_json(&dir.join("unclassified.json"), &result.unclassified)?;
    write_jsonl(&dir.join("theme_clusters.jsonl"), &result.clusters)?;
    write_csv(
        &dir.join("theme_codes.csv"),
        &["theme", "code"],
        result
            .themes
            .iter()
            .flat_map(|t| t.theme.codes.iter().map(move |c| vec![t.theme.name.clone(), c.clone()])),
    )?;
    let mut warnings: Vec<String> = result
        .clusters
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("theme cluster {}: {e}", c.cluster_id)))
        .collect();
    if !result.unclassified.is_empty() {
        warnings.push(format!("{} codes unclassified", result.unclassified.len()));
    }
    Ok(warnings)
}

/// Reads ground-truth sub-themes from a criteria JSON file, a JSON array
/// of strings, or a text file with one sub-theme per line.
pub fn load_truth(path: &Path) -> Result<Vec<String>, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
    if let Ok(c) = serde_json::from_str::<Criteria>(&text) {
        return Ok(c.sub_themes());
    }
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(list);
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn evaluate_stage(ctx: &Context, cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<Vec<String>, StageError> {
    let docs: Vec<Document> = read_jsonl(&stage_dir(out, Stage::Simulate).join(CORPUS))?;
    let codebook = load_codebook(out)?;
    let themes: Vec<ThemeRecord> = read_jsonl(&stage_dir(out, Stage::Themes).join(THEMES))?;
    let simulated_truth = stage_dir(out, Stage::Simulate).join(CRITERIA);
    let truth_path = cfg
        .input
        .truth
        .clone()
        .or_else(|| simulated_truth.exists().then_some(simulated_truth));
    let truth = truth_path.as_deref().map(load_truth).transpose()?;
    evaluate_into(ctx, dir, &themes, truth.as_deref(), Some(&codebook), docs.len())
}

/// Writes the evaluation report into `dir`. Without ground truth only the
/// size summary and creation curve are produced.
pub fn evaluate_into(
    ctx: &Context,
    dir: &Path,
    themes: &[ThemeRecord],
    truth: Option<&[String]>,
    codebook: Option<&Codebook>,
    responses: usize,
) -> Result<Vec<String>, StageError> {
    std::fs::create_dir_all(dir).map_err(|e| StageError::io(dir, e))?;
    let mut warnings = Vec::new();
    let mut summary = Vec::new();
    if let Some(cb) = codebook {
        summary.push(ratio_summary(responses, cb.len(), themes.len()));
        write_csv(
            &dir.join("creation_rate.csv"),
            &["cluster_ordinal", "cumulative_codes", "diagonal_reference"],
            creation_rate_report(cb).iter().map(|r| {
                vec![
                    r.cluster_ordinal.to_string(),
                    r.cumulative_codes.to_string(),
                    r.diagonal_reference.to_string(),
                ]
            }),
        )?;
    }
    match truth {
        Some(subs) if !subs.is_empty() && !themes.is_empty() => {
            let names: Vec<String> = themes.iter().map(|t| t.theme.name.clone()).collect();
            let rows = match_themes(ctx, &names, subs)?;
            let coverage = coverage_report(&rows)?;
            write_jsonl(&dir.join("matches.jsonl"), &rows)?;
            std::fs::write(dir.join("matches.md"), match_table_markdown(&rows)).map_err(|e| StageError::io(dir, e))?;
            write_csv(
                &dir.join("matches.csv"),
                &["sub_theme", "rank", "theme", "similarity", "matched"],
                rows.iter().flat_map(|r| {
                    r.top_matches.iter().enumerate().map(move |(i, (name, score))| {
                        vec![
                            r.sub_theme.clone(),
                            (i + 1).to_string(),
                            name.clone(),
                            format!("{score:.6}"),
                            r.matched.to_string(),
                        ]
                    })
                }),
            )?;
            write_json(&dir.join("coverage.json"), &coverage)?;
            summary.push(format!(
                "{} of {} sub-themes matched ({:.1}%), {} unmatched ({:.1}%) at threshold {}",
                coverage.matched,
                coverage.rows,
                coverage.pct_matched,
                coverage.unmatched,
                coverage.pct_unmatched,
                ctx.config.match_threshold
            ));
        }
        _ => warnings.push("no ground truth or no themes; coverage not computed".into()),
    }
    let mut text = summary.join("\n");
    text.push('\n');
    std::fs::write(dir.join("summary.txt"), text).map_err(|e| StageError::io(dir, e))?;
    Ok(warnings)
}

/// Loads a previously written reduced matrix.
pub fn load_reduced(out_dir: &Path) -> Result<ReducedMatrix, StageError> {
    read_json(&stage_dir(out_dir, Stage::Cluster).join("reduced.json"))
}

/// Replaces the `[study]` table, as `simulate --spec` does.
pub fn load_study(path: &Path) -> Result<StudySpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let spec: StudySpec = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    spec.validate().map_err(|e| ConfigError::Other(e.to_string()))?;
    Ok(spec)
}
