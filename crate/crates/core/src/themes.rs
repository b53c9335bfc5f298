//! Consolidates the finished codebook into themes.

use std::collections::{BTreeSet, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{normalize_code_label, Codebook, Theme};
use crate::error::{ParseError, StageError};
use crate::semantic::{agglomerative_cluster, reduce, NeighborParams, ReduceParams};
use crate::templates::{subs, TemplateName};
use crate::workers::bounded_map;
use crate::Context;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub broad_or_narrow_themes: String,
    pub contradictions_or_unexpected_patterns: String,
    pub potential_subthemes: String,
    pub unclassified_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeAnalysis {
    pub initial_observations: Vec<String>,
    pub suggested_themes: Vec<Theme>,
    pub reflection: Reflection,
}

/// Groups the codebook labels by embedding similarity, about
/// `theme_cluster_size` labels per group.
pub fn cluster_codes(ctx: &Context, codebook: &Codebook, seed: u64) -> Result<Vec<Vec<String>>, StageError> {
    if codebook.is_empty() {
        return Err(StageError::Precondition("codebook is empty".into()));
    }
    let labels: Vec<String> = codebook.labels().map(str::to_string).collect();
    if labels.len() == 1 {
        return Ok(vec![labels]);
    }
    let vectors = ctx.embed(&labels)?;
    let params = ReduceParams {
        variance_target: ctx.config.pca_variance_target,
        dims: ctx.config.reduced_dims,
        seed,
        neighbor: NeighborParams::default(),
    };
    let (reduced, _) = reduce(&vectors, &labels, &params)?;
    Ok(agglomerative_cluster(&reduced.coords, &labels, ctx.config.theme_cluster_size)
        .into_iter()
        .map(|c| c.member_ids)
        .collect())
}

pub fn build_theme_prompt(ctx: &Context, labels: &[String]) -> Result<String, StageError> {
    if labels.is_empty() {
        return Err(StageError::Precondition("no codes to consolidate".into()));
    }
    let cfg = ctx.config;
    if cfg.research_question.trim().is_empty() {
        return Err(StageError::Precondition("research_question must be set".into()));
    }
    let listed = labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ctx.templates.render(
        TemplateName::Themes,
        &subs([
            ("research_question", cfg.research_question.clone()),
            ("data_type", cfg.data_type.clone()),
            ("data_collection_context", cfg.data_collection_context.clone()),
            ("labels", listed),
        ]),
    )?)
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(open) = t.find("```") else {
        return t;
    };
    let body = &t[open + 3..];
    // drop the info string ("json") on the opening fence line
    let body = match body.find('\n') {
        Some(nl) if !body[..nl].contains('{') => &body[nl + 1..],
        _ => body.trim_start_matches(|c: char| c.is_ascii_alphabetic()),
    };
    match body.rfind("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(items) => items.iter().map(as_text).collect::<Vec<_>>().join("; "),
        other => other.to_string(),
    }
}

fn as_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items.iter().map(as_text).filter(|s| !s.trim().is_empty()).collect(),
        Some(Value::String(s)) => s
            .split([',', ';', '\n'])
            .map(|p| p.trim().trim_start_matches('-').trim())
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    }
}

fn normalized_labels(items: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .iter()
        .filter_map(|c| normalize_code_label(c).ok())
        .filter(|c| seen.insert(c.clone()))
        .collect()
}

/// Parses a theme analysis, tolerating a fenced code block around the JSON.
/// Code labels are normalized. Theme names may use `theme_name` or `name`.
pub fn parse_theme_json(raw: &str) -> Result<ThemeAnalysis, ParseError> {
    let body = strip_fences(raw);
    let root: Value = serde_json::from_str(body).map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| ParseError::InvalidJson("top level is not an object".into()))?;
    let themes = obj
        .get("suggested_themes")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::InvalidJson("missing suggested_themes array".into()))?;
    let mut suggested = Vec::new();
    for (i, t) in themes.iter().enumerate() {
        let name = t
            .get("theme_name")
            .or_else(|| t.get("name"))
            .map(as_text)
            .filter(|n| !n.trim().is_empty())
            .ok_or_else(|| ParseError::InvalidJson(format!("theme {i} has no theme_name")))?;
        let codes = t
            .get("codes")
            .filter(|c| c.is_array())
            .ok_or_else(|| ParseError::InvalidJson(format!("theme {i} has no codes array")))?;
        suggested.push(Theme {
            name: name.trim().to_string(),
            concept: t.get("concept").map(as_text).unwrap_or_default(),
            codes: normalized_labels(as_list(Some(codes))),
            relationship: t.get("relationship").map(as_text).unwrap_or_default(),
        });
    }
    if suggested.is_empty() {
        return Err(ParseError::InvalidJson("suggested_themes is empty".into()));
    }
    let reflection = obj.get("reflection");
    let field = |key: &str| reflection.and_then(|r| r.get(key)).map(as_text).unwrap_or_default();
    let unclassified = normalized_labels(as_list(reflection.and_then(|r| r.get("unclassified_codes"))))
        .into_iter()
        .filter(|c| !matches!(c.as_str(), "none" | "n/a" | "na" | "[]"))
        .collect();
    Ok(ThemeAnalysis {
        initial_observations: as_list(obj.get("initial_observations")),
        suggested_themes: suggested,
        reflection: Reflection {
            broad_or_narrow_themes: field("broad_or_narrow_themes"),
            contradictions_or_unexpected_patterns: field("contradictions_or_unexpected_patterns"),
            potential_subthemes: field("potential_subthemes"),
            unclassified_codes: unclassified,
        },
    })
}

fn repair_prompt(prompt: &str) -> String {
    format!("{prompt}\n\nYour previous reply could not be parsed. Reply with only the JSON object described above and no other text.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeRecord {
    #[serde(flatten)]
    pub theme: Theme,
    pub source_cluster: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterThemeLog {
    pub cluster_id: u32,
    pub labels: Vec<String>,
    pub responses: Vec<String>,
    pub analysis: Option<ThemeAnalysis>,
    pub error: Option<String>,
    /// Labels a theme listed that are not in the codebook.
    pub unknown_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeOutput {
    pub themes: Vec<ThemeRecord>,
    /// Codebook labels that no theme claims, in codebook order.
    pub unclassified: Vec<String>,
    pub clusters: Vec<ClusterThemeLog>,
}

fn analyse_cluster(ctx: &Context, cluster_id: u32, labels: &[String]) -> Result<ClusterThemeLog, StageError> {
    let prompt = build_theme_prompt(ctx, labels)?;
    let mut log = ClusterThemeLog {
        cluster_id,
        labels: labels.to_vec(),
        responses: Vec::new(),
        analysis: None,
        error: None,
        unknown_labels: Vec::new(),
    };
    for attempt in [prompt.clone(), repair_prompt(&prompt)] {
        let response = ctx.chat(&attempt)?;
        let parsed = parse_theme_json(&response);
        log.responses.push(response);
        match parsed {
            Ok(a) => {
                log.analysis = Some(a);
                log.error = None;
                break;
            }
            Err(e) => {
                warn!("theme cluster {cluster_id}: {e}");
                log.error = Some(e.to_string());
            }
        }
    }
    Ok(log)
}

/// Clusters the codebook, asks for themes per cluster and merges the
/// answers. Themes with the same normalized name are merged, the first
/// occurrence keeping its name and text. Every codebook label ends up in
/// some theme or in `unclassified`, never both.
pub fn consolidate(ctx: &Context, codebook: &Codebook, seed: u64) -> Result<ThemeOutput, StageError> {
    let groups = cluster_codes(ctx, codebook, seed)?;
    consolidate_groups(ctx, codebook, &groups)
}

/// [`consolidate`] over precomputed label groups.
pub fn consolidate_groups(ctx: &Context, codebook: &Codebook, groups: &[Vec<String>]) -> Result<ThemeOutput, StageError> {
    let logs = bounded_map(groups, ctx.workers, |i, labels| analyse_cluster(ctx, i as u32, labels))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut logs = logs;
    if logs.iter().all(|l| l.analysis.is_none()) {
        return Err(StageError::failed(
            "themes",
            format!("all {} code clusters failed to produce valid JSON", logs.len()),
        ));
    }

    let known: HashSet<&str> = codebook.labels().collect();
    let mut themes: Vec<ThemeRecord> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    for log in logs.iter_mut() {
        let Some(analysis) = &log.analysis else { continue };
        let mut unknown = BTreeSet::new();
        for theme in &analysis.suggested_themes {
            let mut codes = Vec::new();
            for c in &theme.codes {
                if known.contains(c.as_str()) {
                    codes.push(c.clone());
                } else {
                    unknown.insert(c.clone());
                }
            }
            if codes.is_empty() {
                warn!("theme {:?} names no codebook labels; dropped", theme.name);
                continue;
            }
            let key = normalize_code_label(&theme.name).unwrap_or_else(|_| theme.name.clone());
            match by_name.get(&key) {
                Some(&at) => {
                    let existing = &mut themes[at].theme.codes;
                    for c in codes {
                        if !existing.contains(&c) {
                            existing.push(c);
                        }
                    }
                }
                None => {
                    by_name.insert(key, themes.len());
                    themes.push(ThemeRecord {
                        theme: Theme { codes, ..theme.clone() },
                        source_cluster: log.cluster_id,
                    });
                }
            }
        }
        if !unknown.is_empty() {
            warn!("theme cluster {}: {} label(s) not in the codebook ignored", log.cluster_id, unknown.len());
        }
        log.unknown_labels = unknown.into_iter().collect();
    }
    let claimed: HashSet<&str> = themes.iter().flat_map(|t| t.theme.codes.iter().map(String::as_str)).collect();
    let unclassified = codebook
        .labels()
        .filter(|l| !claimed.contains(l))
        .map(str::to_string)
        .collect();
    Ok(ThemeOutput {
        themes,
        unclassified,
        clusters: logs,
    })
}
