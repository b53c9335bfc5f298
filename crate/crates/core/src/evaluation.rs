//! Scores recovered themes against planted sub-themes, and reports how
//! fast the codebook grew.

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_code_label, Codebook, EmbeddingVector};
use crate::error::StageError;
use crate::semantic::cosine_similarity;
use crate::Context;

/// Matches reported per sub-theme.
pub const TOP_MATCHES: usize = 3;
/// Rows listed as the weakest recoveries.
pub const WORST_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub sub_theme: String,
    pub top_matches: Vec<(String, f64)>,
    pub matched: bool,
}

impl MatchRow {
    pub fn best(&self) -> f64 {
        self.top_matches.first().map(|m| m.1).unwrap_or(-1.0)
    }
}

fn normalized(s: &str) -> String {
    normalize_code_label(s).unwrap_or_else(|_| s.trim().to_lowercase())
}

/// Ranks every theme for every sub-theme by cosine similarity of their
/// embeddings. Ties keep theme order.
pub fn rank_matches(
    theme_names: &[String],
    theme_vectors: &[EmbeddingVector],
    sub_themes: &[String],
    sub_vectors: &[EmbeddingVector],
    threshold: f64,
) -> Result<Vec<MatchRow>, StageError> {
    sub_themes
        .iter()
        .zip(sub_vectors)
        .map(|(sub, sv)| {
            let mut scored = theme_names
                .iter()
                .zip(theme_vectors)
                .enumerate()
                .map(|(i, (name, tv))| Ok((i, name.clone(), cosine_similarity(sv, tv)?)))
                .collect::<Result<Vec<_>, StageError>>()?;
            scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            let top: Vec<(String, f64)> = scored.into_iter().take(TOP_MATCHES).map(|(_, n, s)| (n, s)).collect();
            let matched = top.first().is_some_and(|m| m.1 >= threshold);
            Ok(MatchRow {
                sub_theme: sub.clone(),
                top_matches: top,
                matched,
            })
        })
        .collect()
}

/// Embeds normalized theme names and sub-themes with the run's embedding
/// model and ranks the themes for each sub-theme.
pub fn match_themes(ctx: &Context, theme_names: &[String], sub_themes: &[String]) -> Result<Vec<MatchRow>, StageError> {
    if theme_names.is_empty() || sub_themes.is_empty() {
        return Err(StageError::Precondition("need at least one theme and one sub-theme".into()));
    }
    let themes: Vec<String> = theme_names.iter().map(|t| normalized(t)).collect();
    let subs: Vec<String> = sub_themes.iter().map(|s| normalized(s)).collect();
    let theme_vectors = ctx.embed(&themes)?;
    let sub_vectors = ctx.embed(&subs)?;
    rank_matches(theme_names, &theme_vectors, sub_themes, &sub_vectors, ctx.config.match_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub rows: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub pct_matched: f64,
    pub pct_unmatched: f64,
    pub worst_rows: Vec<MatchRow>,
}

pub fn coverage_report(rows: &[MatchRow]) -> Result<Coverage, StageError> {
    if rows.is_empty() {
        return Err(StageError::Precondition("no match rows".into()));
    }
    let matched = rows.iter().filter(|r| r.matched).count();
    let unmatched = rows.len() - matched;
    let mut worst: Vec<&MatchRow> = rows.iter().collect();
    worst.sort_by(|a, b| a.best().total_cmp(&b.best()));
    Ok(Coverage {
        rows: rows.len(),
        matched,
        unmatched,
        pct_matched: 100.0 * matched as f64 / rows.len() as f64,
        pct_unmatched: 100.0 * unmatched as f64 / rows.len() as f64,
        worst_rows: worst.into_iter().take(WORST_ROWS).cloned().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreationRateRow {
    pub cluster_ordinal: u32,
    pub cumulative_codes: usize,
    /// Size the codebook would reach with one new code per cluster.
    pub diagonal_reference: usize,
}

pub fn creation_rate_report(codebook: &Codebook) -> Vec<CreationRateRow> {
    let starters = codebook.starter_count();
    codebook
        .creation_log
        .iter()
        .zip(codebook.cumulative_sizes())
        .map(|(entry, cumulative)| CreationRateRow {
            cluster_ordinal: entry.cluster_ordinal,
            cumulative_codes: cumulative,
            diagonal_reference: starters + entry.cluster_ordinal as usize,
        })
        .collect()
}

/// One-line summary of corpus, codebook and theme sizes.
pub fn ratio_summary(responses: usize, codes: usize, themes: usize) -> String {
    let ratio = |a: usize, b: usize| if b == 0 { "n/a".to_string() } else { format!("{:.1}:1", a as f64 / b as f64) };
    format!(
        "{responses} responses, {codes} codes, {themes} themes; responses:themes {}, codes:themes {}",
        ratio(responses, themes),
        ratio(codes, themes)
    )
}

fn escape_md(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Markdown table of sub-themes and their closest themes.
pub fn match_table_markdown(rows: &[MatchRow]) -> String {
    let mut out = String::from("| Sub-theme | Closest themes | Best similarity | Matched |\n|---|---|---|---|\n");
    for r in rows {
        let matches = r
            .top_matches
            .iter()
            .map(|(n, s)| format!("{} ({s:.3})", escape_md(n)))
            .collect::<Vec<_>>()
            .join("; ");
        out.push_str(&format!(
            "| {} | {} | {:.3} | {} |\n",
            escape_md(&r.sub_theme),
            matches,
            r.best(),
            if r.matched { "yes" } else { "no" }
        ));
    }
    out
}
