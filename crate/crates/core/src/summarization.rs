//! Step one: split every document into short summary points.

use serde::{Deserialize, Serialize};

use crate::domain::{Document, SummaryPoint};
use crate::error::{ParseError, StageError};
use crate::templates::{subs, TemplateName};
use crate::workers::bounded_map;
use crate::Context;

/// Share of documents that may fail to parse before the stage fails.
pub const MAX_UNPARSEABLE_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryParse {
    pub points: Vec<String>,
    /// Header line that introduced the list, when there was one.
    pub preamble: Option<String>,
}

pub fn build_summary_prompt(ctx: &Context, doc: &Document) -> Result<String, StageError> {
    let cfg = ctx.config;
    if cfg.data_type.trim().is_empty() || cfg.data_collection_context.trim().is_empty() {
        return Err(StageError::Precondition(
            "data_type and data_collection_context must be set".into(),
        ));
    }
    if doc.text.trim().is_empty() {
        return Err(StageError::Precondition(format!("document {} has empty text", doc.id)));
    }
    Ok(ctx.templates.render(
        TemplateName::Summarize,
        &subs([
            ("data_type", cfg.data_type.clone()),
            ("data_collection_context", cfg.data_collection_context.clone()),
            ("text", doc.text.clone()),
        ]),
    )?)
}

/// Item text of a list line marked with "N.", "N)" or "-".
pub(crate) fn strip_enumeration(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let rest = if let Some(rest) = t.strip_prefix('-') {
        rest
    } else {
        let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits == 0 {
            return None;
        }
        let after = &t[digits..];
        after.strip_prefix('.').or_else(|| after.strip_prefix(')'))?
    };
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let item = rest.trim();
    (!item.is_empty()).then_some(item)
}

fn header_split(line: &str) -> Option<(&str, &str)> {
    const HEADER: &str = "summary:";
    let end = line.to_ascii_lowercase().rfind(HEADER)? + HEADER.len();
    Some((line[..end].trim(), line[end..].trim()))
}

/// Extracts the enumerated items of a summary response.
///
/// A header is any line ending in "summary:" (case-insensitive); items are
/// lines starting with "N.", "N)" or "-". Blank and other lines are
/// skipped.
pub fn parse_summary(raw: &str) -> Result<SummaryParse, ParseError> {
    let mut preamble = None;
    let mut points = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if preamble.is_none() && points.is_empty() {
            if let Some((header, rest)) = header_split(line) {
                if rest.is_empty() || strip_enumeration(rest).is_some() {
                    preamble = Some(header.to_string());
                    if let Some(item) = strip_enumeration(rest) {
                        points.push(item.to_string());
                    }
                    continue;
                }
            }
        }
        if let Some(item) = strip_enumeration(line) {
            points.push(item.to_string());
        }
    }
    if points.is_empty() {
        let snippet: String = raw.chars().take(80).collect();
        return Err(ParseError::Unparseable(format!("no enumerated summary points in {snippet:?}")));
    }
    Ok(SummaryParse { points, preamble })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFailure {
    pub doc_id: String,
    pub error: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub documents: usize,
    pub parsed_documents: usize,
    pub failed_documents: Vec<String>,
    pub total_points: usize,
    pub mean_points: f64,
    pub median_points: f64,
    /// (points per document, number of documents), ascending.
    pub histogram: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub points: Vec<SummaryPoint>,
    pub stats: SummaryStats,
    pub failures: Vec<SummaryFailure>,
}

pub fn summary_stats(counts: &[usize], documents: usize, failed: Vec<String>) -> SummaryStats {
    let total: usize = counts.iter().sum();
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let median = match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    };
    let mut histogram: Vec<(usize, usize)> = Vec::new();
    for c in sorted {
        match histogram.last_mut() {
            Some((v, n)) if *v == c => *n += 1,
            _ => histogram.push((c, 1)),
        }
    }
    SummaryStats {
        documents,
        parsed_documents: counts.len(),
        failed_documents: failed,
        total_points: total,
        mean_points: if counts.is_empty() { 0.0 } else { total as f64 / counts.len() as f64 },
        median_points: median,
        histogram,
    }
}

/// Summarizes each document, flagging those whose response does not parse.
/// Points are ordered by document id then ordinal.
pub fn summarize_corpus(ctx: &Context, docs: &[Document]) -> Result<SummaryOutput, StageError> {
    if docs.is_empty() {
        return Err(StageError::Precondition("corpus is empty".into()));
    }
    let prompts = docs
        .iter()
        .map(|d| build_summary_prompt(ctx, d))
        .collect::<Result<Vec<_>, _>>()?;
    let responses = bounded_map(&prompts, ctx.workers, |_, p| ctx.chat(p));

    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| docs[a].id.cmp(&docs[b].id));
    let mut points = Vec::new();
    let mut counts = Vec::new();
    let mut failures = Vec::new();
    let mut responses: Vec<Option<_>> = responses.into_iter().map(Some).collect();
    for i in order {
        let doc = &docs[i];
        let response = responses[i].take().expect("each response used once")?;
        match parse_summary(&response) {
            Ok(parsed) => {
                counts.push(parsed.points.len());
                points.extend(
                    parsed
                        .points
                        .into_iter()
                        .enumerate()
                        .map(|(k, text)| SummaryPoint::new(&doc.id, k as u32 + 1, text)),
                );
            }
            Err(e) => {
                log::warn!("document {}: {e}", doc.id);
                failures.push(SummaryFailure {
                    doc_id: doc.id.clone(),
                    error: e.to_string(),
                    response,
                });
            }
        }
    }
    let failed_ids: Vec<String> = failures.iter().map(|f| f.doc_id.clone()).collect();
    if failures.len() as f64 > MAX_UNPARSEABLE_FRACTION * docs.len() as f64 {
        let sample = failed_ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        return Err(StageError::failed(
            "summarize",
            format!("{} of {} documents unparseable (e.g. {sample})", failures.len(), docs.len()),
        ));
    }
    Ok(SummaryOutput {
        points,
        stats: summary_stats(&counts, docs.len(), failed_ids),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_point_example() {
        let p = parse_summary("My summary:\n1. Responded quickly to emails\n2. Turned in good work").unwrap();
        assert_eq!(p.points, vec!["Responded quickly to emails", "Turned in good work"]);
        assert_eq!(p.preamble.as_deref(), Some("My summary:"));
    }

    #[test]
    fn accepts_variants() {
        let p = parse_summary("My expert summary:\n\n1) first idea\n- second idea\n3. third").unwrap();
        assert_eq!(p.points, vec!["first idea", "second idea", "third"]);
        assert_eq!(p.preamble.as_deref(), Some("My expert summary:"));
        let p = parse_summary("My summary: 1. inline item\n2. next").unwrap();
        assert_eq!(p.points, vec!["inline item", "next"]);
        let p = parse_summary("1. no header at all").unwrap();
        assert_eq!(p.preamble, None);
        assert_eq!(p.points.len(), 1);
    }

    #[test]
    fn rejects_gibberish() {
        assert!(parse_summary("gibberish with no list").is_err());
        assert!(parse_summary("My summary:\n").is_err());
        assert!(parse_summary("").is_err());
        assert!(parse_summary("2024 was fine").is_err());
    }

    #[test]
    fn stats_for_constant_counts() {
        let s = summary_stats(&[5, 5, 5], 3, vec![]);
        assert_eq!(s.mean_points, 5.0);
        assert_eq!(s.median_points, 5.0);
        assert_eq!(s.histogram, vec![(5, 3)]);
        let s = summary_stats(&[1, 4, 2, 4], 5, vec!["x".into()]);
        assert_eq!(s.median_points, 3.0);
        assert_eq!(s.histogram, vec![(1, 1), (2, 1), (4, 2)]);
    }

    fn item() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z ,']{0,30}[A-Za-z]"
    }

    proptest! {
        #[test]
        fn count_matches_enumerated_lines(items in proptest::collection::vec(item(), 1..12), style in 0usize..3) {
            let body: Vec<String> = items
                .iter()
                .enumerate()
                .map(|(i, t)| match style {
                    0 => format!("{}. {t}", i + 1),
                    1 => format!("{}) {t}", i + 1),
                    _ => format!("- {t}"),
                })
                .collect();
            let raw = format!("My summary:\n{}\n", body.join("\n\n"));
            let parsed = parse_summary(&raw).unwrap();
            prop_assert_eq!(parsed.points.len(), items.len());
            let expected: Vec<String> = items.iter().map(|t| t.trim().to_string()).collect();
            prop_assert_eq!(&parsed.points, &expected);
            let rendered: Vec<String> = parsed.points.iter().enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect();
            let again = parse_summary(&rendered.join("\n")).unwrap();
            prop_assert_eq!(again.points, parsed.points);
        }
    }
}
