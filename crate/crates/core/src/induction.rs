//! Starter codes and cluster-by-cluster codebook growth.

use std::collections::{HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_code_label, Cluster, CodeEntry, CodeOrigin, Codebook, EmbeddingVector, SummaryPoint};
use crate::error::{ParseError, StageError};
use crate::semantic::{knn_codes, CodeIndex};
use crate::summarization::strip_enumeration;
use crate::templates::{subs, TemplateName};
use crate::Context;

pub const STARTER_DEFINITION: &str = "starter code (hypothetical)";

/// Share of clusters whose decision may fail to parse before the stage
/// fails.
pub const MAX_UNPARSEABLE_FRACTION: f64 = 0.20;

const RECOMMENDATION_MARKER: &str = "my logical recommendation:";
const DECLINE_PHRASE: &str = "no new codes needed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedCode {
    pub label: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "codes", rename_all = "snake_case")]
pub enum InductionOutcome {
    NoNewCodes,
    NewCodes(Vec<ProposedCode>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductionDecision {
    pub cluster_id: u32,
    pub analysis_text: String,
    pub outcome: InductionOutcome,
}

pub fn starter_code_template(k: usize) -> String {
    (1..=k).map(|i| format!("{i}. Code {i}")).collect::<Vec<_>>().join("\n")
}

pub fn build_starter_prompt(ctx: &Context) -> Result<String, StageError> {
    let cfg = ctx.config;
    Ok(ctx.templates.render(
        TemplateName::StarterCodes,
        &subs([
            ("k_to_start", cfg.starter_code_count.to_string()),
            ("data_type", cfg.data_type.clone()),
            ("data_collection_context", cfg.data_collection_context.clone()),
            ("code_template", starter_code_template(cfg.starter_code_count)),
        ]),
    )?)
}

fn starter_retry_prompt(prompt: &str, k: usize) -> String {
    format!(
        "{prompt}\n\nYour previous list was short or repeated a code. Write exactly {k} distinct codes, one per numbered line, and nothing else."
    )
}

/// Normalized labels of the numbered items in a starter response, in
/// order.
fn starter_labels(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(strip_enumeration)
        .filter_map(|i| normalize_code_label(i).ok())
        .collect()
}

/// Asks for `starter_code_count` hypothetical codes. A short or repetitive
/// list is re-requested once; the two answers are merged in order and
/// deduplicated.
pub fn generate_starter_codes(ctx: &Context) -> Result<Vec<CodeEntry>, StageError> {
    let k = ctx.config.starter_code_count;
    let prompt = build_starter_prompt(ctx)?;
    let mut labels = starter_labels(&ctx.chat(&prompt)?);
    let mut unique = dedup(&labels);
    if unique.len() < k || unique.len() < labels.len() {
        warn!("starter list had {} distinct codes of {k} requested; asking again", unique.len());
        let retry = starter_labels(&ctx.chat(&starter_retry_prompt(&prompt, k))?);
        labels.extend(retry);
        let merged = dedup(&labels);
        if merged.len() < labels.len() {
            warn!("dropped {} duplicate starter code(s)", labels.len() - merged.len());
        }
        unique = merged;
    }
    if unique.len() < k {
        return Err(StageError::failed(
            "induce",
            format!("starter list has {} distinct codes, {k} required", unique.len()),
        ));
    }
    Ok(unique
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, label)| CodeEntry {
            label,
            definition: STARTER_DEFINITION.to_string(),
            origin: CodeOrigin::Starter,
            creation_index: i as u32,
        })
        .collect())
}

fn dedup(labels: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    labels.iter().filter(|l| seen.insert(l.as_str())).cloned().collect()
}

/// Union of each member's k nearest codes, in member order, first
/// occurrence kept.
pub fn nearest_codes_for_cluster(
    cluster: &Cluster,
    summaries: &HashMap<String, EmbeddingVector>,
    index: &CodeIndex,
    k: usize,
) -> Result<Vec<String>, StageError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in &cluster.member_ids {
        let query = summaries
            .get(id)
            .ok_or_else(|| StageError::Precondition(format!("summary point {id} has no embedding")))?;
        for (label, _) in knn_codes(query, index, k)? {
            if seen.insert(label.clone()) {
                out.push(label);
            }
        }
    }
    Ok(out)
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_induction_prompt(ctx: &Context, summaries: &[String], nearest: &[String]) -> Result<String, StageError> {
    if nearest.is_empty() {
        return Err(StageError::Precondition("no nearest codes for the cluster".into()));
    }
    if summaries.is_empty() {
        return Err(StageError::Precondition("cluster has no summary points".into()));
    }
    let cfg = ctx.config;
    Ok(ctx.templates.render(
        TemplateName::Induction,
        &subs([
            ("data_type", cfg.data_type.clone()),
            ("data_collection_context", cfg.data_collection_context.clone()),
            ("redundancy_example", cfg.redundancy_example.clone()),
            ("codes", numbered(nearest)),
            ("text", numbered(summaries)),
        ]),
    )?)
}

/// Strips list markers and markdown emphasis from the start of a line.
fn bare_line(line: &str) -> &str {
    let t = line.trim();
    let t = strip_enumeration(t).unwrap_or(t);
    t.trim_start_matches(['*', '_', '#', ' ']).trim()
}

/// Value after a case-insensitive `key` prefix such as "Code:".
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = bare_line(line);
    if line.len() < key.len() || !line.is_char_boundary(key.len()) || !line[..key.len()].eq_ignore_ascii_case(key) {
        return None;
    }
    let value = line[key.len()..].trim_start_matches(['*', '_']).trim();
    Some(value.trim_end_matches(['*', '_']).trim())
}

/// Reads the decision following the last "My logical recommendation:".
pub fn parse_induction_output(cluster_id: u32, raw: &str) -> Result<InductionDecision, ParseError> {
    let lower = raw.to_ascii_lowercase();
    let at = lower.rfind(RECOMMENDATION_MARKER).ok_or_else(|| {
        ParseError::UnparseableDecision(format!("cluster {cluster_id}: no recommendation marker"))
    })?;
    let tail = &raw[at + RECOMMENDATION_MARKER.len()..];
    let decision = |outcome| InductionDecision {
        cluster_id,
        analysis_text: raw.to_string(),
        outcome,
    };
    if tail.to_ascii_lowercase().contains(DECLINE_PHRASE) {
        return Ok(decision(InductionOutcome::NoNewCodes));
    }

    let lines: Vec<&str> = tail.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut codes = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if let Some(label) = field(lines[i], "code:") {
            let definition = lines
                .get(i + 1)
                .and_then(|l| field(l, "definition:"))
                .filter(|d| !d.is_empty())
                .ok_or_else(|| {
                    ParseError::MalformedCode(format!("cluster {cluster_id}: code {label:?} has no definition"))
                })?;
            let label = normalize_code_label(label)
                .map_err(|_| ParseError::MalformedCode(format!("cluster {cluster_id}: empty code label")))?;
            codes.push(ProposedCode {
                label,
                definition: definition.to_string(),
            });
            i += 2;
        } else {
            i += 1;
        }
    }
    if codes.is_empty() {
        return Err(ParseError::UnparseableDecision(format!(
            "cluster {cluster_id}: recommendation names neither codes nor a decline"
        )));
    }
    Ok(decision(InductionOutcome::NewCodes(codes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub cluster_id: u32,
    pub cluster_ordinal: u32,
    pub nearest_codes: Vec<String>,
    /// Present when the response parsed.
    pub decision: Option<InductionDecision>,
    pub error: Option<String>,
    pub created: Vec<String>,
    pub duplicates_dropped: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionOutput {
    pub codebook: Codebook,
    pub decisions: Vec<DecisionRecord>,
    pub unparseable: usize,
}

fn embed_one(ctx: &Context, text: &str) -> Result<EmbeddingVector, StageError> {
    Ok(ctx.embed(&[text.to_string()])?.remove(0))
}

/// Grows the codebook from `starter` by walking clusters in ascending id.
/// Each decision sees the codes created by all earlier clusters.
pub fn induce_codebook(
    ctx: &Context,
    clusters: &[Cluster],
    points: &[SummaryPoint],
    starter: &[CodeEntry],
) -> Result<InductionOutput, StageError> {
    if starter.is_empty() {
        return Err(StageError::Precondition("no starter codes".into()));
    }
    let cfg = ctx.config;
    let text_of: HashMap<&str, &str> = points.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let texts: Vec<String> = points.iter().map(|p| p.text.clone()).collect();
    let vectors = if texts.is_empty() { Vec::new() } else { ctx.embed(&texts)? };
    let summaries: HashMap<String, EmbeddingVector> =
        points.iter().map(|p| p.id.clone()).zip(vectors).collect();

    let mut codebook = Codebook::new();
    let mut index = CodeIndex::new();
    let starter_labels: Vec<String> = starter.iter().map(|e| e.label.clone()).collect();
    for (entry, vector) in starter.iter().zip(ctx.embed(&starter_labels)?) {
        codebook.insert(&entry.label, entry.definition.clone(), CodeOrigin::Starter)?;
        index.insert(entry.label.clone(), &vector)?;
    }

    let mut ordered: Vec<&Cluster> = clusters.iter().collect();
    ordered.sort_by_key(|c| c.id);
    let mut decisions = Vec::with_capacity(ordered.len());
    let mut unparseable = 0;
    for (pos, cluster) in ordered.into_iter().enumerate() {
        let ordinal = pos as u32 + 1;
        let member_texts = cluster
            .member_ids
            .iter()
            .map(|id| {
                text_of
                    .get(id.as_str())
                    .map(|t| t.to_string())
                    .ok_or_else(|| StageError::Precondition(format!("unknown summary point {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let nearest = nearest_codes_for_cluster(cluster, &summaries, &index, cfg.knn_k)?;
        let prompt = build_induction_prompt(ctx, &member_texts, &nearest)?;
        let response = ctx.chat(&prompt)?;

        let mut record = DecisionRecord {
            cluster_id: cluster.id,
            cluster_ordinal: ordinal,
            nearest_codes: nearest,
            decision: None,
            error: None,
            created: Vec::new(),
            duplicates_dropped: Vec::new(),
            response: response.clone(),
        };
        match parse_induction_output(cluster.id, &response) {
            Ok(decision) => {
                if let InductionOutcome::NewCodes(codes) = &decision.outcome {
                    for code in codes {
                        if codebook.contains(&code.label) {
                            warn!("cluster {}: code {:?} already exists; not re-inserted", cluster.id, code.label);
                            record.duplicates_dropped.push(code.label.clone());
                            continue;
                        }
                        let vector = embed_one(ctx, &code.label)?;
                        codebook.insert(&code.label, code.definition.clone(), CodeOrigin::Induced(cluster.id))?;
                        index.insert(code.label.clone(), &vector)?;
                        record.created.push(code.label.clone());
                    }
                }
                record.decision = Some(decision);
            }
            Err(e) => {
                warn!("{e}; cluster skipped");
                unparseable += 1;
                record.error = Some(e.to_string());
            }
        }
        codebook.log_cluster(ordinal, record.created.len() as u32);
        debug_assert!(codebook.labels().eq(index.labels()));
        decisions.push(record);
    }

    if unparseable as f64 > MAX_UNPARSEABLE_FRACTION * decisions.len() as f64 {
        let sample: Vec<String> = decisions
            .iter()
            .filter_map(|d| d.error.clone())
            .take(3)
            .collect();
        return Err(StageError::failed(
            "induce",
            format!(
                "{unparseable} of {} cluster decisions unparseable: {}",
                decisions.len(),
                sample.join("; ")
            ),
        ));
    }
    Ok(InductionOutput {
        codebook,
        decisions,
        unparseable,
    })
}
