//! Synthetic corpora with known themes and sub-themes.
//!
//! Personas, contexts, themes and sub-themes come from the chat model;
//! writing styles, lengths and generator models come from the study spec.
//! A seeded plan draws a fixed number of rows per sub-theme, and each row
//! is rendered into one generation prompt.

use std::collections::HashSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Document, GenerationCriteria};
use crate::error::StageError;
use crate::summarization::strip_enumeration;
use crate::templates::{subs, TemplateName};
use crate::workers::bounded_map;
use crate::Context;

/// Share of planned rows that may be rejected before the stage fails.
pub const MAX_REJECTED_FRACTION: f64 = 0.50;

/// Responses may be up to this many times longer (or shorter) than the
/// requested sentence band.
pub const LENGTH_TOLERANCE: usize = 4;

const META_MARKERS: &[&str] = &[
    "as an ai",
    "as a language model",
    "i'm sorry",
    "i am sorry",
    "i cannot",
    "i can't",
    "sure, here",
    "here is",
    "here's",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingLength {
    pub name: String,
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl WritingLength {
    pub fn new(name: &str, min_sentences: usize, max_sentences: usize) -> Self {
        Self {
            name: name.to_string(),
            min_sentences,
            max_sentences,
        }
    }

    /// Rendering used in prompts and criteria, e.g. "Medium (4-5 sentences)".
    pub fn label(&self) -> String {
        if self.min_sentences == self.max_sentences {
            format!("{} ({} sentences)", self.name, self.min_sentences)
        } else {
            format!("{} ({}-{} sentences)", self.name, self.min_sentences, self.max_sentences)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub data_type: String,
    pub data_collection_context: String,
    pub theme_count: usize,
    pub subthemes_per_theme: usize,
    pub samples_per_subtheme: usize,
    pub persona_count: usize,
    pub context_count: usize,
    pub writing_styles: Vec<String>,
    pub writing_lengths: Vec<WritingLength>,
    /// Empty means the run's chat model.
    pub generator_model_ids: Vec<String>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            data_type: String::new(),
            data_collection_context: String::new(),
            theme_count: 8,
            subthemes_per_theme: 8,
            samples_per_subtheme: 18,
            persona_count: 10,
            context_count: 4,
            writing_styles: vec!["professional".into(), "casual".into(), "sentence fragments".into()],
            writing_lengths: vec![
                WritingLength::new("Short", 1, 3),
                WritingLength::new("Medium", 4, 5),
                WritingLength::new("Long", 6, 8),
            ],
            generator_model_ids: Vec::new(),
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<(), StageError> {
        let bad = |what: &str| Err(StageError::Precondition(format!("study spec: {what}")));
        if self.data_type.trim().is_empty() || self.data_collection_context.trim().is_empty() {
            return bad("data_type and data_collection_context must be set");
        }
        for (name, n) in [
            ("theme_count", self.theme_count),
            ("subthemes_per_theme", self.subthemes_per_theme),
            ("samples_per_subtheme", self.samples_per_subtheme),
            ("persona_count", self.persona_count),
            ("context_count", self.context_count),
        ] {
            if n < 1 {
                return bad(&format!("{name} must be at least 1"));
            }
        }
        if self.writing_styles.is_empty() || self.writing_lengths.is_empty() {
            return bad("writing_styles and writing_lengths must be non-empty");
        }
        if self
            .writing_lengths
            .iter()
            .any(|l| l.min_sentences < 1 || l.min_sentences > l.max_sentences)
        {
            return bad("each writing length needs 1 <= min_sentences <= max_sentences");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedItem {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeTruth {
    pub theme: String,
    pub sub_themes: Vec<String>,
}

/// Model-generated criteria; the themes and sub-themes are the ground
/// truth for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub personas: Vec<NamedItem>,
    pub contexts: Vec<NamedItem>,
    pub themes: Vec<ThemeTruth>,
}

impl Criteria {
    pub fn sub_themes(&self) -> Vec<String> {
        self.themes.iter().flat_map(|t| t.sub_themes.iter().cloned()).collect()
    }
}

/// Items of an enumerated response, in order.
pub fn parse_list(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(strip_enumeration)
        .map(|s| s.trim_matches(['"', '*']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Splits "Name: description" at the first colon.
pub fn parse_named(item: &str) -> NamedItem {
    match item.split_once(':') {
        Some((name, desc)) if !name.trim().is_empty() => NamedItem {
            name: name.trim().trim_matches('*').trim().to_string(),
            description: desc.trim().to_string(),
        },
        _ => NamedItem {
            name: item.trim().to_string(),
            description: String::new(),
        },
    }
}

fn retry_prompt(prompt: &str, n: usize) -> String {
    format!("{prompt}\n\nYour previous list was too short. Write exactly {n} numbered items.")
}

/// Asks for an enumerated list of `n` items, retrying once when short.
fn request_list(ctx: &Context, prompt: &str, n: usize, what: &str) -> Result<Vec<String>, StageError> {
    let mut items = parse_list(&ctx.chat(prompt)?);
    if items.len() < n {
        warn!("{what}: {} of {n} items; asking again", items.len());
        items = parse_list(&ctx.chat(&retry_prompt(prompt, n))?);
    }
    if items.len() < n {
        return Err(StageError::failed("simulate", format!("{what}: {} of {n} items after retry", items.len())));
    }
    items.truncate(n);
    Ok(items)
}

pub fn generate_criteria(ctx: &Context, spec: &StudySpec) -> Result<Criteria, StageError> {
    spec.validate()?;
    let t = ctx.templates;
    let base = |key: &'static str, n: usize| {
        subs([
            ("data_type", spec.data_type.clone()),
            ("data_collection_context", spec.data_collection_context.clone()),
            (key, n.to_string()),
        ])
    };
    let personas = request_list(
        ctx,
        &t.render(TemplateName::SimPersonas, &base("persona_count", spec.persona_count))?,
        spec.persona_count,
        "personas",
    )?;
    let contexts = request_list(
        ctx,
        &t.render(TemplateName::SimContexts, &base("context_count", spec.context_count))?,
        spec.context_count,
        "contexts",
    )?;
    let theme_names = request_list(
        ctx,
        &t.render(TemplateName::SimThemes, &base("theme_count", spec.theme_count))?,
        spec.theme_count,
        "themes",
    )?;

    let mut seen = HashSet::new();
    let mut themes = Vec::new();
    for theme in theme_names {
        let prompt = t.render(
            TemplateName::SimSubthemes,
            &subs([
                ("data_type", spec.data_type.clone()),
                ("data_collection_context", spec.data_collection_context.clone()),
                ("theme", theme.clone()),
                ("subtheme_count", spec.subthemes_per_theme.to_string()),
            ]),
        )?;
        let subs_list = request_list(ctx, &prompt, spec.subthemes_per_theme, &format!("sub-themes of {theme:?}"))?;
        let unique: Vec<String> = subs_list
            .into_iter()
            .filter(|s| {
                let fresh = seen.insert(s.clone());
                if !fresh {
                    warn!("duplicate sub-theme {s:?} dropped");
                }
                fresh
            })
            .collect();
        themes.push(ThemeTruth {
            theme,
            sub_themes: unique,
        });
    }
    Ok(Criteria {
        personas: personas.iter().map(|p| parse_named(p)).collect(),
        contexts: contexts.iter().map(|c| parse_named(c)).collect(),
        themes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub rows: Vec<GenerationCriteria>,
    pub seed: u64,
}

/// Draws `samples_per_subtheme` rows per sub-theme, each with a uniformly
/// chosen persona, context, style, length and generator model, then
/// shuffles the rows. A pure function of its inputs.
pub fn sample_plan(spec: &StudySpec, criteria: &Criteria, default_model: &str, seed: u64) -> Result<GenerationPlan, StageError> {
    if criteria.personas.is_empty() || criteria.contexts.is_empty() {
        return Err(StageError::Precondition("criteria need personas and contexts".into()));
    }
    if spec.writing_styles.is_empty() || spec.writing_lengths.is_empty() {
        return Err(StageError::Precondition("spec needs writing styles and lengths".into()));
    }
    let models: Vec<String> = if spec.generator_model_ids.is_empty() {
        vec![default_model.to_string()]
    } else {
        spec.generator_model_ids.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for theme in &criteria.themes {
        for sub_theme in &theme.sub_themes {
            for _ in 0..spec.samples_per_subtheme {
                let persona = &criteria.personas[rng.random_range(0..criteria.personas.len())];
                let context = &criteria.contexts[rng.random_range(0..criteria.contexts.len())];
                let style = &spec.writing_styles[rng.random_range(0..spec.writing_styles.len())];
                let length = &spec.writing_lengths[rng.random_range(0..spec.writing_lengths.len())];
                let model = &models[rng.random_range(0..models.len())];
                rows.push(GenerationCriteria {
                    persona: persona.name.clone(),
                    persona_description: persona.description.clone(),
                    context: context.name.clone(),
                    context_description: context.description.clone(),
                    theme: theme.theme.clone(),
                    sub_theme: sub_theme.clone(),
                    writing_style: style.clone(),
                    writing_length: length.label(),
                    generator_model_id: model.clone(),
                });
            }
        }
    }
    rows.shuffle(&mut rng);
    Ok(GenerationPlan { rows, seed })
}

pub fn build_response_prompt(ctx: &Context, spec: &StudySpec, row_index: usize, row: &GenerationCriteria) -> Result<String, StageError> {
    Ok(ctx.templates.render(
        TemplateName::SimResponse,
        &subs([
            ("participant", (row_index + 1).to_string()),
            ("data_type", spec.data_type.clone()),
            ("data_collection_context", spec.data_collection_context.clone()),
            ("persona", row.persona.clone()),
            ("persona_description", row.persona_description.clone()),
            ("context", row.context.clone()),
            ("context_description", row.context_description.clone()),
            ("theme", row.theme.clone()),
            ("sub_theme", row.sub_theme.clone()),
            ("writing_style", row.writing_style.clone()),
            ("writing_length", row.writing_length.clone()),
        ]),
    )?)
}

/// Number of sentences, counting a trailing unterminated fragment.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut count = 0;
    let mut open = false;
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.get(i + 1).is_none_or(|n| n.is_whitespace() || *n == '"');
            if open && at_boundary {
                count += 1;
                open = false;
            }
        } else if c.is_alphanumeric() {
            open = true;
        }
    }
    count + usize::from(open)
}

fn band_for<'a>(spec: &'a StudySpec, label: &str) -> Option<&'a WritingLength> {
    spec.writing_lengths.iter().find(|l| l.label() == label)
}

/// Reason a response is unusable, if any.
pub fn rejection_reason(spec: &StudySpec, row: &GenerationCriteria, response: &str) -> Option<String> {
    let text = response.trim();
    if text.is_empty() {
        return Some("empty response".into());
    }
    let lower = text.to_lowercase();
    if let Some(m) = META_MARKERS.iter().find(|m| lower.starts_with(*m)) {
        return Some(format!("meta commentary ({m:?})"));
    }
    if let Some(band) = band_for(spec, &row.writing_length) {
        let n = sentence_count(text);
        let lo = band.min_sentences.div_ceil(LENGTH_TOLERANCE).max(1);
        let hi = band.max_sentences * LENGTH_TOLERANCE;
        if n < lo || n > hi {
            return Some(format!("{n} sentences outside {lo}-{hi}"));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub planned: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

/// Generates one response per plan row. Valid, non-duplicate responses
/// become documents `sim-NNNNNN` numbered by plan row.
pub fn synthesize_documents(
    ctx: &Context,
    spec: &StudySpec,
    plan: &GenerationPlan,
) -> Result<(Vec<Document>, RejectionReport), StageError> {
    let prompts = plan
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| build_response_prompt(ctx, spec, i, row))
        .collect::<Result<Vec<_>, _>>()?;
    let responses = bounded_map(&prompts, ctx.workers, |i, p| ctx.chat_with(&plan.rows[i].generator_model_id, p));

    let mut documents = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();
    for (i, (row, response)) in plan.rows.iter().zip(responses).enumerate() {
        let response = response?;
        let reason = rejection_reason(spec, row, &response).or_else(|| {
            (!seen.insert(response.trim().to_string())).then(|| "duplicate of an earlier response".to_string())
        });
        match reason {
            Some(reason) => rejections.push(Rejection {
                row: i,
                reason,
                response,
            }),
            None => documents.push(Document::simulated(i, response.trim(), row.clone())?),
        }
    }
    let report = RejectionReport {
        planned: plan.rows.len(),
        accepted: documents.len(),
        rejected: rejections.len(),
        rejections,
    };
    if report.rejected as f64 > MAX_REJECTED_FRACTION * report.planned as f64 {
        let samples: Vec<String> = report
            .rejections
            .iter()
            .take(3)
            .map(|r| format!("row {}: {}", r.row, r.reason))
            .collect();
        return Err(StageError::failed(
            "simulate",
            format!("{} of {} responses rejected ({})", report.rejected, report.planned, samples.join("; ")),
        ));
    }
    Ok((documents, report))
}
