//! Prompt templates and placeholder rendering.
//!
//! Templates are plain text files with `{name}` placeholders. `{{` and `}}`
//! render as literal braces, which is how the theme prompt carries its JSON
//! skeleton. Nothing else in a template body is touched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::domain::sha256_hex;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` is missing substitutions for: {}", missing.join(", "))]
    Missing {
        template: TemplateName,
        missing: Vec<String>,
    },
    #[error("template `{template}` uses undeclared placeholders: {}", undeclared.join(", "))]
    Undeclared {
        template: TemplateName,
        undeclared: Vec<String>,
    },
    #[error("template `{template}` has an unbalanced brace at byte {offset}")]
    Syntax { template: TemplateName, offset: usize },
    #[error("rendered `{template}` still contains placeholder {token}")]
    Unresolved { template: TemplateName, token: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    Summarize,
    StarterCodes,
    Induction,
    Themes,
    SimPersonas,
    SimContexts,
    SimThemes,
    SimSubthemes,
    SimResponse,
}

impl TemplateName {
    pub const ALL: [TemplateName; 9] = [
        TemplateName::Summarize,
        TemplateName::StarterCodes,
        TemplateName::Induction,
        TemplateName::Themes,
        TemplateName::SimPersonas,
        TemplateName::SimContexts,
        TemplateName::SimThemes,
        TemplateName::SimSubthemes,
        TemplateName::SimResponse,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Summarize => "summarize.txt",
            TemplateName::StarterCodes => "starter_codes.txt",
            TemplateName::Induction => "induction.txt",
            TemplateName::Themes => "themes.txt",
            TemplateName::SimPersonas => "sim_personas.txt",
            TemplateName::SimContexts => "sim_contexts.txt",
            TemplateName::SimThemes => "sim_themes.txt",
            TemplateName::SimSubthemes => "sim_subthemes.txt",
            TemplateName::SimResponse => "sim_response.txt",
        }
    }

    pub fn declared_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Summarize => &["data_type", "data_collection_context", "text"],
            TemplateName::StarterCodes => &["k_to_start", "data_type", "data_collection_context", "code_template"],
            TemplateName::Induction => &["data_type", "data_collection_context", "redundancy_example", "codes", "text"],
            TemplateName::Themes => &["research_question", "data_type", "data_collection_context", "labels"],
            TemplateName::SimPersonas => &["data_type", "data_collection_context", "persona_count"],
            TemplateName::SimContexts => &["data_type", "data_collection_context", "context_count"],
            TemplateName::SimThemes => &["data_type", "data_collection_context", "theme_count"],
            TemplateName::SimSubthemes => &["data_type", "data_collection_context", "theme", "subtheme_count"],
            TemplateName::SimResponse => &[
                "participant",
                "data_type",
                "data_collection_context",
                "persona",
                "persona_description",
                "context",
                "context_description",
                "theme",
                "sub_theme",
                "writing_style",
                "writing_length",
            ],
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateName::Summarize => include_str!("../templates/summarize.txt"),
            TemplateName::StarterCodes => include_str!("../templates/starter_codes.txt"),
            TemplateName::Induction => include_str!("../templates/induction.txt"),
            TemplateName::Themes => include_str!("../templates/themes.txt"),
            TemplateName::SimPersonas => include_str!("../templates/sim_personas.txt"),
            TemplateName::SimContexts => include_str!("../templates/sim_contexts.txt"),
            TemplateName::SimThemes => include_str!("../templates/sim_themes.txt"),
            TemplateName::SimSubthemes => include_str!("../templates/sim_subthemes.txt"),
            TemplateName::SimResponse => include_str!("../templates/sim_response.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".txt"))
    }
}

enum Piece {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: TemplateName,
    pub body: String,
    pub placeholders: BTreeSet<String>,
}

impl Template {
    /// Builds a template from a file body. One trailing newline is dropped
    /// so that files can end with a newline without it reaching the model.
    pub fn new(name: TemplateName, body: &str) -> Result<Self, TemplateError> {
        let body = body.strip_suffix('\n').unwrap_or(body).to_string();
        let declared: BTreeSet<String> = name
            .declared_placeholders()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut template = Self {
            name,
            body,
            placeholders: declared,
        };
        let used = template.used_placeholders()?;
        let undeclared: Vec<String> = used.difference(&template.placeholders).cloned().collect();
        if !undeclared.is_empty() {
            return Err(TemplateError::Undeclared { template: name, undeclared });
        }
        template.placeholders = used;
        Ok(template)
    }

    fn pieces(&self) -> Result<Vec<Piece>, TemplateError> {
        let bytes = self.body.as_bytes();
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    literal.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    literal.push('}');
                    i += 2;
                }
                b'{' => {
                    let close = self.body[i + 1..]
                        .find('}')
                        .ok_or(TemplateError::Syntax { template: self.name, offset: i })?;
                    let ident = &self.body[i + 1..i + 1 + close];
                    if ident.is_empty() || !ident.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                        return Err(TemplateError::Syntax { template: self.name, offset: i });
                    }
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    pieces.push(Piece::Placeholder(ident.to_string()));
                    i += close + 2;
                }
                b'}' => return Err(TemplateError::Syntax { template: self.name, offset: i }),
                _ => {
                    let ch = self.body[i..].chars().next().expect("in bounds");
                    literal.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        pieces.push(Piece::Literal(literal));
        Ok(pieces)
    }

    fn used_placeholders(&self) -> Result<BTreeSet<String>, TemplateError> {
        Ok(self
            .pieces()?
            .into_iter()
            .filter_map(|p| match p {
                Piece::Placeholder(name) => Some(name),
                Piece::Literal(_) => None,
            })
            .collect())
    }

    pub fn render(&self, substitutions: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let missing: Vec<String> = self
            .placeholders
            .iter()
            .filter(|p| !substitutions.contains_key(p.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(TemplateError::Missing { template: self.name, missing });
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        for piece in self.pieces()? {
            match piece {
                Piece::Literal(text) => out.push_str(&text),
                Piece::Placeholder(name) => out.push_str(&substitutions[name.as_str()]),
            }
        }
        Ok(out)
    }
}

/// Reports the first `{name}` token left in a rendered prompt whose name is
/// one of the template's placeholders.
pub fn check_resolved(template: &Template, rendered: &str) -> Result<(), TemplateError> {
    for name in &template.placeholders {
        let token = format!("{{{name}}}");
        if rendered.contains(&token) {
            return Err(TemplateError::Unresolved {
                template: template.name,
                token,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateName::ALL
            .iter()
            .map(|&name| {
                let t = Template::new(name, name.builtin_body()).expect("shipped templates are valid");
                (name, t)
            })
            .collect();
        Self { templates }
    }

    /// Loads templates from `dir`, falling back to the shipped copy for any
    /// file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(name, Template::new(name, &body)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &Template {
        &self.templates[&name]
    }

    pub fn render(&self, name: TemplateName, substitutions: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let template = self.get(name);
        let rendered = template.render(substitutions)?;
        Ok(rendered)
    }

    /// Digest over every template body, used as a stage input hash.
    pub fn digest(&self) -> String {
        let mut joined = String::new();
        for (name, t) in &self.templates {
            joined.push_str(name.file_name());
            joined.push('\0');
            joined.push_str(&t.body);
            joined.push('\0');
        }
        sha256_hex(joined.as_bytes())
    }
}

/// Builds a substitution map from string pairs.
pub fn subs<const N: usize>(pairs: [(&'static str, String); N]) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn starter_subs(k: usize) -> BTreeMap<&'static str, String> {
        let code_template = (1..=k).map(|i| format!("{i}. Code {i}")).collect::<Vec<_>>().join("\n");
        subs([
            ("k_to_start", k.to_string()),
            ("data_type", "written response".into()),
            ("data_collection_context", "a study".into()),
            ("code_template", code_template),
        ])
    }

    #[test]
    fn starter_prompt_counts_codes() {
        let set = TemplateSet::builtin();
        let out = set.render(TemplateName::StarterCodes, &starter_subs(20)).unwrap();
        assert!(out.contains("generate 20 hypothetical codes"));
        let out = set.render(TemplateName::StarterCodes, &starter_subs(5)).unwrap();
        assert!(out.ends_with("1. Code 1\n2. Code 2\n3. Code 3\n4. Code 4\n5. Code 5"));
    }

    #[test]
    fn research_question_fills_both_sites() {
        let set = TemplateSet::builtin();
        let q = "What factors affect ethical culture?";
        let out = set
            .render(
                TemplateName::Themes,
                &subs([
                    ("research_question", q.into()),
                    ("data_type", "written response".into()),
                    ("data_collection_context", "a study".into()),
                    ("labels", "1. a\n2. b".into()),
                ]),
            )
            .unwrap();
        assert_eq!(out.matches(q).count(), 3);
        assert_eq!(out.matches(&format!("\"{q}\"")).count(), 2);
        assert!(out.contains("\"suggested_themes\": ["));
        assert!(out.contains("\n{\n  \"initial_observations\""));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn missing_substitution_is_reported() {
        let set = TemplateSet::builtin();
        let err = set
            .render(
                TemplateName::Summarize,
                &subs([("data_type", "x".into()), ("data_collection_context", "y".into())]),
            )
            .unwrap_err();
        match err {
            TemplateError::Missing { missing, .. } => assert_eq!(missing, vec!["text".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_placeholder_rejected() {
        assert!(matches!(
            Template::new(TemplateName::Summarize, "hello {nope}"),
            Err(TemplateError::Undeclared { .. })
        ));
        assert!(matches!(
            Template::new(TemplateName::Summarize, "hello {text"),
            Err(TemplateError::Syntax { .. })
        ));
    }

    #[test]
    fn every_shipped_template_declares_what_it_uses() {
        let set = TemplateSet::builtin();
        for name in TemplateName::ALL {
            let t = set.get(name);
            let declared: BTreeSet<String> = name.declared_placeholders().iter().map(|s| s.to_string()).collect();
            assert_eq!(t.placeholders, declared, "{name}");
        }
    }

    proptest! {
        #[test]
        fn rendering_is_injective(a in "[a-z ]{0,20}", b in "[a-z ]{0,20}") {
            let set = TemplateSet::builtin();
            let render = |text: &str| set.render(TemplateName::Summarize, &subs([
                ("data_type", "response".into()),
                ("data_collection_context", "ctx".into()),
                ("text", text.to_string()),
            ])).unwrap();
            prop_assert_eq!(render(&a) == render(&b), a == b);
        }
    }
}
