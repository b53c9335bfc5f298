use crate::domain::EmbeddingVector;

use super::vector::{dot, normalize_values};
use super::SemanticError;

/// Exact cosine index over code labels. Vectors are stored unit-normalized
/// so similarity is a dot product.
#[derive(Debug, Clone, Default)]
pub struct CodeIndex {
    entries: Vec<(String, Vec<f64>)>,
    dims: Option<usize>,
}

impl CodeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.iter().any(|(l, _)| l == label)
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: &EmbeddingVector) -> Result<(), SemanticError> {
        let label = label.into();
        if self.contains(&label) {
            return Err(SemanticError::DuplicateLabel(label));
        }
        if let Some(d) = self.dims {
            if d != vector.values.len() {
                return Err(SemanticError::DimsMismatch {
                    expected: d,
                    found: vector.values.len(),
                });
            }
        }
        let unit = normalize_values(&vector.values)?;
        self.dims = Some(unit.len());
        self.entries.push((label, unit));
        Ok(())
    }
}

/// The `min(k, |index|)` most similar codes, by descending cosine
/// similarity with ties going to the earlier-inserted code.
pub fn knn_codes(query: &EmbeddingVector, index: &CodeIndex, k: usize) -> Result<Vec<(String, f64)>, SemanticError> {
    if index.is_empty() {
        return Err(SemanticError::EmptyIndex);
    }
    if k == 0 {
        return Err(SemanticError::InvalidK);
    }
    let dims = index.dims.expect("non-empty index has dims");
    if query.values.len() != dims {
        return Err(SemanticError::DimsMismatch {
            expected: dims,
            found: query.values.len(),
        });
    }
    let q = normalize_values(&query.values)?;
    let mut scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, (_, v))| (i, dot(&q, v).clamp(-1.0, 1.0)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (index.entries[i].0.clone(), s))
        .collect())
}
