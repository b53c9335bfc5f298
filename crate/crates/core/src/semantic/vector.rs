use crate::domain::EmbeddingVector;

use super::SemanticError;

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), SemanticError> {
    if a.len() != b.len() {
        return Err(SemanticError::DimsMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, SemanticError> {
    Ok(EmbeddingVector::new(v.model_id.clone(), normalize_values(&v.values)?))
}

pub fn normalize_values(values: &[f64]) -> Result<Vec<f64>, SemanticError> {
    let n = norm(values);
    if n == 0.0 || !n.is_finite() {
        return Err(SemanticError::ZeroVector);
    }
    Ok(values.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SemanticError> {
    cosine_values(&a.values, &b.values)
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_values(a: &[f64], b: &[f64]) -> Result<f64, SemanticError> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(SemanticError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
