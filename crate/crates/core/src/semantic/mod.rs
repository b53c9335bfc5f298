//! Geometry: normalization, cosine similarity, PCA, neighbor-graph
//! embedding, agglomerative clustering and exact code retrieval.

mod cluster;
mod index;
mod neighbor;
mod pca;
mod vector;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::EmbeddingVector;

pub use cluster::{agglomerative_cluster, cut_tree, linkage, target_cluster_count, Merge};
pub use index::{knn_codes, CodeIndex};
pub use neighbor::{fit_curve_params, neighbor_embed, NeighborEmbedding, NeighborParams};
pub use pca::{pca_fit_transform, select_components, PcaResult};
pub use vector::{cosine_similarity, cosine_values, dot, normalize, normalize_values};

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimsMismatch { expected: usize, found: usize },
    #[error("similarity undefined for a zero vector")]
    ZeroVector,
    #[error("{rows} rows given, at least {needed} required")]
    TooFewRows { rows: usize, needed: usize },
    #[error("degenerate input: all rows identical")]
    Degenerate,
    #[error("variance target {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("code index is empty")]
    EmptyIndex,
    #[error("label already indexed: {0}")]
    DuplicateLabel(String),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMatrix {
    pub row_ids: Vec<String>,
    pub pca_dims: usize,
    pub final_dims: usize,
    pub coords: Vec<Vec<f64>>,
    pub explained_variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceParams {
    pub variance_target: f64,
    pub dims: usize,
    pub seed: u64,
    pub neighbor: NeighborParams,
}

/// Normalizes the embeddings, keeps the fewest principal components that
/// reach the variance target, then embeds those into `dims` dimensions.
/// Returns the reduced matrix together with any warnings raised.
pub fn reduce(
    vectors: &[EmbeddingVector],
    row_ids: &[String],
    params: &ReduceParams,
) -> Result<(ReducedMatrix, Vec<String>), SemanticError> {
    if vectors.len() != row_ids.len() {
        return Err(SemanticError::DimsMismatch {
            expected: row_ids.len(),
            found: vectors.len(),
        });
    }
    let n = vectors.len();
    if n == 0 {
        return Err(SemanticError::TooFewRows { rows: 0, needed: 1 });
    }
    let d = vectors[0].values.len();
    let mut data = Vec::with_capacity(n * d);
    for v in vectors {
        if v.values.len() != d {
            return Err(SemanticError::DimsMismatch {
                expected: d,
                found: v.values.len(),
            });
        }
        data.extend(normalize_values(&v.values)?);
    }
    let matrix = DMatrix::from_row_slice(n, d, &data);
    let mut warnings = Vec::new();

    let pca = match pca_fit_transform(&matrix, params.variance_target) {
        Ok(p) => Some(p),
        Err(SemanticError::TooFewRows { .. }) | Err(SemanticError::Degenerate) => {
            let msg = format!("{n} row(s) carry no variance; every row is placed at the origin");
            warn!("{msg}");
            warnings.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    let (pca_dims, explained, coords) = match pca {
        Some(p) => {
            let embedded = neighbor_embed(&p.projected, params.dims, params.seed, &params.neighbor);
            warnings.extend(embedded.warnings);
            (p.components, p.explained, embedded.coords)
        }
        None => (0, 1.0, DMatrix::zeros(n, params.dims)),
    };
    let coords = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok((
        ReducedMatrix {
            row_ids: row_ids.to_vec(),
            pca_dims,
            final_dims: params.dims,
            coords,
            explained_variance: explained,
            seed: params.seed,
        },
        warnings,
    ))
}
