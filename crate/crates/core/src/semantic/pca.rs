use nalgebra::{DMatrix, SymmetricEigen};

use super::SemanticError;

/// Slack on the cumulative variance comparison so that a target of 1.0 is
/// reachable despite rounding.
const VARIANCE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Number of retained components.
    pub components: usize,
    /// Rows projected onto the retained components, in descending
    /// eigenvalue order.
    pub projected: DMatrix<f64>,
    /// Fraction of total variance carried by the retained components.
    pub explained: f64,
    /// Per-component variance fractions for every component, descending.
    pub explained_ratios: Vec<f64>,
}

/// Smallest component count whose cumulative variance fraction reaches
/// `target`.
pub fn select_components(ratios: &[f64], target: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target - VARIANCE_SLACK {
            return i + 1;
        }
    }
    ratios.len()
}

/// Mean-centers `matrix` (rows are observations) and projects it onto the
/// fewest principal components retaining `target` of the variance.
///
/// The eigendecomposition runs on whichever of the Gram matrix (n x n) or
/// the scatter matrix (d x d) is smaller.
pub fn pca_fit_transform(matrix: &DMatrix<f64>, target: f64) -> Result<PcaResult, SemanticError> {
    let (n, d) = matrix.shape();
    if n < 2 {
        return Err(SemanticError::TooFewRows { rows: n, needed: 2 });
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(SemanticError::InvalidTarget(target));
    }
    let mean = matrix.row_mean();
    let mut centered = matrix.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }

    let scale: f64 = matrix.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    let gram_route = n <= d;
    let sym = if gram_route {
        &centered * centered.transpose()
    } else {
        centered.transpose() * &centered
    };
    let eigen = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 1e-12 * scale {
        return Err(SemanticError::Degenerate);
    }
    let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();
    let components = select_components(&ratios, target);
    let explained: f64 = ratios[..components].iter().sum();

    let mut projected = DMatrix::<f64>::zeros(n, components);
    for (c, &idx) in order.iter().take(components).enumerate() {
        let vector = eigen.eigenvectors.column(idx);
        let column = if gram_route {
            vector * values[c].sqrt()
        } else {
            &centered * vector
        };
        projected.set_column(c, &column);
    }
    orient_columns(&mut projected);

    Ok(PcaResult {
        components,
        projected,
        explained: explained.min(1.0),
        explained_ratios: ratios,
    })
}

/// Flips each column so that its largest-magnitude entry is positive,
/// removing the sign ambiguity of eigenvectors.
fn orient_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() + 1e-12 {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}
