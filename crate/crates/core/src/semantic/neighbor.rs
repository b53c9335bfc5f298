//! UMAP-style neighbor-graph embedding.
//!
//! Builds a fuzzy k-nearest-neighbor graph (smooth-kNN membership strengths
//! with probabilistic-union symmetrization) and lays it out in `dims`
//! dimensions by edge-sampled SGD with negative sampling. All randomness
//! comes from one seeded ChaCha stream and the optimizer is sequential, so
//! the output is a pure function of (input, dims, seed, params).

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// Defaults to 500 for up to 10k rows and 200 above that.
    pub n_epochs: Option<usize>,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub repulsion_strength: f64,
}

impl Default for NeighborParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: None,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            repulsion_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeighborEmbedding {
    pub coords: DMatrix<f64>,
    /// True when the input was too small for a neighbor graph and the
    /// leading input columns were used instead.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Fits `1 / (1 + a x^(2b))` to the target membership curve defined by
/// `min_dist` and `spread` with Levenberg-Marquardt.
pub fn fit_curve_params(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let residuals = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = residuals(a, b);
    for _ in 0..500 {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let u = x.powf(2.0 * b);
            let denom = (1.0 + a * u).powi(2);
            let r = 1.0 / (1.0 + a * u) - y;
            let da = -u / denom;
            let db = -a * u * 2.0 * x.ln() / denom;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let (maa, mbb) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
        let det = maa * mbb - jab * jab;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = -(mbb * ga - jab * gb) / det;
        let step_b = -(maa * gb - jab * ga) / det;
        let (na, nb) = (a + step_a, b + step_b);
        if na > 0.0 && nb > 0.0 {
            let new_cost = residuals(na, nb);
            if new_cost < cost {
                let converged = (cost - new_cost) < 1e-15 * cost.max(1e-300);
                a = na;
                b = nb;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if converged {
                    break;
                }
                continue;
            }
        }
        lambda *= 10.0;
        if lambda > 1e12 {
            break;
        }
    }
    (a, b)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k nearest neighbors (excluding self) by Euclidean distance, ties
/// broken by row index.
fn knn(rows: &[Vec<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    rows.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, b)| (j, sq_dist(a, b).sqrt()))
                .collect();
            d.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// Per-row (rho, sigma) so that the membership strengths of each row's
/// neighbors sum to log2(k).
fn smooth_knn(neighbors: &[Vec<(usize, f64)>], k: usize) -> Vec<(f64, f64)> {
    let target = (k as f64).log2();
    let global_mean = {
        let all: Vec<f64> = neighbors.iter().flatten().map(|(_, d)| *d).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    };
    neighbors
        .iter()
        .map(|row| {
            let rho = row.iter().map(|(_, d)| *d).find(|d| *d > 0.0).unwrap_or(0.0);
            let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
            for _ in 0..64 {
                let psum: f64 = row
                    .iter()
                    .map(|(_, d)| {
                        let gap = d - rho;
                        if gap > 0.0 {
                            (-gap / mid).exp()
                        } else {
                            1.0
                        }
                    })
                    .sum();
                if (psum - target).abs() < 1e-5 {
                    break;
                }
                if psum > target {
                    hi = mid;
                    mid = (lo + hi) / 2.0;
                } else {
                    lo = mid;
                    mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
                }
            }
            let row_mean = row.iter().map(|(_, d)| *d).sum::<f64>() / row.len().max(1) as f64;
            let floor = if rho > 0.0 { 1e-3 * row_mean } else { 1e-3 * global_mean };
            (rho, mid.max(floor).max(f64::MIN_POSITIVE))
        })
        .collect()
}

/// Symmetric fuzzy graph as a directed edge list (both directions), sorted.
fn fuzzy_graph(neighbors: &[Vec<(usize, f64)>], scales: &[(f64, f64)]) -> Vec<(usize, usize, f64)> {
    use std::collections::BTreeMap;
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, row) in neighbors.iter().enumerate() {
        let (rho, sigma) = scales[i];
        for &(j, d) in row {
            let w = (-((d - rho).max(0.0)) / sigma).exp();
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let combined = w + back - w * back;
        sym.insert((i, j), combined);
        sym.insert((j, i), combined);
    }
    sym.into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|((i, j), w)| (i, j, w))
        .collect()
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Embeds the rows of `projected` into `dims` dimensions.
///
/// Inputs with fewer than `dims + 2` rows are returned as their leading
/// `dims` columns (zero padded) with a warning.
pub fn neighbor_embed(projected: &DMatrix<f64>, dims: usize, seed: u64, params: &NeighborParams) -> NeighborEmbedding {
    let (n, d) = projected.shape();
    if n < dims + 2 {
        let msg = format!("{n} rows is too few for a {dims}-d neighbor embedding; using PCA truncation");
        warn!("{msg}");
        let mut coords = DMatrix::<f64>::zeros(n, dims);
        for c in 0..dims.min(d) {
            coords.set_column(c, &projected.column(c));
        }
        return NeighborEmbedding {
            coords,
            fallback: true,
            warnings: vec![msg],
        };
    }

    let rows: Vec<Vec<f64>> = projected.row_iter().map(|r| r.iter().copied().collect()).collect();
    let k = params.n_neighbors.clamp(2, n - 1);
    let neighbors = knn(&rows, k);
    let scales = smooth_knn(&neighbors, k);
    let edges = fuzzy_graph(&neighbors, &scales);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = initial_layout(projected, dims, &mut rng);
    let n_epochs = params.n_epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 });
    optimize(&mut emb, n, dims, &edges, n_epochs, params, &mut rng);

    NeighborEmbedding {
        coords: DMatrix::from_row_slice(n, dims, &emb),
        fallback: false,
        warnings: Vec::new(),
    }
}

/// Leading input columns (zero padded), min-max scaled to [0, 10] per
/// column, plus a little seeded jitter. Returned row-major.
fn initial_layout(projected: &DMatrix<f64>, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, d) = projected.shape();
    let jitter = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut emb = vec![0.0; n * dims];
    for c in 0..dims {
        if c < d {
            let col = projected.column(c);
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let range = hi - lo;
            for r in 0..n {
                emb[r * dims + c] = if range > 0.0 { 10.0 * (col[r] - lo) / range } else { 5.0 };
            }
        } else {
            for r in 0..n {
                emb[r * dims + c] = rng.random_range(0.0..10.0);
            }
        }
    }
    for x in emb.iter_mut() {
        *x += jitter.sample(rng);
    }
    emb
}

fn optimize(
    emb: &mut [f64],
    n: usize,
    dims: usize,
    edges: &[(usize, usize, f64)],
    n_epochs: usize,
    params: &NeighborParams,
    rng: &mut ChaCha8Rng,
) {
    if edges.is_empty() || n_epochs == 0 {
        return;
    }
    let (a, b) = fit_curve_params(params.min_dist, params.spread);
    let max_w = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let kept: Vec<&(usize, usize, f64)> = edges.iter().filter(|e| e.2 >= max_w / n_epochs as f64).collect();
    let epochs_per_sample: Vec<f64> = kept.iter().map(|e| max_w / e.2).collect();
    let neg_rate = params.negative_sample_rate.max(1) as f64;
    let epochs_per_negative: Vec<f64> = epochs_per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next_sample = epochs_per_sample.clone();
    let mut next_negative = epochs_per_negative.clone();
    let gamma = params.repulsion_strength;

    for epoch in 0..n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let epoch_f = epoch as f64;
        for (e, &&(head, tail, _)) in kept.iter().enumerate() {
            if next_sample[e] > epoch_f {
                continue;
            }
            let d2: f64 = (0..dims).map(|c| (emb[head * dims + c] - emb[tail * dims + c]).powi(2)).sum();
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for c in 0..dims {
                    let g = clip(coeff * (emb[head * dims + c] - emb[tail * dims + c])) * alpha;
                    emb[head * dims + c] += g;
                    emb[tail * dims + c] -= g;
                }
            }
            next_sample[e] += epochs_per_sample[e];

            let n_neg = ((epoch_f - next_negative[e]) / epochs_per_negative[e]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let other = rng.random_range(0..n);
                if other == head {
                    continue;
                }
                let d2: f64 = (0..dims).map(|c| (emb[head * dims + c] - emb[other * dims + c]).powi(2)).sum();
                if d2 <= 0.0 {
                    continue;
                }
                let coeff = 2.0 * gamma * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                for c in 0..dims {
                    let g = clip(coeff * (emb[head * dims + c] - emb[other * dims + c])) * alpha;
                    emb[head * dims + c] += g;
                }
            }
            next_negative[e] += n_neg as f64 * epochs_per_negative[e];
        }
    }
}
