//! Average-linkage agglomerative clustering with Euclidean distance.
//!
//! The merge tree is built with the nearest-neighbor-chain algorithm over a
//! condensed distance matrix, then sorted by merge height so that it lists
//! merges in the same order as the textbook closest-pair-first procedure.

use serde::{Deserialize, Serialize};

use crate::domain::Cluster;

/// One merge step. Ids below `n` are original rows; id `n + i` is the
/// cluster created by step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Raw merges in discovery order as (slot_a, slot_b, height), slot_a <
/// slot_b. The merged cluster keeps slot_b.
fn nn_chain(rows: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = rows.len();
    let mut dist = vec![0.0f64; n * n.saturating_sub(1) / 2];
    for i in 0..n {
        for j in i + 1..n {
            dist[condensed_index(n, i, j)] = euclidean(&rows[i], &rows[j]);
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for _ in 0..n.saturating_sub(1) {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).expect("an active slot remains"));
        }
        let (x, y, height) = loop {
            let x = *chain.last().expect("chain non-empty");
            let (mut y, mut best) = if chain.len() > 1 {
                let prev = chain[chain.len() - 2];
                (prev, dist[condensed_index(n, x, prev)])
            } else {
                (usize::MAX, f64::INFINITY)
            };
            for i in (0..n).filter(|&i| active[i] && i != x) {
                let d = dist[condensed_index(n, x, i)];
                if d < best {
                    best = d;
                    y = i;
                }
            }
            if chain.len() > 1 && y == chain[chain.len() - 2] {
                break (x, y, best);
            }
            chain.push(y);
        };
        chain.pop();
        chain.pop();
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        merges.push((lo, hi, height));

        let (size_lo, size_hi) = (size[lo] as f64, size[hi] as f64);
        active[lo] = false;
        for i in (0..n).filter(|&i| active[i] && i != hi) {
            let d_lo = dist[condensed_index(n, i, lo)];
            let d_hi = dist[condensed_index(n, i, hi)];
            dist[condensed_index(n, i, hi)] = (size_lo * d_lo + size_hi * d_hi) / (size_lo + size_hi);
        }
        size[hi] += size[lo];
    }
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Full average-linkage merge tree for the given rows, ordered by height.
pub fn linkage(rows: &[Vec<f64>]) -> Vec<Merge> {
    let n = rows.len();
    let mut raw = nn_chain(rows);
    raw.sort_by(|a, b| a.2.total_cmp(&b.2));

    // relabel slot pairs into dendrogram ids
    let mut uf = UnionFind::new(2 * n);
    let mut sizes = vec![1usize; 2 * n];
    raw.iter()
        .enumerate()
        .map(|(step, &(a, b, height))| {
            let (ra, rb) = (uf.find(a), uf.find(b));
            let new_id = n + step;
            uf.parent[ra] = new_id;
            uf.parent[rb] = new_id;
            sizes[new_id] = sizes[ra] + sizes[rb];
            let (left, right) = if ra < rb { (ra, rb) } else { (rb, ra) };
            Merge {
                left,
                right,
                height,
                size: sizes[new_id],
            }
        })
        .collect()
}

/// Row index groups after applying the first `n - k` merges, ordered by
/// each group's smallest row index.
pub fn cut_tree(n: usize, merges: &[Merge], k: usize) -> Vec<Vec<usize>> {
    let k = k.clamp(1, n.max(1));
    let mut uf = UnionFind::new(2 * n);
    for (step, m) in merges.iter().take(n.saturating_sub(k)).enumerate() {
        let (a, b) = (uf.find(m.left), uf.find(m.right));
        uf.parent[a] = n + step;
        uf.parent[b] = n + step;
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for row in 0..n {
        let root = uf.find(row);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(row),
            None => groups.push((root, vec![row])),
        }
    }
    groups.into_iter().map(|(_, members)| members).collect()
}

/// Number of clusters the stop rule targets for `n` rows.
pub fn target_cluster_count(n: usize, target_cluster_size: usize) -> usize {
    n.div_ceil(target_cluster_size.max(1)).max(1)
}

/// Partitions the rows into `ceil(n / target_cluster_size)` clusters.
/// Cluster ids start at 0 and follow each cluster's smallest row index;
/// members keep row order.
pub fn agglomerative_cluster(coords: &[Vec<f64>], row_ids: &[String], target_cluster_size: usize) -> Vec<Cluster> {
    assert_eq!(coords.len(), row_ids.len(), "coords and row ids must align");
    let n = coords.len();
    if n == 0 {
        return Vec::new();
    }
    let merges = linkage(coords);
    cut_tree(n, &merges, target_cluster_count(n, target_cluster_size))
        .into_iter()
        .enumerate()
        .map(|(id, rows)| Cluster {
            id: id as u32,
            member_ids: rows.into_iter().map(|r| row_ids[r].clone()).collect(),
        })
        .collect()
}
