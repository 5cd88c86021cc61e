//! KMeans with a learnable diagonal Mahalanobis metric, plus the plain
//! L1/L2 variants used for ablations.
//!
//! All three variants share one Lloyd loop parameterized by a
//! [`Dissimilarity`]: the assignment distance, the per-point objective
//! contribution, and the centroid rule that minimizes that objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, Vector};

/// Lower bound on every effective metric weight.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Diagonal of the metric matrix `W`.
///
/// The vector is the trainable parameter itself; the optimizer keeps it on
/// the feasible set `{w ≥ WEIGHT_FLOOR, mean(w) = 1}` via [`project`](Self::project).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    w: Vec<f64>,
}

impl MetricWeights {
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::contract("metric weights must be non-empty"));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::contract(format!("metric weight {bad} is not a finite nonnegative number")));
        }
        Ok(Self { w })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / self.w.len() as f64
    }

    pub fn is_normalized(&self) -> bool {
        self.w.iter().all(|&v| v >= WEIGHT_FLOOR) && (self.mean() - 1.0).abs() <= 1e-12
    }

    /// Clamp at [`WEIGHT_FLOOR`] and rescale to mean 1. Already-feasible
    /// weights are left untouched.
    pub fn project(&mut self) {
        for _ in 0..64 {
            if self.is_normalized() {
                return;
            }
            for v in &mut self.w {
                if !(*v >= WEIGHT_FLOOR) {
                    *v = WEIGHT_FLOOR;
                }
            }
            let mean = self.mean();
            for v in &mut self.w {
                *v /= mean;
            }
        }
    }
}

/// `√(Σ w_k (x_k − y_k)²)`.
pub fn adaptive_distance(x: &[f64], y: &[f64], m: &MetricWeights) -> Result<f64> {
    if x.len() != y.len() || x.len() != m.len() {
        return Err(Error::contract(format!(
            "adaptive distance needs equal lengths, got {}, {} and {} weights",
            x.len(),
            y.len(),
            m.len()
        )));
    }
    Ok(Adaptive(m).distance(x, y))
}

/// Distance used by the Lloyd loop.
pub trait Dissimilarity {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64;

    /// Contribution of `x` to the Lloyd objective when assigned to centroid `c`.
    /// Must be a nondecreasing function of `distance`.
    fn cost(&self, x: &[f64], c: &[f64]) -> f64;

    /// Minimizer of the summed cost over `rows`.
    fn centroid(&self, rows: &[&[f64]]) -> Vec<f64>;
}

/// Diagonal Mahalanobis distance; squared-distance objective, mean centroid.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive<'a>(pub &'a MetricWeights);

#[derive(Debug, Clone, Copy)]
pub struct Euclidean;

#[derive(Debug, Clone, Copy)]
pub struct Manhattan;

fn weighted_sq(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(y).zip(w).map(|((a, b), w)| w * (a - b) * (a - b)).sum()
}

fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows[0].len();
    let mut acc = vec![0.0; n];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    let count = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    acc
}

impl Dissimilarity for Adaptive<'_> {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        weighted_sq(x, y, self.0.as_slice()).sqrt()
    }

    fn cost(&self, x: &[f64], c: &[f64]) -> f64 {
        weighted_sq(x, c, self.0.as_slice())
    }

    // The per-dimension mean minimizes Σ w_k (x_k − c_k)² for any w ≥ 0.
    fn centroid(&self, rows: &[&[f64]]) -> Vec<f64> {
        mean_rows(rows)
    }
}

impl Dissimilarity for Euclidean {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.cost(x, y).sqrt()
    }

    fn cost(&self, x: &[f64], c: &[f64]) -> f64 {
        x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn centroid(&self, rows: &[&[f64]]) -> Vec<f64> {
        mean_rows(rows)
    }
}

impl Dissimilarity for Manhattan {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
    }

    fn cost(&self, x: &[f64], c: &[f64]) -> f64 {
        self.distance(x, c)
    }

    fn centroid(&self, rows: &[&[f64]]) -> Vec<f64> {
        let n = rows[0].len();
        let mut column = Vec::with_capacity(rows.len());
        (0..n)
            .map(|j| {
                column.clear();
                column.extend(rows.iter().map(|r| r[j]));
                column.sort_by(f64::total_cmp);
                let m = column.len();
                if m % 2 == 1 {
                    column[m / 2]
                } else {
                    0.5 * (column[m / 2 - 1] + column[m / 2])
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls to or below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

pub(crate) fn rows_of(z: &Matrix) -> Vec<Vec<f64>> {
    z.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_matrix(rows: &[Vec<f64>], cols: usize) -> Matrix {
    Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

fn check_input(z: &Matrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::contract("cluster count must be at least 1"));
    }
    if z.nrows() < k {
        return Err(Error::contract(format!(
            "cannot form {k} clusters from {} rows",
            z.nrows()
        )));
    }
    if z.ncols() == 0 {
        return Err(Error::contract("rows must have at least one feature"));
    }
    ensure_finite(z, "clustering input")
}

/// Distance-squared-proportional seeding (k-means++), deterministic in `seed`.
///
/// Already-chosen rows are never drawn again; if every remaining row sits at
/// distance zero the lowest unchosen index is taken.
pub fn kmeanspp_init(z: &Matrix, k: usize, diss: &impl Dissimilarity, seed: u64) -> Result<Matrix> {
    check_input(z, k)?;
    let rows = rows_of(z);
    let picked = kmeanspp_indices(&rows, k, diss, seed);
    let chosen: Vec<Vec<f64>> = picked.iter().map(|&i| rows[i].clone()).collect();
    Ok(to_matrix(&chosen, z.ncols()))
}

fn kmeanspp_indices(rows: &[Vec<f64>], k: usize, diss: &impl Dissimilarity, seed: u64) -> Vec<usize> {
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    picked.push(first);
    chosen[first] = true;
    let mut nearest: Vec<f64> = rows.iter().map(|r| diss.distance(r, &rows[first]).powi(2)).collect();
    while picked.len() < k {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| nearest[i]).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                acc += nearest[i];
                if nearest[i] > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // round-off can leave target ≥ acc; fall back to the last positive weight
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && nearest[i] > 0.0).unwrap())
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        picked.push(next);
        chosen[next] = true;
        for (i, r) in rows.iter().enumerate() {
            let d = diss.distance(r, &rows[next]).powi(2);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    picked
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>], diss: &impl Dissimilarity) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = diss.distance(x, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd iterations from explicit initial centroids.
pub fn lloyd(z: &Matrix, init: &Matrix, diss: &impl Dissimilarity, max_iter: usize, tol: f64) -> Result<ClusterResult> {
    let k = init.nrows();
    check_input(z, k)?;
    if init.ncols() != z.ncols() {
        return Err(Error::contract("initial centroids have the wrong dimension"));
    }
    if max_iter == 0 || !(tol >= 0.0) {
        return Err(Error::contract("max_iter must be >= 1 and tol >= 0"));
    }
    let rows = rows_of(z);
    let mut centroids = rows_of(init);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let mut next: Vec<usize> = rows.iter().map(|r| nearest_centroid(r, &centroids, diss)).collect();
        repair_empty(&rows, &mut next, &mut centroids, diss);

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64]> = rows
                .iter()
                .zip(&next)
                .filter(|(_, &a)| a == c)
                .map(|(r, _)| r.as_slice())
                .collect();
            *centroid = diss.centroid(&members);
        }
        let inertia: f64 = rows.iter().zip(&next).map(|(r, &a)| diss.cost(r, &centroids[a])).sum();

        let unchanged = next == assignments;
        assignments = next;
        let stalled = history
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= tol * prev);
        history.push(inertia);
        if unchanged || stalled {
            converged = true;
            break;
        }
    }

    Ok(ClusterResult {
        assignments,
        centroids: to_matrix(&centroids, z.ncols()),
        inertia: *history.last().unwrap(),
        iterations: history.len(),
        converged,
        inertia_history: history,
    })
}

/// Gives every empty cluster the point farthest from its current centroid,
/// drawn from clusters that keep at least one member.
fn repair_empty(rows: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>], diss: &impl Dissimilarity) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_cost = -1.0;
        for (i, r) in rows.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let cost = diss.cost(r, &centroids[a]);
            if cost > far_cost {
                far_cost = cost;
                far = Some(i);
            }
        }
        let i = far.expect("N >= k guarantees a donor cluster");
        sizes[assignments[i]] -= 1;
        assignments[i] = c;
        sizes[c] = 1;
        centroids[c] = rows[i].clone();
    }
}

pub fn weighted_kmeans(z: &Matrix, m: &MetricWeights, cfg: &KMeansConfig) -> Result<ClusterResult> {
    if m.len() != z.ncols() {
        return Err(Error::contract(format!(
            "{} metric weights for {}-dimensional rows",
            m.len(),
            z.ncols()
        )));
    }
    let diss = Adaptive(m);
    let init = kmeanspp_init(z, cfg.k, &diss, cfg.seed)?;
    lloyd(z, &init, &diss, cfg.max_iter, cfg.tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpNorm {
    L1,
    L2,
}

pub fn lp_kmeans(z: &Matrix, p: LpNorm, cfg: &KMeansConfig) -> Result<ClusterResult> {
    match p {
        LpNorm::L1 => {
            let init = kmeanspp_init(z, cfg.k, &Manhattan, cfg.seed)?;
            lloyd(z, &init, &Manhattan, cfg.max_iter, cfg.tol)
        }
        LpNorm::L2 => {
            let init = kmeanspp_init(z, cfg.k, &Euclidean, cfg.seed)?;
            lloyd(z, &init, &Euclidean, cfg.max_iter, cfg.tol)
        }
    }
}

/// Row `i` of `z` as an owned vector.
pub fn row_vector(z: &Matrix, i: usize) -> Vector {
    z.row(i).transpose()
}
