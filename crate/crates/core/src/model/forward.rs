use std::cmp::Ordering;

use crate::clustering::{lp_kmeans, weighted_kmeans, Adaptive, Dissimilarity, Euclidean, LpNorm, Manhattan, MetricWeights};
use crate::data::Bag;
use crate::error::{Error, Result};
use crate::grassmann::{column_mean, gfk_kernel, gsvd_pair, pca_subspace};
use crate::numerics::{Matrix, Vector};
use crate::proxy::{aggregate_weighted, label_from_distances, label_pinned, ProxyLabeling, Role};

use super::config::{Aggregation, Embedding, MetricKind, TrainConfig};
use super::params::ModelParams;

/// Everything the non-differentiable stages decide during a forward pass.
/// Replaying a pass with the same pins makes the loss a smooth function of
/// the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pins {
    /// Re-embedding matrix (`√G`, a projector, or the identity).
    pub transform: Matrix,
    /// Cluster of each instance in canonical (sorted-row) order.
    pub assignments: Vec<usize>,
    pub tumor: usize,
    pub background: usize,
    pub degenerate: bool,
}

/// Intermediates kept for the backward pass, all in canonical row order.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub raw: Matrix,
    pub raw_pki: Matrix,
    pub x: Matrix,
    pub xp: Matrix,
    pub z: Matrix,
    pub sizes: Vec<usize>,
    pub proxies: Vec<Vector>,
    pub prior: Vector,
    /// Aggregation weight of each cluster.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Vector,
    pub probs: Vector,
    pub labeling: ProxyLabeling,
    /// Cluster of each instance, in the bag's own order.
    pub assignments: Vec<usize>,
    /// Distance of each re-embedded instance to the prior proxy, bag order.
    pub prior_distances: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub pooled: Vector,
    /// Whether the loss carries the `d_min − d_max` term.
    pub regularized: bool,
    pub(crate) pins: Pins,
    pub(crate) cache: Cache,
}

impl ForwardTrace {
    pub fn pins(&self) -> &Pins {
        &self.pins
    }

    pub fn prediction(&self) -> usize {
        crate::metrics::argmax(self.probs.iter().copied())
    }

    /// Role of every instance, in the bag's own order.
    pub fn instance_roles(&self) -> Vec<Role> {
        self.assignments.iter().map(|&a| self.labeling.role_of[a]).collect()
    }
}

/// Row indices sorted lexicographically by row contents (stable on ties).
pub fn canonical_order(m: &Matrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| {
        m.row(a)
            .iter()
            .zip(m.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}

fn reorder(m: &Matrix, order: &[usize]) -> Matrix {
    Matrix::from_fn(order.len(), m.ncols(), |i, j| m[(order[i], j)])
}

pub fn softmax(logits: &Vector) -> Vector {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// `−log softmax(logits)[label]`, computed with log-sum-exp.
pub fn cross_entropy(logits: &Vector, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::contract(format!("label {label} outside {} classes", logits.len())));
    }
    let max = logits.max();
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Cross-entropy plus `d_min − d_max` when the trace is regularized.
pub fn loss(trace: &ForwardTrace, label: usize) -> Result<f64> {
    let ce = cross_entropy(&trace.logits, label)?;
    Ok(if trace.regularized { ce + trace.d_min - trace.d_max } else { ce })
}

pub(crate) fn metric_distance(kind: MetricKind, w: &MetricWeights, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        MetricKind::Adaptive => Adaptive(w).distance(x, y),
        MetricKind::L2 => Euclidean.distance(x, y),
        MetricKind::L1 => Manhattan.distance(x, y),
    }
}

fn embedding_transform(x: &Matrix, xp: &Matrix, cfg: &TrainConfig) -> Result<Matrix> {
    let n = x.ncols();
    match cfg.ablation.embedding {
        Embedding::None => Ok(Matrix::identity(n, n)),
        Embedding::Pca => Ok(pca_subspace(x, cfg.subspace_dim)?.projector()),
        Embedding::Grassmann => {
            let source = pca_subspace(xp, cfg.subspace_dim)?;
            let target = pca_subspace(x, cfg.subspace_dim)?;
            let g = gsvd_pair(&source, target.basis())?;
            Ok(gfk_kernel(&g, &source)?.sqrt_g)
        }
    }
}

fn cluster(z: &Matrix, params: &ModelParams, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let kcfg = cfg.kmeans();
    let result = match cfg.ablation.metric {
        MetricKind::Adaptive => weighted_kmeans(z, &params.metric, &kcfg)?,
        MetricKind::L2 => lp_kmeans(z, LpNorm::L2, &kcfg)?,
        MetricKind::L1 => lp_kmeans(z, LpNorm::L1, &kcfg)?,
    };
    if !result.converged {
        log::debug!("k-means stopped after {} iterations without converging", result.iterations);
    }
    Ok(result.assignments)
}

/// Full forward pass over one bag. Errors carry the bag id.
pub fn forward(params: &ModelParams, bag: &Bag, cfg: &TrainConfig) -> Result<ForwardTrace> {
    run(params, bag, cfg, None).map_err(|e| e.in_bag(&bag.id))
}

/// Forward pass with the transform, assignments, and roles taken from `pins`.
pub fn forward_pinned(params: &ModelParams, bag: &Bag, cfg: &TrainConfig, pins: &Pins) -> Result<ForwardTrace> {
    run(params, bag, cfg, Some(pins)).map_err(|e| e.in_bag(&bag.id))
}

fn run(params: &ModelParams, bag: &Bag, cfg: &TrainConfig, pins: Option<&Pins>) -> Result<ForwardTrace> {
    let n_inst = bag.instances.nrows();
    let k = cfg.k;
    if n_inst < k {
        return Err(Error::contract(format!("{n_inst} instances cannot form {k} clusters")));
    }
    if bag.pkis.nrows() == 0 {
        return Err(Error::MissingPrior);
    }
    let order = canonical_order(&bag.instances);
    let raw = reorder(&bag.instances, &order);
    let raw_pki = reorder(&bag.pkis, &canonical_order(&bag.pkis));
    let x = params.encoder.encode(&raw)?;
    let xp = params.encoder.encode(&raw_pki)?;
    let n = x.ncols();

    let transform = match pins {
        Some(p) => {
            if p.transform.shape() != (n, n) || p.assignments.len() != n_inst {
                return Err(Error::contract("pins do not match this bag and model"));
            }
            p.transform.clone()
        }
        None => embedding_transform(&x, &xp, cfg)?,
    };
    let z = &x * &transform;
    let zp = &xp * &transform;

    let assignments = match pins {
        Some(p) => p.assignments.clone(),
        None => cluster(&z, params, cfg)?,
    };
    let mut sizes = vec![0usize; k];
    let mut sums = vec![Vector::zeros(n); k];
    for (i, &a) in assignments.iter().enumerate() {
        if a >= k {
            return Err(Error::contract(format!("cluster id {a} outside 0..{k}")));
        }
        sizes[a] += 1;
        sums[a] += z.row(i).transpose();
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(c));
    }
    let proxies: Vec<Vector> = sums.into_iter().zip(&sizes).map(|(s, &c)| s / c as f64).collect();
    let prior = column_mean(&zp);

    let kind = cfg.ablation.metric;
    let dist = |a: &[f64], b: &[f64]| metric_distance(kind, &params.metric, a, b);
    let distances: Vec<f64> = proxies.iter().map(|p| dist(p.as_slice(), prior.as_slice())).collect();
    let labeling = match pins {
        Some(p) => {
            if p.tumor >= k || p.background >= k || (p.tumor == p.background) {
                return Err(Error::contract("pinned roles are invalid"));
            }
            label_pinned(&distances, p.tumor, p.background, p.degenerate)
        }
        None => label_from_distances(&distances)?,
    };

    let regularized = cfg.ablation.aggregation == Aggregation::Proxy;
    let weights = if regularized { labeling.norm_weights.clone() } else { vec![1.0; k] };
    let pooled = aggregate_weighted(&z, &assignments, &weights, &zp)?.mean_pool();
    let logits = params.classifier.logits(&pooled);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax(&logits);

    let mut bag_assignments = vec![0; n_inst];
    let mut prior_distances = vec![0.0; n_inst];
    for (c, &orig) in order.iter().enumerate() {
        bag_assignments[orig] = assignments[c];
        let row: Vec<f64> = z.row(c).iter().copied().collect();
        prior_distances[orig] = dist(&row, prior.as_slice());
    }

    Ok(ForwardTrace {
        logits,
        probs,
        d_min: labeling.d_min,
        d_max: labeling.d_max,
        pins: Pins {
            transform,
            assignments,
            tumor: labeling.tumor,
            background: labeling.background,
            degenerate: labeling.degenerate,
        },
        labeling,
        assignments: bag_assignments,
        prior_distances,
        pooled,
        regularized,
        cache: Cache {
            raw,
            raw_pki,
            x,
            xp,
            z,
            sizes,
            proxies,
            prior,
            weights,
        },
    })
}
