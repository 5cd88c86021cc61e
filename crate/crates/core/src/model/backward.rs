//! Reverse-mode gradient of the loss for one bag.
//!
//! Treated as constants: the re-embedding matrix, the cluster assignments,
//! and the TI/BGI choice. Everything else (encoder, cluster means, distances,
//! min-max weights, pooling, classifier, cross-entropy, and the `d_min − d_max`
//! term) is differentiated exactly.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

use super::config::{MetricKind, TrainConfig};
use super::forward::ForwardTrace;
use super::params::{Gradients, ModelParams};

/// `(∂d/∂x, ∂d/∂w)` for `d = dist(x, y)`; `∂d/∂y = −∂d/∂x`.
fn distance_grad(kind: MetricKind, w: &[f64], x: &Vector, y: &Vector, d: f64) -> (Vector, Vector) {
    let delta = x - y;
    let n = delta.len();
    match kind {
        MetricKind::Adaptive if d > 0.0 => (
            Vector::from_fn(n, |j, _| w[j] * delta[j] / d),
            Vector::from_fn(n, |j, _| delta[j] * delta[j] / (2.0 * d)),
        ),
        MetricKind::L2 if d > 0.0 => (&delta / d, Vector::zeros(n)),
        MetricKind::L1 => (
            delta.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
            Vector::zeros(n),
        ),
        _ => (Vector::zeros(n), Vector::zeros(n)),
    }
}

fn tanh_backward(g: &Matrix, x: &Matrix) -> Matrix {
    g.zip_map(x, |g, x| g * (1.0 - x * x))
}

pub fn backward(params: &ModelParams, trace: &ForwardTrace, label: usize, cfg: &TrainConfig) -> Result<Gradients> {
    let classes = params.classes();
    if label >= classes {
        return Err(Error::contract(format!("label {label} outside {classes} classes")));
    }
    let c = &trace.cache;
    let lab = &trace.labeling;
    let k = c.sizes.len();
    let n_bag = c.z.nrows();
    let n_pki = c.xp.nrows();
    let total = (n_bag + n_pki) as f64;
    let mut grads = Gradients::zeros_like(params);

    let mut g_logits = trace.probs.clone();
    g_logits[label] -= 1.0;
    grads.classifier_weight = &g_logits * trace.pooled.transpose();
    grads.classifier_bias = g_logits.clone();
    let g_pooled = params.classifier.weight.transpose() * &g_logits;

    // loss sensitivity to each proxy-to-prior distance
    let mut g_dist = vec![0.0; k];
    if trace.regularized {
        let (t, b) = (lab.tumor, lab.background);
        g_dist[t] += 1.0;
        g_dist[b] -= 1.0;
        if !lab.degenerate {
            let d = &lab.raw_distances;
            let spread = d[b] - d[t];
            for j in (0..k).filter(|&j| j != t && j != b) {
                let g_u = c.sizes[j] as f64 / total * g_pooled.dot(&c.proxies[j]);
                g_dist[j] -= g_u / spread;
                g_dist[t] += g_u * (d[b] - d[j]) / (spread * spread);
                g_dist[b] += g_u * (d[j] - d[t]) / (spread * spread);
            }
        }
    }

    let n = g_pooled.len();
    let w = params.metric.as_slice();
    let mut g_proxy = vec![Vector::zeros(n); k];
    let mut g_prior = Vector::zeros(n);
    for j in 0..k {
        if g_dist[j] == 0.0 {
            continue;
        }
        let (dx, dw) = distance_grad(cfg.ablation.metric, w, &c.proxies[j], &c.prior, lab.raw_distances[j]);
        g_proxy[j] = &dx * g_dist[j];
        g_prior -= &dx * g_dist[j];
        if cfg.ablation.metric == MetricKind::Adaptive {
            grads.metric += dw * g_dist[j];
        }
    }

    let assignments = &trace.pins.assignments;
    let mut g_z = Matrix::zeros(n_bag, n);
    for (i, &a) in assignments.iter().enumerate() {
        let row = &g_pooled * (c.weights[a] / total) + &g_proxy[a] / c.sizes[a] as f64;
        g_z.set_row(i, &row.transpose());
    }
    let pki_row = (&g_pooled / total + &g_prior / n_pki as f64).transpose();
    let mut g_zp = Matrix::zeros(n_pki, n);
    for j in 0..n_pki {
        g_zp.set_row(j, &pki_row);
    }

    let tt = trace.pins.transform.transpose();
    let g_a = tanh_backward(&(g_z * &tt), &c.x);
    let g_ap = tanh_backward(&(g_zp * &tt), &c.xp);
    grads.encoder_weight = g_a.transpose() * &c.raw + g_ap.transpose() * &c.raw_pki;
    grads.encoder_bias = (g_a.row_sum() + g_ap.row_sum()).transpose();

    grads.ensure_finite()?;
    Ok(grads)
}
