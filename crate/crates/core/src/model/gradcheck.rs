//! Central finite differences against [`backward`], with the transform,
//! assignments, and roles pinned from one forward pass.

use serde::Serialize;

use crate::data::Bag;
use crate::error::Result;

use super::backward::backward;
use super::config::TrainConfig;
use super::forward::{forward, forward_pinned, loss, Pins};
use super::params::{Gradients, ModelParams, ParamGroup, TENSORS};

pub const FD_STEP: f64 = 1e-4;
pub const MAX_REL_ERROR: f64 = 1e-3;
/// Denominator floor so entries that are zero on both sides do not divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstEntry {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub group: &'static str,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstEntry>,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= MAX_REL_ERROR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub bag: String,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupCheck::passed)
    }
}

fn pinned_loss(params: &ModelParams, bag: &Bag, cfg: &TrainConfig, pins: &Pins) -> Result<f64> {
    loss(&forward_pinned(params, bag, cfg, pins)?, bag.label)
}

/// Finite-difference gradient for the tensors of `groups`; other tensors stay zero.
pub fn numeric_gradient(params: &ModelParams, bag: &Bag, cfg: &TrainConfig, pins: &Pins, groups: &[ParamGroup]) -> Result<Gradients> {
    let mut out = Gradients::zeros_like(params);
    let mut probe = params.clone();
    for (t, (_, group)) in TENSORS.iter().enumerate() {
        if !groups.contains(group) {
            continue;
        }
        let len = out.tensors()[t].1.len();
        for i in 0..len {
            let orig = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = orig + FD_STEP;
            let plus = pinned_loss(&probe, bag, cfg, pins)?;
            probe.tensors_mut()[t].1[i] = orig - FD_STEP;
            let minus = pinned_loss(&probe, bag, cfg, pins)?;
            probe.tensors_mut()[t].1[i] = orig;
            out.tensors_mut()[t].1[i] = (plus - minus) / (2.0 * FD_STEP);
        }
    }
    Ok(out)
}

/// Compares analytic and numeric gradients group by group.
///
/// `corrupt` is a negative-control hook: when set, the largest analytic entry
/// of every checked tensor is shifted by that fraction of its magnitude
/// (at least `corrupt · 1e-3`) before the comparison.
pub fn check_gradients(
    params: &ModelParams,
    bag: &Bag,
    cfg: &TrainConfig,
    groups: &[ParamGroup],
    corrupt: Option<f64>,
) -> Result<GradCheckReport> {
    let trace = forward(params, bag, cfg)?;
    let mut analytic = backward(params, &trace, bag.label, cfg)?;
    if let Some(c) = corrupt {
        for (t, (_, group)) in TENSORS.iter().enumerate() {
            if !groups.contains(group) {
                continue;
            }
            let values = analytic.tensors_mut().into_iter().nth(t).expect("tensor index").1;
            let (i, max) = values
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            values[i] += c * max.max(1e-3);
        }
    }
    let numeric = numeric_gradient(params, bag, cfg, trace.pins(), groups)?;

    let mut checks = Vec::new();
    for group in ParamGroup::ALL.into_iter().filter(|g| groups.contains(g)) {
        let mut check = GroupCheck {
            group: group.as_str(),
            entries: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for (t, (name, g)) in TENSORS.iter().enumerate() {
            if *g != group {
                continue;
            }
            let a = analytic.tensors()[t].1;
            let n = numeric.tensors()[t].1;
            check.entries += a.len();
            for i in 0..a.len() {
                let e = relative_error(a[i], n[i]);
                if e > check.max_rel_error || check.worst.is_none() {
                    check.max_rel_error = check.max_rel_error.max(e);
                    check.worst = Some(WorstEntry {
                        tensor: name,
                        index: i,
                        analytic: a[i],
                        numeric: n[i],
                    });
                }
            }
        }
        checks.push(check);
    }
    Ok(GradCheckReport {
        bag: bag.id.clone(),
        groups: checks,
    })
}
