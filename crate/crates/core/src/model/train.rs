use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, adjusted_rand_index, auc, confusion, eta_squared, EvalReport};
use crate::numerics::Matrix;

use super::backward::backward;
use super::config::TrainConfig;
use super::forward::{forward, loss, ForwardTrace};
use super::optim::RmsProp;
use super::params::{Gradients, ModelParams};

/// One row of the training history. `acc` and `auc` are validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub acc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (earliest on ties).
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,loss,acc,auc\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.lr, r.loss, r.acc, r.auc));
    }
    out
}

fn check_compatible(params: &ModelParams, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    if ds.raw_dim() != params.raw_dim() || ds.classes != params.classes() {
        return Err(Error::contract(format!(
            "model expects raw dim {} and {} classes, dataset has {} and {}",
            params.raw_dim(),
            params.classes(),
            ds.raw_dim(),
            ds.classes
        )));
    }
    Ok(())
}

/// Forward pass over every bag, in dataset order. Bags run in parallel.
pub fn predict(params: &ModelParams, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<ForwardTrace>> {
    check_compatible(params, ds)?;
    ds.bags.par_iter().map(|bag| forward(params, bag, cfg)).collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub traces: Vec<ForwardTrace>,
    /// Bags × classes.
    pub probs: Matrix,
    pub predictions: Vec<usize>,
    pub report: EvalReport,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn evaluate(params: &ModelParams, ds: &Dataset, cfg: &TrainConfig) -> Result<Evaluation> {
    let traces = predict(params, ds, cfg)?;
    let labels = ds.labels();
    let predictions: Vec<usize> = traces.iter().map(ForwardTrace::prediction).collect();
    let probs = Matrix::from_fn(traces.len(), ds.classes, |i, j| traces[i].probs[j]);

    let mut role_acc = Vec::new();
    let mut role_ari = Vec::new();
    let mut eta = Vec::new();
    for (bag, t) in ds.bags.iter().zip(&traces) {
        let roles = t.instance_roles();
        let groups: Vec<usize> = roles.iter().map(|r| r.index()).collect();
        if groups.iter().any(|&g| g != groups[0]) {
            eta.push(eta_squared(&t.prior_distances, &groups)?);
        }
        if let Some(truth) = &bag.true_roles {
            let hits = roles.iter().zip(truth).filter(|(a, b)| a == b).count();
            role_acc.push(hits as f64 / truth.len() as f64);
            let truth_idx: Vec<usize> = truth.iter().map(|r| r.index()).collect();
            role_ari.push(adjusted_rand_index(&t.assignments, &truth_idx)?);
        }
    }

    let report = EvalReport {
        accuracy: accuracy(&predictions, &labels)?,
        auc_macro_ovr: auc(&probs, &labels)?,
        confusion: confusion(&predictions, &labels, ds.classes)?,
        role_accuracy: mean(&role_acc),
        role_ari: mean(&role_ari),
        eta_squared: mean(&eta),
    };
    Ok(Evaluation {
        traces,
        probs,
        predictions,
        report,
    })
}

/// Stratified split by `cfg.train_fraction`, then [`train_split`].
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    dataset.validate()?;
    let (tr, val) = split(dataset, cfg.train_fraction, cfg.seed)?;
    train_split(&tr, &val, cfg)
}

pub fn train_split(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    if val.bags.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let params = ModelParams::init(train.raw_dim(), cfg.feature_dim, train.classes, cfg.seed)?;
    train_from(params, train, val, cfg)
}

/// Trains starting from `params`.
pub fn train_from(mut params: ModelParams, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(&params, train)?;
    check_compatible(&params, val)?;
    let mut opt = RmsProp::new(&params, cfg.rmsprop);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.bags.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_schedule.rate_at(epoch)?;
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            for &i in batch {
                let bag = &train.bags[i];
                let trace = forward(&params, bag, cfg)?;
                let l = loss(&trace, bag.label)?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("loss of bag {} in epoch {epoch}", bag.id)));
                }
                total_loss += l;
                grads.add_assign(&backward(&params, &trace, bag.label, cfg).map_err(|e| e.in_bag(&bag.id))?);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &grads, lr)?;
        }
        let report = evaluate(&params, val, cfg)?.report;
        let record = EpochRecord {
            epoch,
            lr,
            loss: total_loss / train.bags.len() as f64,
            acc: report.accuracy,
            auc: report.auc_macro_ovr,
        };
        log::info!(
            "epoch {epoch:>3}  lr {lr:.1e}  loss {:.4}  val acc {:.4}  val auc {:.4}",
            record.loss,
            record.acc,
            record.auc
        );
        if best.as_ref().is_none_or(|(_, acc, _)| record.acc > *acc) {
            best = Some((epoch, record.acc, params.clone()));
        }
        history.push(record);
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        final_params: params,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::model::config::LrSchedule;

    fn small() -> Dataset {
        gen_synthetic(&SynthConfig {
            bags_per_class: 5,
            instances_per_bag: 24,
            pki_per_bag: 6,
            raw_dim: 10,
            latent_dim: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(epochs: usize, schedule: LrSchedule) -> TrainConfig {
        TrainConfig {
            feature_dim: 8,
            subspace_dim: 3,
            epochs,
            lr_schedule: schedule,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rate_leaves_params_at_init() {
        let ds = small();
        let c = cfg(1, LrSchedule::constant(0.0, 1));
        let out = train(&ds, &c).unwrap();
        assert_eq!(out.history.len(), 1);
        let init = ModelParams::init(10, 8, 3, 0).unwrap();
        assert_eq!(out.final_params, init);
        assert_eq!(out.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small();
        let c = cfg(3, LrSchedule::desk(3));
        let a = train(&ds, &c).unwrap();
        let b = train(&ds, &c).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.final_params, b.final_params);
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
        assert!(a.final_params.metric.is_normalized());
    }

    #[test]
    fn best_epoch_has_max_accuracy_earliest() {
        let ds = small();
        let out = train(&ds, &cfg(4, LrSchedule::desk(4))).unwrap();
        let max = out.history.iter().map(|r| r.acc).fold(f64::MIN, f64::max);
        let first = out.history.iter().position(|r| r.acc == max).unwrap() + 1;
        assert_eq!(out.best_epoch, first);
        assert_eq!(out.best().acc, max);
    }

    #[test]
    fn evaluation_reports_roles() {
        let ds = small();
        let params = ModelParams::init(10, 8, 3, 0).unwrap();
        let ev = evaluate(&params, &ds, &cfg(1, LrSchedule::desk(1))).unwrap();
        assert_eq!(ev.predictions.len(), ds.bags.len());
        let r = ev.report;
        assert!(r.role_accuracy.is_some() && r.role_ari.is_some() && r.eta_squared.is_some());
        let rows: usize = r.confusion.iter().flatten().sum();
        assert_eq!(rows, ds.bags.len());
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ds = small();
        let params = ModelParams::init(11, 8, 3, 0).unwrap();
        assert!(evaluate(&params, &ds, &TrainConfig::default()).is_err());
    }
}
