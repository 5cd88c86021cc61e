use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::KMeansConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedding {
    None,
    /// Orthogonal projection onto the bag's own principal subspace.
    Pca,
    Grassmann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    L1,
    L2,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Every instance weighted 1 and no clustering regularizer.
    Uniform,
    Proxy,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}' (expected one of: {})",
                        stringify!($ty).to_ascii_lowercase(),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(Embedding { None => "none", Pca => "pca", Grassmann => "grassmann" });
string_enum!(MetricKind { L1 => "l1", L2 => "l2", Adaptive => "adaptive" });
string_enum!(Aggregation { Uniform => "uniform", Proxy => "proxy" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub embedding: Embedding,
    pub metric: MetricKind,
    pub aggregation: Aggregation,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        embedding: Embedding::Grassmann,
        metric: MetricKind::Adaptive,
        aggregation: Aggregation::Proxy,
    };

    pub const BASELINE: Ablation = Ablation {
        embedding: Embedding::None,
        metric: MetricKind::L2,
        aggregation: Aggregation::Uniform,
    };

    /// The six ablation cells, baseline first and the full model last.
    pub fn cells() -> [(&'static str, Ablation); 6] {
        let with = |embedding, metric| Ablation {
            embedding,
            metric,
            aggregation: Aggregation::Proxy,
        };
        [
            ("baseline", Self::BASELINE),
            ("l1-kmeans", with(Embedding::None, MetricKind::L1)),
            ("l2-kmeans", with(Embedding::None, MetricKind::L2)),
            ("adaptive-kmeans", with(Embedding::None, MetricKind::Adaptive)),
            ("pca-adaptive", with(Embedding::Pca, MetricKind::Adaptive)),
            ("grassmann-adaptive", Self::FULL),
        ]
    }

    pub fn cell(name: &str) -> Result<Ablation> {
        Self::cells()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::cells().iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown cell '{name}' (expected one of: {})", names.join(", ")))
            })
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

/// Rate for the inclusive 1-based epoch range `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrRange {
    pub first: usize,
    pub last: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub ranges: Vec<LrRange>,
}

impl LrSchedule {
    /// 1e-5 for epochs 1-50, 5e-6 for 51-75, 1e-6 for 76-100.
    pub fn standard() -> Self {
        Self {
            ranges: vec![
                LrRange { first: 1, last: 50, rate: 1e-5 },
                LrRange { first: 51, last: 75, rate: 5e-6 },
                LrRange { first: 76, last: 100, rate: 1e-6 },
            ],
        }
    }

    /// Same shape as [`LrSchedule::standard`] with rates scaled by 1000 and the
    /// breakpoints stretched to `epochs`, for runs of a few dozen epochs.
    pub fn desk(epochs: usize) -> Self {
        let epochs = epochs.max(1);
        let first_cut = (epochs / 2).max(1);
        let second_cut = (epochs * 3 / 4).max(first_cut);
        let mut ranges = vec![LrRange { first: 1, last: first_cut, rate: 1e-2 }];
        if second_cut > first_cut {
            ranges.push(LrRange { first: first_cut + 1, last: second_cut, rate: 5e-3 });
        }
        if epochs > second_cut {
            ranges.push(LrRange { first: second_cut + 1, last: epochs, rate: 1e-3 });
        }
        Self { ranges }
    }

    pub fn constant(rate: f64, epochs: usize) -> Self {
        Self {
            ranges: vec![LrRange { first: 1, last: epochs.max(1), rate }],
        }
    }

    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        self.ranges
            .iter()
            .find(|r| r.first <= epoch && epoch <= r.last)
            .map(|r| r.rate)
            .ok_or_else(|| Error::contract(format!("no learning rate covers epoch {epoch}")))
    }

    /// Every epoch in `1..=epochs` is covered exactly once and rates are finite and nonnegative.
    pub fn validate(&self, epochs: usize) -> Result<()> {
        for e in 1..=epochs {
            let n = self.ranges.iter().filter(|r| r.first <= e && e <= r.last).count();
            if n != 1 {
                return Err(Error::Config(format!("epoch {e} is covered by {n} schedule ranges")));
            }
        }
        if let Some(r) = self.ranges.iter().find(|r| !(r.rate >= 0.0 && r.rate.is_finite())) {
            return Err(Error::Config(format!("invalid learning rate {}", r.rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Encoder output dimension.
    pub feature_dim: usize,
    pub subspace_dim: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub lr_schedule: LrSchedule,
    pub rmsprop: RmsPropConfig,
    pub ablation: Ablation,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            subspace_dim: 4,
            k: 3,
            epochs: 100,
            batch_size: 2,
            seed: 0,
            train_fraction: 0.6,
            lr_schedule: LrSchedule::standard(),
            rmsprop: RmsPropConfig::default(),
            ablation: Ablation::FULL,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.ablation.embedding != Embedding::None
            && (self.subspace_dim == 0 || 2 * self.subspace_dim > self.feature_dim)
        {
            return bad(format!(
                "subspace_dim {} must satisfy 1 <= d <= feature_dim/2 ({})",
                self.subspace_dim, self.feature_dim
            ));
        }
        if self.k < 2 {
            return bad("k must be at least 2".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        let rp = self.rmsprop;
        if !(rp.decay > 0.0 && rp.decay < 1.0) || !(rp.epsilon > 0.0) {
            return bad("rmsprop decay must lie in (0, 1) and epsilon be positive".into());
        }
        if self.kmeans_max_iter == 0 || !(self.kmeans_tol >= 0.0) {
            return bad("kmeans_max_iter must be positive and kmeans_tol nonnegative".into());
        }
        self.lr_schedule.validate(self.epochs)
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            seed: self.seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
