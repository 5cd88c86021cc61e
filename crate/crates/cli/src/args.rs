use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use macnet::data::SynthConfig;
use macnet::model::{Ablation, Aggregation, Embedding, LrSchedule, MetricKind, ParamGroup, TrainConfig};
use macnet::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "macnet", version, about = "Train and evaluate manifold-clustering MIL models on bags of feature vectors")]
pub struct Cli {
    /// Log progress (per-epoch metrics) to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth instance roles.
    Gen(GenArgs),
    /// Train a model and write its best checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences on one bag.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate every ablation cell on the same data and seed.
    Ablate(AblateArgs),
}

/// JSON config file. Both sections are optional and may be partial.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

pub fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub bags_per_class: Option<usize>,
    #[arg(long)]
    pub instances_per_bag: Option<usize>,
    /// Prior knowledge instances per bag.
    #[arg(long)]
    pub pki: Option<usize>,
    #[arg(long)]
    pub raw_dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub curvature: Option<f64>,
    #[arg(long)]
    pub noise_dims: Option<usize>,
    #[arg(long)]
    pub noise_dim_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthFlags {
    pub fn apply(&self, mut cfg: SynthConfig) -> SynthConfig {
        macro_rules! set {
            ($($flag:ident => $field:ident),+ $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })+
            };
        }
        set!(
            classes => classes,
            bags_per_class => bags_per_class,
            instances_per_bag => instances_per_bag,
            pki => pki_per_bag,
            raw_dim => raw_dim,
            latent_dim => latent_dim,
            separation => class_separation,
            noise_sigma => noise_sigma,
            curvature => curvature,
            noise_dims => noise_dims,
            noise_dim_scale => noise_dim_scale,
            seed => seed,
        );
        cfg
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleKind {
    /// 1e-5 / 5e-6 / 1e-6 over epochs 1-50 / 51-75 / 76-100.
    Standard,
    /// 1e-2 / 5e-3 / 1e-3 over the first half / next quarter / last quarter.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Named ablation cell (baseline, l1-kmeans, l2-kmeans, adaptive-kmeans, pca-adaptive, grassmann-adaptive).
    #[arg(long)]
    pub cell: Option<String>,
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub aggregation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub subspace_dim: Option<usize>,
    /// Cluster count.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Constant learning rate for every epoch (overrides --schedule).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub rmsprop_decay: Option<f64>,
    #[arg(long)]
    pub rmsprop_epsilon: Option<f64>,
    #[arg(long)]
    pub kmeans_max_iter: Option<usize>,
    #[arg(long)]
    pub kmeans_tol: Option<f64>,
}

impl TrainFlags {
    pub fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),+ $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })+
            };
        }
        set!(
            epochs => epochs,
            batch_size => batch_size,
            seed => seed,
            feature_dim => feature_dim,
            subspace_dim => subspace_dim,
            k => k,
            train_fraction => train_fraction,
            rmsprop_decay => rmsprop.decay,
            rmsprop_epsilon => rmsprop.epsilon,
            kmeans_max_iter => kmeans_max_iter,
            kmeans_tol => kmeans_tol,
        );
        if let Some(cell) = &self.cell {
            cfg.ablation = Ablation::cell(cell)?;
        }
        if let Some(e) = &self.embedding {
            cfg.ablation.embedding = e.parse::<Embedding>()?;
        }
        if let Some(m) = &self.metric {
            cfg.ablation.metric = m.parse::<MetricKind>()?;
        }
        if let Some(a) = &self.aggregation {
            cfg.ablation.aggregation = a.parse::<Aggregation>()?;
        }
        match (self.lr, self.schedule) {
            (Some(rate), _) => cfg.lr_schedule = LrSchedule::constant(rate, cfg.epochs),
            (None, Some(ScheduleKind::Desk)) => cfg.lr_schedule = LrSchedule::desk(cfg.epochs),
            (None, Some(ScheduleKind::Standard)) => cfg.lr_schedule = LrSchedule::standard(),
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for the manifest and feature files.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file with optional "synth" and "train" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (or its directory).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json and history.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the metric, confusion, ROC, and role files.
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the checkpoint's train/validation split to evaluate.
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamScope {
    All,
    Encoder,
    Metric,
    Classifier,
}

impl ParamScope {
    pub fn groups(self) -> Vec<ParamGroup> {
        match self {
            ParamScope::All => ParamGroup::ALL.to_vec(),
            ParamScope::Encoder => vec![ParamGroup::Encoder],
            ParamScope::Metric => vec![ParamGroup::Metric],
            ParamScope::Classifier => vec![ParamGroup::Classifier],
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Dataset to draw the bag from; a default synthetic dataset when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parameters to check; a fresh initialization when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub param: ParamScope,
    /// Test hook: perturb the analytic gradient by this fraction before comparing.
    #[arg(long, hide = true)]
    pub corrupt: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}
