//! The end-to-end model: encoder, re-embedding, clustering, proxy
//! aggregation, and classifier, with its loss, gradients, optimizer, and
//! training loop.

pub mod backward;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod train;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Ablation, Aggregation, Embedding, LrRange, LrSchedule, MetricKind, RmsPropConfig, TrainConfig};
pub use forward::{cross_entropy, forward, forward_pinned, loss, softmax, ForwardTrace, Pins};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::RmsProp;
pub use params::{Classifier, Encoder, Gradients, ModelParams, ParamGroup};
pub use train::{evaluate, history_csv, predict, train, train_from, train_split, EpochRecord, Evaluation, TrainOutcome};
