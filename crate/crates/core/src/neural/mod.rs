//! Hand-written numerical engine for the probes: a fixed three-layer MLP,
//! Adam, the training loop, F1 scoring and OLS.

pub mod adam;
pub mod checkpoint;
pub mod metrics;
pub mod mlp;
pub mod ols;
pub mod train;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError};
pub use metrics::{macro_f1, multiclass_f1, ClassScores, Metrics, MetricsError, MulticlassMetrics};
pub use mlp::{Float, Mlp};
pub use ols::{ols_fit, OlsError, OlsFit};
pub use train::{
    predict_proba, train_binary_probe, ProbeInputs, Tokens, TrainConfig, TrainError, TrainedProbe, LR_GRID,
};
