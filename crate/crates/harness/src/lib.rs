//! Desk-scale harness: a small differentiable reaching policy, its training
//! loop, calibration set generation, closed-loop evaluation and the ablation
//! ladder used to compare quantization configurations.

pub mod ablation;
pub mod calib;
pub mod checkpoint;
pub mod lossmodel;
pub mod policy;
pub mod quantize;
pub mod tape;
pub mod task;
pub mod train;

use aq_core::allocator::AllocError;
use aq_core::calibfile::CalibError;
use aq_core::fisher::FisherError;
use aq_core::naming::NameError;
use aq_core::quantcore::QuantError;
use aq_core::scaleopt::ScaleOptError;
use aq_core::sensitivity::SensitivityError;

pub use ablation::{ablation_ladder, ablation_over_seeds, ladder_models, AblationConfig, AblationTable, RungResult};
pub use calib::gen_calibration;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use policy::{Activation, PolicyArch, ToyPolicy};
pub use quantize::{quantize_full, QuantizeConfig, QuantizedModel};
pub use task::{rollout_success, Controller, ReachTask};
pub use train::{train_policy, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("non-finite parameter {0}")]
    NonFinite(String),
    #[error("calibration needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{0} is not a quantization candidate")]
    NotCandidate(String),
    #[error("no gradients recorded for tensor {0}")]
    MissingGradients(String),
    #[error("training diverged at step {step}; loss trace {trace:?}")]
    Divergence { step: usize, trace: Vec<(usize, f64)> },
    #[error("autodiff: {0}")]
    Tape(#[from] tape::TapeError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Name(#[from] NameError),
    #[error("quantization: {0}")]
    Quant(#[from] QuantError),
    #[error("calibration file: {0}")]
    Calib(#[from] CalibError),
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensitivityError),
    #[error("allocation: {0}")]
    Alloc(#[from] AllocError),
    #[error("scale search: {0}")]
    ScaleOpt(#[from] ScaleOptError),
    #[error("fisher: {0}")]
    Fisher(#[from] FisherError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
