//! Mixed-precision block weight quantization.
//!
//! Scores every weight matrix by how much action-relevant information its
//! output carries, allocates bit-widths across matrices under a bits-per-weight
//! budget, optimizes per-block scales with Fisher-derived importance, and
//! serializes the result to a compact pack file.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); file and report
//! boundaries use `f64`.

pub mod allocator;
pub mod calibfile;
pub mod container;
pub mod fisher;
pub mod hsic;
pub mod matrix;
pub mod naming;
pub mod quantcore;
pub mod scalar;
pub mod scaleopt;
pub mod sensitivity;

pub use allocator::{AllocationInstance, Assignment, OverheadModel};
pub use calibfile::CalibrationSet;
pub use container::PackFile;
pub use fisher::{FisherDiagonal, GradientSample};
pub use hsic::KernelSpec;
pub use matrix::Matrix;
pub use naming::{ModuleTag, TensorId};
pub use quantcore::{Codebook, QuantType, QuantizedTensor};
pub use scalar::Real;
pub use scaleopt::{ImportanceMode, ScaleOptConfig};
pub use sensitivity::{SensitivityConfig, SensitivityTable};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type FisherDiagonal64 = FisherDiagonal<f64>;
pub type FisherDiagonal32 = FisherDiagonal<f32>;
pub type GradientSample64 = GradientSample<f64>;
pub type GradientSample32 = GradientSample<f32>;
pub type BlockResult64 = scaleopt::BlockResult<f64>;
pub type BlockResult32 = scaleopt::BlockResult<f32>;
