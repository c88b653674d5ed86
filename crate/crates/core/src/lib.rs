//! Kronecker single-pixel imaging and unrolled proximal reconstruction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensorgrad`]: dense tensors with a define-by-run reverse-mode tape.
//! * [`sensing`]: separable measurement operators `Y = H X Wᵀ + E`.
//! * [`proximal`]: closed-form data proximal step, HQS/ADMM iterations and the
//!   ground-truth-conditioned teacher trajectory.
//! * [`restorers`]: plug-in denoisers (identity, TV, DCT shrinkage, learned).
//! * [`dir`]: the CNN-Transformer image restorer.
//! * [`training`]: trajectory-supervised training, metrics and evaluation.
//!
//! All numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below name the two concrete precisions.

pub mod diagnostics;
pub mod dir;
pub mod error;
pub mod imageio;
pub mod linalg;
pub mod metrics;
pub mod proximal;
pub mod restorers;
pub mod scalar;
pub mod sensing;
pub mod tensorgrad;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;
pub use tensorgrad::{Graph, Tensor, Var};

/// Images are dense row-major matrices of pixel intensities.
pub type Image<T> = Matrix<T>;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Operator32 = sensing::MeasurementOperator<f32>;
pub type Operator64 = sensing::MeasurementOperator<f64>;
