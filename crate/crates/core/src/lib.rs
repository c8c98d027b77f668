//! Self-supervised cross-modal super-resolution of a low-resolution source
//! image guided by a misaligned high-resolution image of another modality.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffengine`]: a small reverse-mode differentiation tape with the
//!   convolution, sampling, filtering and loss operators the model needs.
//! * [`model`]: feature extraction, the deformation estimator and alignment
//!   layer, the content-aware reference filter and the prediction heads.
//! * [`optimize`]: per-pair online optimization with Adam and a step-decay
//!   learning rate.
//! * [`data`]: image I/O, degradation and synthetic misalignment.
//! * [`metrics`]: RMSE and PSNR.
//! * [`suite`]: the finite-difference gradient suite.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod data;
pub mod diffengine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod scalar;
pub mod suite;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = diffengine::Graph<f32>;
pub type Graph64 = diffengine::Graph<f64>;
pub type ModelState32 = model::ModelState<f32>;
pub type ModelState64 = model::ModelState<f64>;
pub type ImagePair32 = data::ImagePair<f32>;
pub type ImagePair64 = data::ImagePair<f64>;
