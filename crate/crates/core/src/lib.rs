//! Temporal image classification with difference images and cross-modal CNNs.
//!
//! The crate covers the whole path from raw slice series to trained models:
//!
//! * [`tensor`], [`rng`], [`scalar`]: dense tensors generic over `f32`/`f64`.
//! * [`nn`]: layers with hand-written backward passes, loss, SGD, gradient checks.
//! * [`model`]: the six CNN / X-CNN architectures, parameter counts, checkpoints.
//! * [`prep`]: expansion, registration, differencing, pairing, partitioning.
//! * [`phantom`]: synthetic bone-like slice series and the on-disk dataset format.
//! * [`train`]: batching, training, evaluation and model comparison.

pub mod error;
pub mod imageio;
pub mod kv;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod prep;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
