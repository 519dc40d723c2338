//! Facial emotion recognition pipeline: a minimal f32 tensor engine with
//! exact backward passes, the SE/residual classification network, a
//! class-rebalancing augmentation planner with a pluggable image generator,
//! an SGD training loop with plateau scheduling and early stopping, and
//! confusion-matrix evaluation reports.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Parameter, Scalar, Tensor, TensorBase};
