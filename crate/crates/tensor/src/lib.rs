//! Tensor algebra with reverse-mode differentiation, sized for small
//! convolutional GANs trained on a CPU.
//!
//! [`Tensor`] holds values; a [`Tape`] records operations on [`Var`] handles
//! and differentiates a scalar loss back to its parameter leaves. The
//! [`ops`] module exposes the same kernels without recording.

pub mod adam;
pub mod error;
pub mod float;
pub mod gradcheck;
mod kernels;
pub mod ops;
pub mod prng;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use float::Float;
pub use gradcheck::{finite_diff_check, finite_diff_check_with, Coordinates, GradCheckReport};
pub use ops::{Activation, BatchStats, NormMode, RunningStats};
pub use prng::Prng;
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
