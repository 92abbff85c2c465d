//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation whose inputs require gradients, in
//! creation order. [`Tape::backward`] walks the nodes in reverse and
//! accumulates the adjoint of a scalar loss into every leaf. The op set is
//! the one the navigation policy, the point-mass dynamics and the training
//! losses need, plus a few fused operators (integrator, norm clamps, approach
//! speed) whose Jacobians are written out in closed form.
//!
//! ```
//! use swarmnav::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```

mod gradcheck;
mod suite;
mod tape;
mod tensor;

pub use gradcheck::{fd_gradient, grad_check, GradCheckReport};
pub use suite::{op_gradcheck_suite, SUITE_EPS};
pub use tape::{decay_state_gradient, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("gradient decay factor must lie in (0, 1), got {0}")]
    DecayFactor(f64),
    #[error("non-finite value at {0}")]
    NonFinite(String),
}
