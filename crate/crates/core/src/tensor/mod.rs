//! Dense tensors, tape-based reverse-mode differentiation, Adam and gradient
//! utilities.

mod dense;
mod gradcheck;
mod optim;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_STEP};
pub use optim::{clip_gradients, grad_norm, AdamConfig, AdamState};
pub use tape::{Gradients, Pointwise, Tape, Var, COSINE_EPS};
