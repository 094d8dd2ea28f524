//! Dense row-major tensors and a reverse-mode tape.
//!
//! Every operation the rating model needs is recorded on a [`Tape`] as it
//! executes; [`Tape::backward`] then replays the record in reverse and
//! accumulates gradients for every node that contributed to the loss.
//! [`gradcheck`] holds the central-difference oracle used to verify the
//! analytic gradients.

mod error;
pub mod gradcheck;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, grad_check, CoordSelection};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
