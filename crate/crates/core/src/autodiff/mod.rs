//! Dense tensors and a reverse-mode tape.
//!
//! Build a computation by recording operations on a [`Tape`]; leaves are
//! either trainable ([`Tape::param`]) or constant ([`Tape::constant`]).
//! [`Tape::backward`] returns gradients for trainable leaves only, so frozen
//! parameters are simply recorded as constants.

pub(crate) mod checkpoint;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, MAX_CHECKED_COORDS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax;
