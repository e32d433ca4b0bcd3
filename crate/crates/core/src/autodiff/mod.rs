//! Dense reverse-mode autodiff: tensors, the tape, AdamW, and a
//! finite-difference gradient oracle.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, gradient_report, DEFAULT_STEP};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{Axis, BnStats, ElementwiseKind, Mode, Tape, Var};
pub use tensor::Tensor;
