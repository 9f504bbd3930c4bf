//! Minimal dense-tensor numerics with tape-based reverse-mode autodiff.

pub mod gradcheck;
pub mod param;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use param::ParamStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
