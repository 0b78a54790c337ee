//! Dense `f64` tensors with reverse-mode differentiation, plus the optimizer,
//! schedule, initializer and checkpoint format used to train the network.

mod check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, relative_error};
pub use optim::{
    one_cycle_lr, xavier_uniform, Adam, AdamConfig, ONE_CYCLE_FINAL_DIV, ONE_CYCLE_PEAK_AT,
    ONE_CYCLE_WARMUP_DIV,
};
pub use params::ParamStore;
pub use tape::{Grads, Tape, Var, BCE_CLAMP};
pub use tensor::{SparseMatrix, Tensor};
