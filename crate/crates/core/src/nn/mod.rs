//! Dense tensors, a reverse-mode tape, parameter storage, and Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use params::{init_params, BoundParams, Init, ModelParams, ParamSpec};
pub use tape::{Gradients, Reduce, Tape, Var};
pub use tensor::Tensor;
