//! Dense tensors, reverse-mode autodiff, Adam and the learning-rate schedule.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport, FULL_CHECK_LIMIT};
pub use optim::{clip_grad_norm, lr_schedule, AdamConfig, AdamState};
pub use params::{ParamGrads, ParamId, ParamStore, Session};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, MASK_VALUE};
pub use tensor::Tensor;
