//! Dense-network substrate: matrices, parameter storage, layers with explicit
//! backward passes, AdamW, schedules and a finite-difference gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    dropout_mask, sigmoid, softplus, tanh, Activation, BatchNorm, BatchNormCache, Dense,
    Embedding, Init,
};
pub use matrix::Matrix;
pub use mlp::{Mlp, MlpCache};
pub use optim::{cosine_lr, AdamW, ScheduleState};
pub use params::{Param, ParamId, ParamSet};
