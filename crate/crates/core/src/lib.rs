//! Online continual learning with per-parameter gradient gating and
//! meta-learned, layer-wise stability coefficients.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem (configs, CSV reports, checkpoints) lives in `mango-cli`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod replay;
pub mod seed;
pub mod session;
pub mod streams;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use data::{Example, Task};
pub use error::{Error, Result};
pub use metrics::{AccuracyMatrix, MetricSet, Ratio};
pub use model::{Mlp, ModelConfig, ParameterGroup, ParameterStore};
pub use optim::{MangoConfig, MangoLearner, Method, StabilityCoefficients, StepDiagnostics};
pub use replay::ReplayBuffer;
pub use streams::{StreamKind, StreamSpec};
pub use tensor::Tensor;
