//! Deterministic reverse-mode autodiff core: tensors, convolution kernels,
//! weight-normalized layers, and the AdamW optimizer.

pub mod conv;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use conv::{Conv1dSpec, Conv2dSpec};
pub use graph::{Graph, Grads, TensorId};
pub use layers::{WnConv1d, WnConv2d, WnConvT1d};
pub use optim::AdamW;
pub use params::{Binding, ParamId, ParamSet};
