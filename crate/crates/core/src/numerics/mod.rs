//! Dense f64 tensors, forward kernels, a reverse-mode tape and a finite-difference
//! gradient checker.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, ScalarFn};
pub use graph::{FocalParams, Graph, Var, PROB_CLAMP};
pub use kernels::{conv1d, layer_norm, matmul, softmax_rows, LAYER_NORM_EPS};
pub use params::ParamStore;
pub use params::stream_seed;
pub use tensor::Tensor;
