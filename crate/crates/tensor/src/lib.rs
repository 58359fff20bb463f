//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! A [`Graph`] records operations as they are evaluated eagerly. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns [`Gradients`] for every parameter and input leaf that requires
//! them. Parameters live in a [`ParamStore`] and are copied into a graph on
//! first use, so one store can be shared by many graphs.
//!
//! Every tensor is treated as a matrix: the last dimension is the column
//! count and all leading dimensions collapse into rows.

mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod params;
mod rng;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, FD_EPSILON};
pub use graph::{gumbel_softmax_weights, AttentionLayout, Gradients, Graph, Var};
pub use optim::AdamW;
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
