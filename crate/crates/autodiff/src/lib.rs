//! Dense `f64` tensors with a define-by-run reverse-mode tape.
//!
//! The op set is exactly what a convolutional LSTM encoder-decoder needs:
//! same-padded 2-D convolution, sigmoid/tanh, Hadamard products, channel
//! concatenation and slicing, 2×2 max pooling, nearest-neighbour
//! upsampling and a Log-Cosh loss. [`adam_step`] updates parameters.
//!
//! ```
//! use dvfcast_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_fn(&[3], |i| i as f64), true);
//! let s = g.sum(x);
//! g.backward(s).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

mod error;
mod graph;
mod kernels;
mod optim;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{sigmoid, Graph, OpRecord, Var};
pub use kernels::log_cosh;
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
