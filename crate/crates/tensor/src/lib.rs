//! Minimal N-D tensors with tape-based reverse-mode differentiation.
//!
//! The op set is exactly what image-completion networks need: strided and
//! transposed convolutions, align-corners bilinear resampling, (leaky) ReLU,
//! affine layers, elementwise arithmetic, squared-error reductions, and the
//! weight/spectral reparameterizations used by the generator and critics.
//!
//! ```
//! use pscan_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.square(x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap()[0], 6.0);
//! ```

mod element;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_sampled};
pub use graph::{bilinear_form, Activation, Graph, Var};
pub use kernels::conv::Padding;
pub use tensor::Tensor;
