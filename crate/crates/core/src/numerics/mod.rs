//! Dense tensors, layer primitives with manual backward passes, the softmax
//! cross-entropy loss, Adam, and a finite-difference gradient checker.
//!
//! Everything is `f64` and purely functional over its inputs.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, finite_difference_check, relative_error};
pub use layers::{dense_backward, dense_forward, relu_backward, relu_forward, Dense, LayerGrad};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use tensor::{dot, matmul, Tensor};
