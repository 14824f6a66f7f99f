//! Dense `f64` tensors with a tape-based reverse-mode gradient and a
//! central-difference checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_graph_gradients, finite_difference_check, relative_error};
pub use graph::{reverse_accumulate, sigmoid, Gradients, Graph, Primitive, Var};
pub use tensor::{cosine, dot, euclidean, l2_normalize, norm, Tensor};
