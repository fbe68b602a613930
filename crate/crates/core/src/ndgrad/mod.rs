//! Minimal reverse-mode tensor engine.
//!
//! Only the operations the autoencoders and the hypersphere objective need are
//! provided. Values are `f64` throughout so every gradient can be checked
//! against central finite differences.

mod adam;
pub mod conv;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{check_gradients, GradCheck, REL_ERR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{xavier_init, Tensor};

pub(crate) use graph::sq_dist;
