//! Reverse-mode differentiation where backward passes are themselves graph
//! nodes, so gradients can be differentiated again (double backprop).

mod backward;
mod checkpoint;
mod graph;

pub use backward::Gradients;
pub use checkpoint::{Checkpoint, MANIFEST_NAME, OPTIMIZER_PREFIX};
pub use graph::{Graph, LeafKind, NodeId, Op, Piecewise};
