//! Small fully-connected networks for low-dimensional toy problems.

use rand::Rng;

use super::build::dense_layer;
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::scalar::Scalar;

/// Dense layers of the given widths with leaky-ReLU between them and a
/// linear last layer. Parameters are `{prefix}.l{i}.w` / `.b`.
pub fn mlp<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    x: NodeId,
    widths: &[usize],
    slope: f64,
    prefix: &str,
    rng: &mut R,
) -> Result<NodeId> {
    let mut h = x;
    for (i, &w) in widths.iter().enumerate() {
        h = dense_layer(g, h, &format!("{prefix}.l{i}"), w, rng)?;
        if i + 1 < widths.len() {
            h = g.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

/// Parameter count of [`mlp`] on `input` features.
pub fn mlp_param_count(input: usize, widths: &[usize]) -> usize {
    let mut n = input;
    let mut total = 0;
    for &w in widths {
        total += n * w + w;
        n = w;
    }
    total
}
