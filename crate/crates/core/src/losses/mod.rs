//! Adversarial objectives, gradient penalties and sliced-Wasserstein
//! distances, each as a raw tensor function and as graph nodes.

mod adversarial;
mod sliced;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use adversarial::{
    clip_weights, feature_matching_loss, gan_loss, gradient_penalty, wgan_loss, LOG_CLAMP,
};
pub use sliced::{
    exact_wd_1d, swd, swd_monte_carlo, swgan_objective, PenaltySpace, ProjNodes, ProjectionSet,
    SwdEstimate, SwganLosses, BIAS_NAME, LAMBDA_NAME, THETA_NAME,
};

/// A differentiable map built into an existing graph, e.g. a critic or an
/// encoder applied to a new input node.
pub type GraphFn<'a, T> = dyn FnMut(&mut Graph<T>, NodeId) -> Result<NodeId> + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Gan,
    WganClip,
    WganGp,
    Swgan,
    SwdDirect,
    FeatureMatching,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gan" => Self::Gan,
            "wgan_clip" => Self::WganClip,
            "wgan_gp" => Self::WganGp,
            "swgan" => Self::Swgan,
            "swd_direct" => Self::SwdDirect,
            "feature_matching" => Self::FeatureMatching,
            _ => return Err(Error::Config(format!("unknown loss kind {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k_lipschitz: f64,
    pub clip_bound: f64,
    /// Orthogonal frames drawn per step for Monte Carlo SWD.
    pub n_projections: usize,
    /// Where the projection-map penalty samples its points.
    pub penalty_space: PenaltySpace,
    /// Resample the swgan projection frame every step instead of learning it.
    pub fixed_projections: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Swgan,
            lambda1: 10.0,
            lambda2: 10.0,
            k_lipschitz: 1.0,
            clip_bound: 0.01,
            n_projections: 1,
            penalty_space: PenaltySpace::Encoding,
            fixed_projections: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(
                "lambda1 and lambda2 must be non-negative".into(),
            ));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Config("clip_bound must be positive".into()));
        }
        if !(self.k_lipschitz >= 0.0) {
            return Err(Error::Config("k_lipschitz must be non-negative".into()));
        }
        if self.n_projections == 0 {
            return Err(Error::Config("n_projections must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample squared L2 norm of a `[B, ...]` node, as `[B]`.
pub(crate) fn per_sample_sq_norm<T: Scalar>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let dims = g.dims(x).to_vec();
    let sq = g.square(x);
    let axes: Vec<usize> = (1..dims.len()).collect();
    let s = if axes.is_empty() {
        sq
    } else {
        g.reduce_sum(sq, &axes)?
    };
    g.reshape(s, &[dims[0]])
}

/// `b + u * (a - b)` with one weight per sample, `u: [B]`.
pub(crate) fn interpolate<T: Scalar>(
    g: &mut Graph<T>,
    a: NodeId,
    b: NodeId,
    u: NodeId,
) -> Result<NodeId> {
    let dims = g.dims(a).to_vec();
    if g.dims(u) != [dims[0]] {
        return Err(crate::error::shape_err!(
            "interpolation weights {:?} for batch {:?}",
            g.dims(u),
            dims
        ));
    }
    let mut ud = vec![1; dims.len()];
    ud[0] = dims[0];
    let u = g.reshape(u, &ud)?;
    let diff = g.sub(a, b)?;
    let step = g.mul_broadcast(diff, u)?;
    g.add(b, step)
}
