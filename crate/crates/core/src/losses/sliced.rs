use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{interpolate, per_sample_sq_norm, GraphFn, LossConfig};
use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{orthonormalize_columns, random_orthogonal};
use crate::scalar::Scalar;
use crate::tensor::{matmul, sort_values, Tensor};

/// W1 distance between two equal-size empirical measures on the line:
/// the mean absolute difference of the sorted samples.
pub fn exact_wd_1d<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    if x.rank() != 1 || y.rank() != 1 || x.len() != y.len() {
        return Err(shape_err!(
            "exact_wd_1d needs equal-length vectors, got {:?} and {:?}",
            x.dims(),
            y.dims()
        ));
    }
    let (sx, sy) = (sort_values(x)?, sort_values(y)?);
    let n = T::from_usize(x.len()).unwrap();
    Ok(sx
        .data()
        .iter()
        .zip(sy.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<T>()
        / n)
}

fn check_samples<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<usize> {
    if x.rank() != 2 || x.dims() != y.dims() {
        return Err(shape_err!(
            "swd needs equal [N, K] sample sets, got {:?} and {:?}",
            x.dims(),
            y.dims()
        ));
    }
    Ok(x.dims()[1])
}

fn per_direction<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, dirs: &Tensor<T>) -> Result<Vec<T>> {
    let k = check_samples(x, y)?;
    if dirs.rank() != 2 || dirs.dims()[0] != k {
        return Err(shape_err!("directions {:?} for width {k}", dirs.dims()));
    }
    let (px, py) = (matmul(x, dirs)?, matmul(y, dirs)?);
    let (n, p) = (x.dims()[0], dirs.dims()[1]);
    (0..p)
        .map(|j| {
            let col = |m: &Tensor<T>| Tensor::from_fn(&[n], |i| m.data()[i * p + j]);
            exact_wd_1d(&col(&px), &col(&py))
        })
        .collect()
}

/// Sliced distance over the columns of `dirs: [K, P]`.
pub fn swd<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, dirs: &Tensor<T>) -> Result<T> {
    let v = per_direction(x, y, dirs)?;
    if v.is_empty() {
        return Err(shape_err!("no projection directions"));
    }
    let n = T::from_usize(v.len()).unwrap();
    Ok(v.into_iter().sum::<T>() / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdEstimate {
    pub value: f64,
    /// Standard error of the mean over individual directions.
    pub std_err: f64,
    pub n_directions: usize,
}

/// Monte Carlo sliced distance averaged over `frames` random orthogonal
/// frames of `K` directions each.
pub fn swd_monte_carlo<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    frames: usize,
    rng: &mut R,
) -> Result<SwdEstimate> {
    let k = check_samples(x, y)?;
    if frames == 0 {
        return Err(Error::Invalid(
            "at least one projection frame is required".into(),
        ));
    }
    let mut vals = Vec::with_capacity(frames * k);
    for _ in 0..frames {
        let q: Tensor<T> = random_orthogonal(k, rng);
        vals.extend(per_direction(x, y, &q)?.into_iter().map(|v| v.as_f64()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SwdEstimate {
        value: mean,
        std_err: (var / n).sqrt(),
        n_directions: vals.len(),
    })
}

/// Learned projection map `f(e) = (1/K) sum_i phi(lambda_i theta_i^T e + b_i)`
/// with orthonormal columns `theta_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet<T> {
    pub theta: Tensor<T>,
    pub lambdas: Tensor<T>,
    pub biases: Tensor<T>,
    pub slope: f64,
}

pub const THETA_NAME: &str = "f.theta";
pub const LAMBDA_NAME: &str = "f.lambda";
pub const BIAS_NAME: &str = "f.bias";

impl<T: Scalar> ProjectionSet<T> {
    /// Random orthogonal frame, unit gains, zero biases.
    pub fn random<R: Rng>(k: usize, slope: f64, rng: &mut R) -> Self {
        Self {
            theta: random_orthogonal(k, rng),
            lambdas: Tensor::ones(&[k]),
            biases: Tensor::zeros(&[k]),
            slope,
        }
    }

    pub fn width(&self) -> usize {
        self.lambdas.len()
    }

    pub fn orthonormalize(&mut self) -> Result<()> {
        orthonormalize_columns(&mut self.theta)
    }

    /// Direct evaluation on encodings `e: [B, K]`, returning `[B]`.
    pub fn critic(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        let k = self.width();
        if e.rank() != 2 || e.dims()[1] != k {
            return Err(shape_err!(
                "encodings {:?} for a projection set of width {k}",
                e.dims()
            ));
        }
        let b = e.dims()[0];
        let slope = T::lit(self.slope);
        let kk = T::from_usize(k).unwrap();
        let th = self.theta.data();
        Ok(Tensor::from_fn(&[b], |r| {
            let row = e.row(r);
            (0..k)
                .map(|i| {
                    let proj: T = (0..k).map(|c| th[c * k + i] * row[c]).sum();
                    let v = self.lambdas.data()[i] * proj + self.biases.data()[i];
                    if v >= T::zero() {
                        v
                    } else {
                        slope * v
                    }
                })
                .sum::<T>()
                / kk
        }))
    }

    /// Adds the set to `g` as trainable parameters (or reuses existing ones).
    pub fn register(&self, g: &mut Graph<T>) -> Result<ProjNodes> {
        let mut get = |name: &str, v: &Tensor<T>| match g.find(name) {
            Some(id) => Ok(id),
            None => g.param(name, v.clone()),
        };
        Ok(ProjNodes {
            theta: get(THETA_NAME, &self.theta)?,
            lambda: get(LAMBDA_NAME, &self.lambdas)?,
            bias: get(BIAS_NAME, &self.biases)?,
            slope: self.slope,
        })
    }

    /// Reads the current values back out of a graph.
    pub fn from_graph(g: &Graph<T>, nodes: &ProjNodes) -> Result<Self> {
        let get = |id: NodeId| g.value(id).cloned().ok_or(Error::UnboundInput(id.index()));
        Ok(Self {
            theta: get(nodes.theta)?,
            lambdas: get(nodes.lambda)?,
            biases: get(nodes.bias)?,
            slope: nodes.slope,
        })
    }
}

/// Graph handles of a registered [`ProjectionSet`].
#[derive(Clone, Copy, Debug)]
pub struct ProjNodes {
    pub theta: NodeId,
    pub lambda: NodeId,
    pub bias: NodeId,
    pub slope: f64,
}

impl ProjNodes {
    /// `[B, K]` encodings to `[B, 1]` critic values.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, e: NodeId) -> Result<NodeId> {
        let k = g.dims(self.lambda)[0];
        if g.dims(e).len() != 2 || g.dims(e)[1] != k {
            return Err(shape_err!(
                "encodings {:?} for a projection set of width {k}",
                g.dims(e)
            ));
        }
        let proj = g.matmul(e, self.theta)?;
        let lam = g.reshape(self.lambda, &[1, k])?;
        let scaled = g.mul_broadcast(proj, lam)?;
        let bias = g.reshape(self.bias, &[1, k])?;
        let dims = g.dims(scaled).to_vec();
        let bias = g.broadcast_to(bias, &dims)?;
        let pre = g.add(scaled, bias)?;
        let act = g.leaky_relu(pre, self.slope);
        g.mean_axes(act, &[1])
    }

    /// Re-orthonormalizes the frame stored in `g`.
    pub fn reorthonormalize<T: Scalar>(&self, g: &mut Graph<T>) -> Result<()> {
        orthonormalize_columns(g.leaf_value_mut(self.theta)?)
    }
}

/// Sampling space for the projection-map penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySpace {
    /// Interpolate between encodings of real and generated samples.
    Encoding,
    /// Encode the data-space interpolate used by the encoder penalty.
    Data,
}

impl std::str::FromStr for PenaltySpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoding" => Ok(Self::Encoding),
            "data" => Ok(Self::Data),
            _ => Err(Error::Config(format!("unknown penalty space {s:?}"))),
        }
    }
}

/// Nodes built by [`swgan_objective`].
#[derive(Clone, Copy, Debug)]
pub struct SwganLosses {
    pub loss_d: NodeId,
    pub loss_g: NodeId,
    pub penalty_encoder: NodeId,
    pub penalty_projection: NodeId,
    /// `mean D(real) - mean D(fake)`.
    pub critic_gap: NodeId,
}

/// Critic objective with encoder and projection-map gradient penalties.
///
/// `u_x` and `u_y` are `[B]` interpolation weights. A zero penalty weight
/// skips building that penalty.
#[allow(clippy::too_many_arguments)]
pub fn swgan_objective<T: Scalar>(
    g: &mut Graph<T>,
    encoder: &mut GraphFn<'_, T>,
    proj: &ProjNodes,
    x_real: NodeId,
    x_fake: NodeId,
    u_x: NodeId,
    u_y: NodeId,
    cfg: &LossConfig,
) -> Result<SwganLosses> {
    let e_real = encoder(g, x_real)?;
    let e_fake = encoder(g, x_fake)?;
    let d_real = proj.apply(g, e_real)?;
    let d_fake = proj.apply(g, e_fake)?;
    let mr = g.mean_all(d_real);
    let mf = g.mean_all(d_fake);
    let critic_gap = g.sub(mr, mf)?;
    let loss_g = g.neg(mf);

    let zero = || Tensor::<T>::zeros(&[1]);
    let need_xhat =
        cfg.lambda1 > 0.0 || (cfg.lambda2 > 0.0 && cfg.penalty_space == PenaltySpace::Data);
    let x_hat = if need_xhat {
        Some(interpolate(g, x_real, x_fake, u_x)?)
    } else {
        None
    };

    let penalty_encoder = if cfg.lambda1 > 0.0 {
        let xh = x_hat.expect("built above");
        let e = encoder(g, xh)?;
        let s = g.sum_all(e);
        let grad = g.grad(s, &[xh])?.nodes[0];
        let sq = per_sample_sq_norm(g, grad)?;
        g.mean_all(sq)
    } else {
        g.constant(zero())
    };

    let penalty_projection = if cfg.lambda2 > 0.0 {
        let y_hat = match cfg.penalty_space {
            PenaltySpace::Encoding => interpolate(g, e_real, e_fake, u_y)?,
            PenaltySpace::Data => encoder(g, x_hat.expect("built above"))?,
        };
        let f = proj.apply(g, y_hat)?;
        let s = g.sum_all(f);
        let grad = g.grad(s, &[y_hat])?.nodes[0];
        let sq = per_sample_sq_norm(g, grad)?;
        let norm = g.sqrt(sq);
        let diff = g.add_const(norm, -cfg.k_lipschitz);
        let d2 = g.square(diff);
        g.mean_all(d2)
    } else {
        g.constant(zero())
    };

    let neg_gap = g.neg(critic_gap);
    let p1 = g.scale(penalty_encoder, cfg.lambda1);
    let p2 = g.scale(penalty_projection, cfg.lambda2);
    let with_p1 = g.add(neg_gap, p1)?;
    let loss_d = g.add(with_p1, p2)?;
    Ok(SwganLosses {
        loss_d,
        loss_g,
        penalty_encoder,
        penalty_projection,
        critic_gap,
    })
}

impl<T: Scalar> Graph<T> {
    /// Differentiable sliced distance between `[N, K]` sample sets along the
    /// columns of `dirs: [K, P]`.
    pub fn sliced_wasserstein(&mut self, x: NodeId, y: NodeId, dirs: NodeId) -> Result<NodeId> {
        if self.dims(x) != self.dims(y) || self.dims(x).len() != 2 {
            return Err(shape_err!(
                "swd needs equal [N, K] inputs, got {:?} and {:?}",
                self.dims(x),
                self.dims(y)
            ));
        }
        let px = self.matmul(x, dirs)?;
        let py = self.matmul(y, dirs)?;
        let sx = self.sort_columns(px)?;
        let sy = self.sort_columns(py)?;
        let d = self.sub(sx, sy)?;
        let a = self.abs(d);
        Ok(self.mean_all(a))
    }
}
