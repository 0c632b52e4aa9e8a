//! Pixel normalization and minibatch standard deviation, as raw kernels and
//! as graph nodes.

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default epsilon for pixel normalization.
pub const PIXEL_NORM_EPS: f64 = 1e-8;

/// `b = a / sqrt(mean_c(a^2) + eps)` at every non-channel position of a
/// tensor whose axis 1 holds the `N` feature maps.
pub fn pixel_norm<T: Scalar>(a: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if a.rank() < 2 {
        return Err(shape_err!(
            "pixel_norm needs a channel axis, got {:?}",
            a.dims()
        ));
    }
    let (b, n) = (a.dims()[0], a.dims()[1]);
    let inner: usize = a.dims()[2..].iter().product();
    let nn = T::from_usize(n).unwrap();
    let src = a.data();
    let mut out = vec![T::zero(); a.len()];
    for bi in 0..b {
        for p in 0..inner {
            let at = |c: usize| (bi * n + c) * inner + p;
            let ms = (0..n).map(|c| src[at(c)] * src[at(c)]).sum::<T>() / nn;
            let denom = (ms + eps).sqrt();
            for c in 0..n {
                out[at(c)] = if denom == T::zero() {
                    T::zero()
                } else {
                    src[at(c)] / denom
                };
            }
        }
    }
    Tensor::from_parts(a.dims().to_vec(), out)
}

/// Appends one channel holding the mean over `(c, t, h, w)` of the
/// population standard deviation across the batch.
pub fn minibatch_stddev<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(shape_err!(
            "minibatch_stddev needs B x C x ..., got {:?}",
            x.dims()
        ));
    }
    let b = x.dims()[0];
    let per: usize = x.len() / b;
    let bn = T::from_usize(b).unwrap();
    let src = x.data();
    let mut total = T::zero();
    for p in 0..per {
        let mean = (0..b).map(|i| src[i * per + p]).sum::<T>() / bn;
        let var = (0..b)
            .map(|i| {
                let d = src[i * per + p] - mean;
                d * d
            })
            .sum::<T>()
            / bn;
        total += (var + eps).sqrt();
    }
    let stat = total / T::from_usize(per).unwrap();
    let mut dims = x.dims().to_vec();
    dims[1] = 1;
    let extra = Tensor::full(&dims, stat);
    crate::tensor::concat_axis(x, &extra, 1)
}

impl<T: Scalar> Graph<T> {
    /// Graph form of [`pixel_norm`].
    pub fn pixel_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        if self.dims(a).len() < 2 {
            return Err(shape_err!(
                "pixel_norm needs a channel axis, got {:?}",
                self.dims(a)
            ));
        }
        let sq = self.square(a);
        let ms = self.mean_axes(sq, &[1])?;
        let shifted = self.add_const(ms, eps);
        let denom = self.sqrt(shifted);
        let inv = self.recip(denom);
        self.mul_broadcast(a, inv)
    }

    /// Graph form of [`minibatch_stddev`].
    pub fn minibatch_stddev(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let dims = self.dims(x).to_vec();
        if dims.len() < 2 {
            return Err(shape_err!(
                "minibatch_stddev needs B x C x ..., got {dims:?}"
            ));
        }
        let mean = self.mean_axes(x, &[0])?;
        let mb = self.broadcast_to(mean, &dims)?;
        let centered = self.sub(x, mb)?;
        let sq = self.square(centered);
        let var = self.mean_axes(sq, &[0])?;
        let shifted = self.add_const(var, eps);
        let std = self.sqrt(shifted);
        let stat = self.mean_all(std);
        let ones = vec![1; dims.len()];
        let s = self.reshape(stat, &ones)?;
        let mut extra_dims = dims.clone();
        extra_dims[1] = 1;
        let extra = self.broadcast_to(s, &extra_dims)?;
        self.concat(x, extra, 1)
    }
}
