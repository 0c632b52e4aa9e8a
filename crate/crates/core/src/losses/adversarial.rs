use super::{interpolate, per_sample_sq_norm, GraphFn};
use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn safe_log(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0).ln()
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(shape_err!("empty discriminator outputs"));
    }
    Ok(())
}

/// `(loss_d, loss_g)` of the standard GAN on discriminator logits, with the
/// non-saturating generator loss.
pub fn gan_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<(f64, f64)> {
    check_pair(d_real, d_fake)?;
    let mean = |t: &Tensor<T>, f: &dyn Fn(f64) -> f64| {
        t.data().iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
    };
    let real = mean(d_real, &|v| -safe_log(sigmoid(v)));
    let fake = mean(d_fake, &|v| -safe_log(sigmoid(-v)));
    let gen = mean(d_fake, &|v| -safe_log(sigmoid(v)));
    Ok((real + fake, gen))
}

/// `(loss_d, loss_g) = (mean(fake) - mean(real), -mean(fake))`.
pub fn wgan_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<(f64, f64)> {
    check_pair(d_real, d_fake)?;
    let (r, f) = (d_real.mean().as_f64(), d_fake.mean().as_f64());
    Ok((f - r, -f))
}

/// Squared distance between the batch means of two `[B, F]` feature sets.
pub fn feature_matching_loss<T: Scalar>(f_real: &Tensor<T>, f_fake: &Tensor<T>) -> Result<f64> {
    if f_real.rank() != 2 || f_fake.rank() != 2 || f_real.dims()[1] != f_fake.dims()[1] {
        return Err(shape_err!(
            "feature shapes {:?} vs {:?}",
            f_real.dims(),
            f_fake.dims()
        ));
    }
    let f = f_real.dims()[1];
    let col_mean = |t: &Tensor<T>, j: usize| {
        let b = t.dims()[0];
        (0..b).map(|i| t.data()[i * f + j].as_f64()).sum::<f64>() / b as f64
    };
    Ok((0..f)
        .map(|j| (col_mean(f_real, j) - col_mean(f_fake, j)).powi(2))
        .sum())
}

/// Clamps every trainable parameter of `g` into `[-bound, bound]`.
pub fn clip_weights<T: Scalar>(g: &mut Graph<T>, bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(crate::error::Error::Invalid(format!(
            "clip bound {bound} must be positive"
        )));
    }
    let (lo, hi) = (T::lit(-bound), T::lit(bound));
    for (_, id) in g.params() {
        for v in g.leaf_value_mut(id)?.data_mut() {
            *v = v.max(lo).min(hi);
        }
    }
    Ok(())
}

/// Penalty `mean_b (||grad_x D(x_hat_b)|| - target)^2` at
/// `x_hat = u * x_real + (1 - u) * x_fake`, with `u: [B]`.
pub fn gradient_penalty<T: Scalar>(
    g: &mut Graph<T>,
    critic: &mut GraphFn<'_, T>,
    x_real: NodeId,
    x_fake: NodeId,
    u: NodeId,
    target: f64,
) -> Result<NodeId> {
    if g.dims(x_real) != g.dims(x_fake) {
        return Err(shape_err!(
            "penalty inputs {:?} vs {:?}",
            g.dims(x_real),
            g.dims(x_fake)
        ));
    }
    let x_hat = interpolate(g, x_real, x_fake, u)?;
    let score = critic(g, x_hat)?;
    let total = g.sum_all(score);
    let grad = g.grad(total, &[x_hat])?.nodes[0];
    let sq = per_sample_sq_norm(g, grad)?;
    let norm = g.sqrt(sq);
    let diff = g.add_const(norm, -target);
    let d2 = g.square(diff);
    Ok(g.mean_all(d2))
}

impl<T: Scalar> Graph<T> {
    /// Graph form of [`gan_loss`] on `[B]` or `[B, 1]` logits.
    pub fn gan_loss(&mut self, d_real: NodeId, d_fake: NodeId) -> Result<(NodeId, NodeId)> {
        let neg_mean_log = |g: &mut Self, logits: NodeId, flip: bool| {
            let x = if flip { g.neg(logits) } else { logits };
            let p = g.sigmoid(x);
            let p = g.clamp(p, LOG_CLAMP, 1.0);
            let l = g.log(p);
            let m = g.mean_all(l);
            g.neg(m)
        };
        let real = neg_mean_log(self, d_real, false);
        let fake = neg_mean_log(self, d_fake, true);
        let loss_d = self.add(real, fake)?;
        let loss_g = neg_mean_log(self, d_fake, false);
        Ok((loss_d, loss_g))
    }

    /// Graph form of [`wgan_loss`].
    pub fn wgan_loss(&mut self, d_real: NodeId, d_fake: NodeId) -> Result<(NodeId, NodeId)> {
        let r = self.mean_all(d_real);
        let f = self.mean_all(d_fake);
        let loss_d = self.sub(f, r)?;
        let loss_g = self.neg(f);
        Ok((loss_d, loss_g))
    }

    /// Graph form of [`feature_matching_loss`].
    pub fn feature_matching_loss(&mut self, f_real: NodeId, f_fake: NodeId) -> Result<NodeId> {
        if self.dims(f_real).len() != 2 || self.dims(f_real)[1..] != self.dims(f_fake)[1..] {
            return Err(shape_err!(
                "feature shapes {:?} vs {:?}",
                self.dims(f_real),
                self.dims(f_fake)
            ));
        }
        let mr = self.mean_axes(f_real, &[0])?;
        let mf = self.mean_axes(f_fake, &[0])?;
        let d = self.sub(mr, mf)?;
        let sq = self.square(d);
        Ok(self.sum_all(sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![v.len()], v).unwrap()
    }

    #[test]
    fn gan_examples() {
        let (d, g) = gan_loss(&t(&[40.0, 50.0]), &t(&[-40.0])).unwrap();
        assert_eq!(d, 0.0);
        assert!((g + LOG_CLAMP.ln()).abs() < 1e-12);
        let (d, _) = gan_loss(&t(&[0.0; 3]), &t(&[0.0; 3])).unwrap();
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
        let (_, g) = gan_loss(&t(&[0.0]), &t(&[40.0])).unwrap();
        assert_eq!(g, 0.0);
        // Saturated logits stay finite thanks to the clamp.
        let (d, g) = gan_loss(&t(&[-800.0]), &t(&[800.0])).unwrap();
        assert!((d - 2.0 * -LOG_CLAMP.ln()).abs() < 1e-9 && g == 0.0);
    }

    #[test]
    fn wgan_examples() {
        assert_eq!(wgan_loss(&t(&[1.0, 3.0]), &t(&[2.0, 2.0])).unwrap().0, 0.0);
        assert_eq!(
            wgan_loss(&t(&[1.0; 4]), &t(&[0.0; 4])).unwrap(),
            (-1.0, 0.0)
        );
        let (a, _) = wgan_loss(&t(&[0.3, -1.2]), &t(&[2.5, 0.1])).unwrap();
        let (b, _) = wgan_loss(&t(&[7.3, 5.8]), &t(&[9.5, 7.1])).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_examples() {
        let a = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(feature_matching_loss(&a, &a).unwrap(), 0.0);
        let z = Tensor::<f64>::zeros(&[3, 1]);
        let o = Tensor::<f64>::ones(&[2, 1]);
        assert_eq!(feature_matching_loss(&z, &o).unwrap(), 1.0);
        let b = Tensor::<f64>::from_f64(vec![3, 2], &[0.5, -1.0, 2.0, 0.0, 1.0, 4.0]).unwrap();
        // means (2, 3) vs (7/6, 1)
        let want = (2.0 - 3.5 / 3.0f64).powi(2) + 4.0;
        assert!((feature_matching_loss(&a, &b).unwrap() - want).abs() < 1e-14);
        assert!(feature_matching_loss(&a, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn clip_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.param("p", t(&[2.0, -0.005, -3.0])).unwrap();
        let q = g.param("q", t(&[0.001])).unwrap();
        clip_weights(&mut g, 0.01).unwrap();
        assert_eq!(g.value(p).unwrap().data(), &[0.01, -0.005, -0.01]);
        assert_eq!(g.value(q).unwrap().data(), &[0.001]);
        let before = g.value(p).unwrap().clone();
        clip_weights(&mut g, 0.01).unwrap();
        assert_eq!(g.value(p).unwrap(), &before);
        assert!(clip_weights(&mut g, 0.0).is_err());
    }

    fn linear_critic(w: Vec<f64>) -> impl FnMut(&mut Graph<f64>, NodeId) -> Result<NodeId> {
        move |g, x| {
            let n = w.len();
            let wn = match g.find("w") {
                Some(id) => id,
                None => g.param("w", Tensor::from_f64(vec![1, n], &w)?)?,
            };
            let b = match g.find("b") {
                Some(id) => id,
                None => g.param("b", Tensor::zeros(&[1]))?,
            };
            g.dense(x, wn, b)
        }
    }

    fn penalty_value(critic: &mut GraphFn<'_, f64>, u: &[f64], target: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let xr = g.input("xr", &[3, 2]).unwrap();
        let xf = g.input("xf", &[3, 2]).unwrap();
        let un = g.input("u", &[3]).unwrap();
        let p = gradient_penalty(&mut g, critic, xr, xf, un, target).unwrap();
        g.set_value(xr, Tensor::from_fn(&[3, 2], |i| i as f64))
            .unwrap();
        g.set_value(xf, Tensor::from_fn(&[3, 2], |i| (i * i) as f64 * 0.1))
            .unwrap();
        g.set_value(un, t(u)).unwrap();
        g.forward(&[p]).unwrap()[0].item()
    }

    #[test]
    fn penalty_linear_and_constant_critics() {
        for u in [[0.0, 0.5, 1.0], [0.2, 0.9, 0.4]] {
            assert!(penalty_value(&mut linear_critic(vec![0.6, 0.8]), &u, 1.0).abs() < 1e-15);
            let v = penalty_value(&mut linear_critic(vec![3.0, 4.0]), &u, 2.0);
            assert!((v - 9.0).abs() < 1e-12);
            let mut constant = |g: &mut Graph<f64>, _x: NodeId| -> Result<NodeId> {
                Ok(g.constant(Tensor::full(&[3, 1], 5.0)))
            };
            assert!((penalty_value(&mut constant, &u, 1.5) - 2.25).abs() < 1e-15);
            assert!(
                (penalty_value(&mut linear_critic(vec![0.0, 0.0]), &u, 1.5) - 2.25).abs() < 1e-15
            );
        }
    }

    #[test]
    fn graph_forms_match_raw() {
        let r = t(&[0.3, -1.1, 2.0]);
        let f = t(&[-0.4, 0.9, 0.05]);
        let mut g = Graph::<f64>::new();
        let rn = g.input("r", &[3]).unwrap();
        let fnode = g.input("f", &[3]).unwrap();
        let (gd, gg) = g.gan_loss(rn, fnode).unwrap();
        let (wd, wg) = g.wgan_loss(rn, fnode).unwrap();
        let r2 = g.reshape(rn, &[3, 1]).unwrap();
        let f2 = g.reshape(fnode, &[3, 1]).unwrap();
        let fm = g.feature_matching_loss(r2, f2).unwrap();
        g.set_value(rn, r.clone()).unwrap();
        g.set_value(fnode, f.clone()).unwrap();
        let v: Vec<f64> = g
            .forward(&[gd, gg, wd, wg, fm])
            .unwrap()
            .iter()
            .map(|x| x.item())
            .collect();
        let (a, b) = gan_loss(&r, &f).unwrap();
        let (c, d) = wgan_loss(&r, &f).unwrap();
        let e = feature_matching_loss(&r.reshape(&[3, 1]).unwrap(), &f.reshape(&[3, 1]).unwrap())
            .unwrap();
        for (x, y) in v.iter().zip([a, b, c, d, e]) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn losses_finite(r in proptest::collection::vec(-1e4f64..1e4, 1..8),
                         f in proptest::collection::vec(-1e4f64..1e4, 1..8)) {
            let (a, b) = gan_loss(&t(&r), &t(&f)).unwrap();
            prop_assert!(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0);
            let (c, d) = wgan_loss(&t(&r), &t(&f)).unwrap();
            prop_assert!(c.is_finite() && d.is_finite());
        }
    }
}
