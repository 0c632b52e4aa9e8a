//! Synthetic datasets: a 2-D Gaussian mixture and moving-dot videos.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape3d, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussMix2d,
    MovingDotVideo,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_mix_2d" => Ok(Self::GaussMix2d),
            "moving_dot_video" => Ok(Self::MovingDotVideo),
            _ => Err(Error::Config(format!("unknown dataset {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussMix {
    pub means: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub std: f64,
}

impl Default for GaussMix {
    /// Four equally weighted components on a radius-2 ring.
    fn default() -> Self {
        Self {
            means: vec![[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]],
            weights: vec![0.25; 4],
            std: 0.2,
        }
    }
}

impl GaussMix {
    pub fn mean(&self) -> [f64; 2] {
        let total: f64 = self.weights.iter().sum();
        let mut m = [0.0; 2];
        for (mu, w) in self.means.iter().zip(&self.weights) {
            m[0] += w * mu[0] / total;
            m[1] += w * mu[1] / total;
        }
        m
    }

    /// Per-coordinate standard deviation of the mixture.
    pub fn marginal_std(&self) -> [f64; 2] {
        let total: f64 = self.weights.iter().sum();
        let m = self.mean();
        let mut var = [self.std * self.std; 2];
        for (mu, w) in self.means.iter().zip(&self.weights) {
            for a in 0..2 {
                var[a] += w / total * (mu[a] - m[a]).powi(2);
            }
        }
        [var[0].sqrt(), var[1].sqrt()]
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        let n = Normal::new(0.0, self.std).expect("positive std");
        [
            self.means[k][0] + n.sample(rng),
            self.means[k][1] + n.sample(rng),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingDot {
    pub rung: Shape3d,
    /// Largest per-frame displacement along each spatial axis, in pixels.
    pub max_speed: i64,
    pub background: f64,
    pub foreground: f64,
}

impl MovingDot {
    pub fn new(rung: Shape3d) -> Self {
        Self {
            rung,
            max_speed: 1,
            background: -1.0,
            foreground: 1.0,
        }
    }

    fn draw<T: Scalar, R: Rng>(&self, rng: &mut R, out: &mut [T]) {
        let Shape3d { t, h, w } = self.rung;
        let (y0, x0) = (rng.random_range(0..h as i64), rng.random_range(0..w as i64));
        let vy = rng.random_range(-self.max_speed..=self.max_speed);
        let vx = rng.random_range(-self.max_speed..=self.max_speed);
        let frame = t * h * w;
        for v in out.iter_mut() {
            *v = T::lit(self.background);
        }
        for f in 0..t as i64 {
            let y = (y0 + vy * f).rem_euclid(h as i64) as usize;
            let x = (x0 + vx * f).rem_euclid(w as i64) as usize;
            for c in 0..3 {
                out[c * frame + (f as usize * h + y) * w + x] = T::lit(self.foreground);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticDataset {
    GaussMix2d(GaussMix),
    MovingDotVideo(MovingDot),
}

impl SyntheticDataset {
    pub fn sample_dims(&self) -> Vec<usize> {
        match self {
            Self::GaussMix2d(_) => vec![2],
            Self::MovingDotVideo(d) => vec![3, d.rung.t, d.rung.h, d.rung.w],
        }
    }

    fn fill<T: Scalar>(
        &self,
        purpose: Purpose,
        seed: u64,
        start: u64,
        n: usize,
    ) -> Result<Tensor<T>> {
        if n == 0 {
            return Err(Error::Invalid("cannot sample zero items".into()));
        }
        let per: usize = self.sample_dims().iter().product();
        let mut data = vec![T::zero(); n * per];
        for (i, chunk) in data.chunks_mut(per).enumerate() {
            let mut rng = stream(seed, purpose, start + i as u64);
            match self {
                Self::GaussMix2d(g) => {
                    let [a, b] = g.draw(&mut rng);
                    chunk[0] = T::lit(a);
                    chunk[1] = T::lit(b);
                }
                Self::MovingDotVideo(d) => d.draw(&mut rng, chunk),
            }
        }
        let mut dims = vec![n];
        dims.extend(self.sample_dims());
        Tensor::from_parts(dims, data)
    }

    /// Training samples `start .. start + n`; sample `i` depends only on `(seed, i)`.
    pub fn sample_at<T: Scalar>(&self, seed: u64, start: u64, n: usize) -> Result<Tensor<T>> {
        self.fill(Purpose::Data, seed, start, n)
    }

    /// Samples from a stream disjoint from the training stream.
    pub fn sample_held_out<T: Scalar>(&self, seed: u64, n: usize) -> Result<Tensor<T>> {
        self.fill(Purpose::EvalData, seed, 0, n)
    }
}

/// The first `n` training samples for `seed`.
pub fn sample_dataset<T: Scalar>(ds: &SyntheticDataset, n: usize, seed: u64) -> Result<Tensor<T>> {
    ds.sample_at(seed, 0, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let ds = SyntheticDataset::GaussMix2d(GaussMix::default());
        let a: Tensor<f64> = sample_dataset(&ds, 50, 3).unwrap();
        assert_eq!(a, sample_dataset(&ds, 50, 3).unwrap());
        assert_ne!(a, sample_dataset(&ds, 50, 4).unwrap());
        // Pure in the index: a window reproduces the matching rows.
        let w: Tensor<f64> = ds.sample_at(3, 10, 5).unwrap();
        assert_eq!(w.data(), &a.data()[20..30]);
        assert_ne!(ds.sample_held_out::<f64>(3, 50).unwrap(), a);
    }

    #[test]
    fn mixture_mean_within_bound() {
        let g = GaussMix::default();
        let ds = SyntheticDataset::GaussMix2d(g.clone());
        let n = 20_000;
        let x: Tensor<f64> = sample_dataset(&ds, n, 11).unwrap();
        let (m, s) = (g.mean(), g.marginal_std());
        for a in 0..2 {
            let mean = (0..n).map(|i| x.data()[2 * i + a]).sum::<f64>() / n as f64;
            assert!(
                (mean - m[a]).abs() <= 5.0 * s[a] / (n as f64).sqrt(),
                "axis {a}: {mean}"
            );
        }
    }

    #[test]
    fn one_bright_voxel_per_frame() {
        let rung = Shape3d::new(8, 16, 16).unwrap();
        let ds = SyntheticDataset::MovingDotVideo(MovingDot::new(rung));
        let x: Tensor<f64> = sample_dataset(&ds, 6, 1).unwrap();
        assert_eq!(x.dims(), &[6, 3, 8, 16, 16]);
        for b in 0..6 {
            for c in 0..3 {
                for f in 0..8 {
                    let start = ((b * 3 + c) * 8 + f) * 256;
                    let frame = &x.data()[start..start + 256];
                    let max = frame.iter().cloned().fold(f64::MIN, f64::max);
                    assert_eq!(frame.iter().filter(|&&v| v == max).count(), 1);
                }
            }
        }
    }

    #[test]
    fn dot_moves_at_constant_velocity() {
        let rung = Shape3d::new(8, 8, 8).unwrap();
        let ds = SyntheticDataset::MovingDotVideo(MovingDot::new(rung));
        let x: Tensor<f64> = sample_dataset(&ds, 4, 9).unwrap();
        for b in 0..4 {
            let pos: Vec<(i64, i64)> = (0..8)
                .map(|f| {
                    let start = (b * 3 * 8 + f) * 64;
                    let i = x.data()[start..start + 64]
                        .iter()
                        .position(|&v| v == 1.0)
                        .unwrap();
                    ((i / 8) as i64, (i % 8) as i64)
                })
                .collect();
            let step = |a: i64, b: i64| (b - a).rem_euclid(8);
            for f in 1..7 {
                assert_eq!(step(pos[f - 1].0, pos[f].0), step(pos[f].0, pos[f + 1].0));
                assert_eq!(step(pos[f - 1].1, pos[f].1), step(pos[f].1, pos[f + 1].1));
            }
        }
    }
}
