//! Inception Score and Fréchet distance over externally produced class
//! probabilities and feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{sqrtm_psd, trace};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Tensor};

/// Tolerance on row sums of a probability matrix.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Per-sample class probabilities, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix<T> {
    p: Tensor<T>,
}

impl<T: Scalar> ProbMatrix<T> {
    pub fn new(p: Tensor<T>) -> Result<Self> {
        if p.rank() != 2 {
            return Err(shape_err!(
                "probability matrix must be [N, C], got {:?}",
                p.dims()
            ));
        }
        let c = p.dims()[1];
        for (i, row) in p.data().chunks(c).enumerate() {
            if row.iter().any(|&v| v < T::zero()) {
                return Err(Error::Invalid(format!(
                    "row {i} has a negative probability"
                )));
            }
            let s: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { p })
    }

    pub fn n_samples(&self) -> usize {
        self.p.dims()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.p.dims()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.p
    }
}

fn score_rows(rows: &[&[f64]]) -> f64 {
    let c = rows[0].len();
    let n = rows.len() as f64;
    let marginal: Vec<f64> = (0..c)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mean_kl = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    mean_kl.exp()
}

/// `exp(mean_x KL(p(y|x) || p(y)))` with the marginal taken over all rows.
pub fn inception_score<T: Scalar>(p: &ProbMatrix<T>) -> f64 {
    inception_score_splits(p, 1).expect("one split always fits")
}

/// Mean score over `splits` contiguous, near-equal row blocks.
pub fn inception_score_splits<T: Scalar>(p: &ProbMatrix<T>, splits: usize) -> Result<f64> {
    let n = p.n_samples();
    if splits == 0 || splits > n {
        return Err(Error::Invalid(format!(
            "cannot split {n} samples into {splits} parts"
        )));
    }
    let c = p.n_classes();
    let data = p.p.to_f64_vec();
    let rows: Vec<&[f64]> = data.chunks(c).collect();
    let mut total = 0.0;
    for s in 0..splits {
        let (lo, hi) = (s * n / splits, (s + 1) * n / splits);
        total += score_rows(&rows[lo..hi]);
    }
    Ok(total / splits as f64)
}

/// Mean and covariance of a feature cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `F x F`, symmetric.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_tensor(&self) -> Tensor<f64> {
        let f = self.dim();
        Tensor::from_parts(vec![f, f], self.cov.clone()).expect("F x F covariance")
    }
}

/// Sample mean and unbiased covariance of `[N, F]` features, symmetrized.
pub fn gaussian_stats<T: Scalar>(features: &Tensor<T>) -> Result<GaussianStats> {
    if features.rank() != 2 {
        return Err(shape_err!(
            "features must be [N, F], got {:?}",
            features.dims()
        ));
    }
    let (n, f) = (features.dims()[0], features.dims()[1]);
    if n < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    features.check_finite("features")?;
    let x = features.to_f64_vec();
    let mean: Vec<f64> = (0..f)
        .map(|j| (0..n).map(|i| x[i * f + j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; f * f];
    for i in 0..n {
        for a in 0..f {
            let da = x[i * f + a] - mean[a];
            for b in a..f {
                cov[a * f + b] += da * (x[i * f + b] - mean[b]);
            }
        }
    }
    for a in 0..f {
        for b in a..f {
            let v = cov[a * f + b] / (n - 1) as f64;
            cov[a * f + b] = v;
            cov[b * f + a] = v;
        }
    }
    Ok(GaussianStats { mean, cov })
}

/// Squared Fréchet distance between two Gaussians, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.len() != a.dim() * a.dim() || b.cov.len() != b.dim() * b.dim() {
        return Err(shape_err!("Gaussian dimensions {} vs {}", a.dim(), b.dim()));
    }
    let finite = |s: &GaussianStats| s.mean.iter().chain(&s.cov).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::NonFinite(
            "Gaussian statistics contain NaN or Inf".into(),
        ));
    }
    let dm: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let (ca, cb) = (a.cov_tensor(), b.cov_tensor());
    let ra = sqrtm_psd(&ca)?;
    let mid = matmul(&matmul(&ra, &cb)?, &ra)?;
    let mid = symmetrize(&mid);
    let cross = trace(&sqrtm_psd(&mid)?)?;
    let d = dm + trace(&ca)? + trace(&cb)? - 2.0 * cross;
    Ok(d.max(0.0))
}

fn symmetrize<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let n = m.dims()[0];
    let half = T::lit(0.5);
    Tensor::from_fn(&[n, n], |i| {
        (m.data()[i] + m.data()[(i % n) * n + i / n]) * half
    })
}
