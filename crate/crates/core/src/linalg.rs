//! Dense square-matrix helpers: orthonormalization, random orthogonal
//! frames and a symmetric eigensolver. Matrices are `[n, n]` tensors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, transpose, Tensor};

fn square_side<T: Scalar>(m: &Tensor<T>) -> Result<usize> {
    match m.dims() {
        [r, c] if r == c => Ok(*r),
        d => Err(shape_err!("expected a square matrix, got {d:?}")),
    }
}

/// Orthonormalizes the columns in place (modified Gram-Schmidt, two passes).
pub fn orthonormalize_columns<T: Scalar>(m: &mut Tensor<T>) -> Result<()> {
    if m.rank() != 2 {
        return Err(shape_err!("expected a matrix, got {:?}", m.dims()));
    }
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    if cols > rows {
        return Err(shape_err!(
            "cannot orthonormalize {cols} columns of length {rows}"
        ));
    }
    let a = m.data_mut();
    let at = |r: usize, c: usize| r * cols + c;
    for j in 0..cols {
        let original = (0..rows)
            .map(|r| a[at(r, j)] * a[at(r, j)])
            .sum::<T>()
            .sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let dot: T = (0..rows).map(|r| a[at(r, i)] * a[at(r, j)]).sum();
                for r in 0..rows {
                    let v = a[at(r, i)];
                    a[at(r, j)] -= dot * v;
                }
            }
        }
        let norm = (0..rows)
            .map(|r| a[at(r, j)] * a[at(r, j)])
            .sum::<T>()
            .sqrt();
        if !(norm > T::lit(1e-10) * original) || original == T::zero() {
            return Err(Error::Invalid(format!("column {j} is linearly dependent")));
        }
        for r in 0..rows {
            a[at(r, j)] /= norm;
        }
    }
    Ok(())
}

/// Orthonormalized square standard-Gaussian matrix.
pub fn random_orthogonal<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> Tensor<T> {
    loop {
        let mut m = Tensor::from_fn(&[n, n], |_| T::lit(rng.sample(StandardNormal)));
        if orthonormalize_columns(&mut m).is_ok() {
            return m;
        }
    }
}

/// `max |Q^T Q - I|`.
pub fn orthogonality_error<T: Scalar>(q: &Tensor<T>) -> Result<f64> {
    let qtq = matmul(&transpose(q)?, q)?;
    let n = qtq.dims()[0];
    Ok((0..n * n)
        .map(|i| {
            let eye = if i / n == i % n { 1.0 } else { 0.0 };
            (qtq.data()[i].as_f64() - eye).abs()
        })
        .fold(0.0, f64::max))
}

/// Eigenvalues and column eigenvectors of a symmetric matrix by cyclic
/// Jacobi rotations. Eigenvalues are returned in ascending order.
pub fn symmetric_eigen<T: Scalar>(m: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
    let n = square_side(m)?;
    let mut a = m.data().to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = a.iter().map(|x| x.abs()).fold(T::zero(), |p, q| p.max(q));
    let tol = T::epsilon() * T::epsilon() * scale * scale;
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i]
            .partial_cmp(&a[j * n + j])
            .expect("finite eigenvalues")
    });
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Tensor::from_fn(&[n, n], |idx| v[(idx / n) * n + order[idx % n]]);
    Ok((values, vectors))
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative eigenvalues are clamped to zero.
pub fn sqrtm_psd<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_side(m)?;
    let (vals, vecs) = symmetric_eigen(m)?;
    let roots: Vec<T> = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    let vd = Tensor::from_fn(&[n, n], |i| vecs.data()[i] * roots[i % n]);
    matmul(&vd, &transpose(&vecs)?)
}

pub fn trace<T: Scalar>(m: &Tensor<T>) -> Result<T> {
    let n = square_side(m)?;
    Ok((0..n).map(|i| m.data()[i * n + i]).sum())
}
