//! Dense row-major n-dimensional arrays and the raw numeric kernels.
//!
//! Video tensors use the layout `B x C x T x H x W`.

mod io;
mod kernels;

pub use io::{
    read_csv_matrix, read_matrix_file, read_pvt1, read_pvt1_file, write_pvt1, write_pvt1_file,
};
pub use kernels::*;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from literal data, rejecting zero extents, length
    /// mismatches and non-finite elements.
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let t = Self::from_parts(dims, data)?;
        t.check_finite("tensor literal")?;
        Ok(t)
    }

    /// Like [`Tensor::new`] without the finiteness scan.
    pub fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(shape_err!("zero extent in {:?}", dims));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "dims {:?} need {} elements, got {}",
                dims,
                n,
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    /// A one-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the elements; the extents stay fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of dims {:?}",
            self.dims
        );
        self.data[0]
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    pub fn get(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.dims.len());
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.dims).enumerate() {
            assert!(ix < d, "index {ix} out of range for axis {i} (extent {d})");
            off = off * d + ix;
        }
        self.data[off]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.len() || dims.contains(&0) {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.dims, dims));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "elementwise operands differ: {:?} vs {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len()).unwrap()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(shape_err!("dot of {:?} and {:?}", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} of {:?} is {}",
                self.dims, self.data[i]
            ))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        assert_eq!(self.rank(), 2);
        let n = self.dims[1];
        &self.data[i * n..(i + 1) * n]
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Temporal and spatial extents of a video (frames, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3d {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3d {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(shape_err!("extents must be positive, got {t}x{h}x{w}"));
        }
        Ok(Self { t, h, w })
    }

    pub const fn cube(n: usize) -> Self {
        Self { t: n, h: n, w: n }
    }

    pub const UNIT: Shape3d = Shape3d { t: 1, h: 1, w: 1 };

    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn from_array(a: [usize; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn mul(&self, f: &Shape3d) -> Shape3d {
        Shape3d {
            t: self.t * f.t,
            h: self.h * f.h,
            w: self.w * f.w,
        }
    }

    /// Per-axis ratio `self / lower`, if every axis divides exactly.
    pub fn ratio_over(&self, lower: &Shape3d) -> Option<Shape3d> {
        let div = |a: usize, b: usize| a.is_multiple_of(b).then(|| a / b);
        Some(Shape3d {
            t: div(self.t, lower.t)?,
            h: div(self.h, lower.h)?,
            w: div(self.w, lower.w)?,
        })
    }
}

impl std::fmt::Display for Shape3d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}
