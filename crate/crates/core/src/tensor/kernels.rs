//! Raw (non-differentiated) kernels over [`Tensor`].

use rayon::prelude::*;

use super::{strides, Shape3d, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

fn video_dims(x: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 5]> {
    match *x.dims() {
        [b, c, t, h, w] => Ok([b, c, t, h, w]),
        _ => Err(shape_err!(
            "{what} expects B x C x T x H x W, got {:?}",
            x.dims()
        )),
    }
}

fn check_factor(f: &Shape3d) -> Result<()> {
    if f.t == 0 || f.h == 0 || f.w == 0 {
        return Err(shape_err!("pooling factor {f} has a zero component"));
    }
    Ok(())
}

/// Averages non-overlapping `factor` blocks of a video batch.
pub fn avg_pool3d<T: Scalar>(x: &Tensor<T>, factor: Shape3d) -> Result<Tensor<T>> {
    let [b, c, t, h, w] = video_dims(x, "avg_pool3d")?;
    check_factor(&factor)?;
    for (axis, n, f) in [("T", t, factor.t), ("H", h, factor.h), ("W", w, factor.w)] {
        if n % f != 0 {
            return Err(shape_err!(
                "avg_pool3d: axis {axis} extent {n} not divisible by {f}"
            ));
        }
    }
    let (ot, oh, ow) = (t / factor.t, h / factor.h, w / factor.w);
    let inv = T::one() / T::from_usize(factor.volume()).unwrap();
    let src = x.data();
    let mut out = vec![T::zero(); b * c * ot * oh * ow];
    for (plane, dst) in out.chunks_mut(ot * oh * ow).enumerate() {
        let base = plane * t * h * w;
        for i in 0..ot {
            for j in 0..oh {
                for k in 0..ow {
                    let mut acc = T::zero();
                    for dt in 0..factor.t {
                        for dh in 0..factor.h {
                            let row = base + ((i * factor.t + dt) * h + j * factor.h + dh) * w;
                            for dw in 0..factor.w {
                                acc += src[row + k * factor.w + dw];
                            }
                        }
                    }
                    dst[(i * oh + j) * ow + k] = acc * inv;
                }
            }
        }
    }
    Tensor::from_parts(vec![b, c, ot, oh, ow], out)
}

/// Nearest-neighbour upscaling: each cell is replicated over a `factor` block.
pub fn upsample_nearest3d<T: Scalar>(x: &Tensor<T>, factor: Shape3d) -> Result<Tensor<T>> {
    let [b, c, t, h, w] = video_dims(x, "upsample_nearest3d")?;
    check_factor(&factor)?;
    let (ot, oh, ow) = (t * factor.t, h * factor.h, w * factor.w);
    let src = x.data();
    let mut out = vec![T::zero(); b * c * ot * oh * ow];
    for (plane, dst) in out.chunks_mut(ot * oh * ow).enumerate() {
        let base = plane * t * h * w;
        for i in 0..ot {
            for j in 0..oh {
                let srow = base + ((i / factor.t) * h + j / factor.h) * w;
                let drow = (i * oh + j) * ow;
                for k in 0..ow {
                    dst[drow + k] = src[srow + k / factor.w];
                }
            }
        }
    }
    Tensor::from_parts(vec![b, c, ot, oh, ow], out)
}

fn kernel_dims(k: &Tensor<impl Scalar>) -> Result<[usize; 5]> {
    match *k.dims() {
        [co, ci, kt, kh, kw] => {
            if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
                return Err(shape_err!(
                    "conv3d kernel extents must be odd, got {:?}",
                    k.dims()
                ));
            }
            Ok([co, ci, kt, kh, kw])
        }
        _ => Err(shape_err!(
            "conv3d kernel must be Cout x Cin x kt x kh x kw, got {:?}",
            k.dims()
        )),
    }
}

/// Valid output index range `[lo, hi)` for kernel tap `d` with centre `p`
/// over an axis of extent `n` under zero "same" padding.
#[inline]
fn tap_range(d: usize, p: usize, n: usize) -> (usize, usize) {
    let lo = p.saturating_sub(d);
    let hi = (n + p).saturating_sub(d).min(n);
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation with zero "same" padding and no bias.
pub fn conv3d_nobias<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, ci, t, h, w] = video_dims(x, "conv3d")?;
    let [co, kci, kt, kh, kw] = kernel_dims(kernel)?;
    if kci != ci {
        return Err(shape_err!(
            "conv3d channel mismatch: input has {ci} channels, kernel expects {kci}"
        ));
    }
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let vol = t * h * w;
    let src = x.data();
    let ker = kernel.data();
    let mut out = vec![T::zero(); b * co * vol];
    out.par_chunks_mut(vol)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (bi, o) = (plane / co, plane % co);
            for c in 0..ci {
                let xin = &src[(bi * ci + c) * vol..(bi * ci + c + 1) * vol];
                let kbase = (o * ci + c) * kt * kh * kw;
                for dt in 0..kt {
                    let (t0, t1) = tap_range(dt, pt, t);
                    for dh in 0..kh {
                        let (h0, h1) = tap_range(dh, ph, h);
                        for dw in 0..kw {
                            let (w0, w1) = tap_range(dw, pw, w);
                            let kv = ker[kbase + (dt * kh + dh) * kw + dw];
                            for ot in t0..t1 {
                                let st = ot + dt - pt;
                                for oh in h0..h1 {
                                    let sh = oh + dh - ph;
                                    let drow = &mut dst[(ot * h + oh) * w..(ot * h + oh) * w + w];
                                    let srow = &xin[(st * h + sh) * w..(st * h + sh) * w + w];
                                    for ow in w0..w1 {
                                        drow[ow] += kv * srow[ow + dw - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_parts(vec![b, co, t, h, w], out)
}

/// Cross-correlation plus per-output-channel bias.
pub fn conv3d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let co = kernel.dims().first().copied().unwrap_or(0);
    if bias.dims() != [co] {
        return Err(shape_err!(
            "conv3d bias must be [{co}], got {:?}",
            bias.dims()
        ));
    }
    let mut y = conv3d_nobias(x, kernel)?;
    let vol: usize = y.dims()[2..].iter().product();
    let bs = bias.data();
    for (plane, chunk) in y.data_mut().chunks_mut(vol).enumerate() {
        let bv = bs[plane % co];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
    Ok(y)
}

/// Gradient of a bias-free [`conv3d_nobias`] with respect to its kernel:
/// `out[o, c, k] = sum_{b, p} g[b, o, p] * x[b, c, p + k - centre]`.
pub fn conv3d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    ksize: [usize; 3],
) -> Result<Tensor<T>> {
    let [b, ci, t, h, w] = video_dims(x, "conv3d_weight_grad")?;
    let [gb, co, gt, gh, gw] = video_dims(g, "conv3d_weight_grad")?;
    if gb != b || (gt, gh, gw) != (t, h, w) {
        return Err(shape_err!(
            "conv3d_weight_grad: input {:?} and cotangent {:?} disagree",
            x.dims(),
            g.dims()
        ));
    }
    let [kt, kh, kw] = ksize;
    if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err!("kernel extents must be odd, got {ksize:?}"));
    }
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let vol = t * h * w;
    let kvol = kt * kh * kw;
    let xs = x.data();
    let gs = g.data();
    let mut out = vec![T::zero(); co * ci * kvol];
    out.par_chunks_mut(ci * kvol)
        .enumerate()
        .for_each(|(o, dst)| {
            for c in 0..ci {
                for dt in 0..kt {
                    let (t0, t1) = tap_range(dt, pt, t);
                    for dh in 0..kh {
                        let (h0, h1) = tap_range(dh, ph, h);
                        for dw in 0..kw {
                            let (w0, w1) = tap_range(dw, pw, w);
                            let mut acc = T::zero();
                            for bi in 0..b {
                                let gp = &gs[(bi * co + o) * vol..(bi * co + o + 1) * vol];
                                let xp = &xs[(bi * ci + c) * vol..(bi * ci + c + 1) * vol];
                                for ot in t0..t1 {
                                    let st = ot + dt - pt;
                                    for oh in h0..h1 {
                                        let sh = oh + dh - ph;
                                        let grow = &gp[(ot * h + oh) * w..(ot * h + oh + 1) * w];
                                        let xrow = &xp[(st * h + sh) * w..(st * h + sh + 1) * w];
                                        for ow in w0..w1 {
                                            acc += grow[ow] * xrow[ow + dw - pw];
                                        }
                                    }
                                }
                            }
                            dst[c * kvol + (dt * kh + dh) * kw + dw] = acc;
                        }
                    }
                }
            }
        });
    Tensor::from_parts(vec![co, ci, kt, kh, kw], out)
}

/// Swaps the two channel axes of a kernel and reverses its taps; the
/// adjoint of a "same" convolution is the convolution with this kernel.
pub fn flip_swap_kernel<T: Scalar>(k: &Tensor<T>) -> Result<Tensor<T>> {
    let [co, ci, kt, kh, kw] = kernel_dims(k)?;
    let kvol = kt * kh * kw;
    let src = k.data();
    let mut out = vec![T::zero(); co * ci * kvol];
    for o in 0..co {
        for c in 0..ci {
            let s = &src[(o * ci + c) * kvol..(o * ci + c + 1) * kvol];
            let d = &mut out[(c * co + o) * kvol..(c * co + o + 1) * kvol];
            for (i, v) in s.iter().enumerate() {
                d[kvol - 1 - i] = *v;
            }
        }
    }
    Tensor::from_parts(vec![ci, co, kt, kh, kw], out)
}

/// `[M, K] x [K, N] -> [M, N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = match *a.dims() {
        [m, k] => (m, k),
        _ => return Err(shape_err!("matmul lhs must be rank 2, got {:?}", a.dims())),
    };
    let n = match *b.dims() {
        [k2, n] if k2 == k => n,
        _ => {
            return Err(shape_err!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                a.dims(),
                b.dims()
            ))
        }
    };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match *a.dims() {
        [m, n] => (m, n),
        _ => return Err(shape_err!("transpose expects rank 2, got {:?}", a.dims())),
    };
    let d = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// Affine map on rows: `x . w^T + b` for `x: [B, N]`, `w: [M, N]`, `b: [M]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match *w.dims() {
        [m, n] => (m, n),
        _ => {
            return Err(shape_err!(
                "dense weight must be [M, N], got {:?}",
                w.dims()
            ))
        }
    };
    if x.rank() != 2 || x.dims()[1] != n {
        return Err(shape_err!(
            "dense input {:?} does not match weight {:?}",
            x.dims(),
            w.dims()
        ));
    }
    if b.dims() != [m] {
        return Err(shape_err!("dense bias must be [{m}], got {:?}", b.dims()));
    }
    let mut y = matmul(x, &transpose(w)?)?;
    for row in y.data_mut().chunks_mut(m) {
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Elementwise `max(x, slope * x)`; at 0 the positive branch is taken.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Stable ascending argsort of a slice.
pub fn argsort_stable<T: Scalar>(x: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite values"));
    idx
}

/// Sorts a 1-D tensor ascending; ties keep their original relative order.
pub fn sort_values<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 {
        return Err(shape_err!(
            "sort_values expects a 1-D tensor, got {:?}",
            x.dims()
        ));
    }
    let perm = argsort_stable(x.data());
    Tensor::from_parts(
        x.dims().to_vec(),
        perm.iter().map(|&i| x.data()[i]).collect(),
    )
}

/// Stable argsort of every column of `[N]` or `[N, K]` along axis 0.
/// Returns one permutation per column: `sorted[i, j] = x[perm[j][i], j]`.
pub fn column_argsort<T: Scalar>(x: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
    let (n, k) = match *x.dims() {
        [n] => (n, 1),
        [n, k] => (n, k),
        _ => {
            return Err(shape_err!(
                "column sort expects rank 1 or 2, got {:?}",
                x.dims()
            ))
        }
    };
    let d = x.data();
    Ok((0..k)
        .map(|j| {
            let col: Vec<T> = (0..n).map(|i| d[i * k + j]).collect();
            argsort_stable(&col)
        })
        .collect())
}

/// Applies per-column row permutations produced by [`column_argsort`].
/// With `inverse` the scatter `out[perm[j][i], j] = x[i, j]` is used instead.
pub fn permute_columns<T: Scalar>(x: &Tensor<T>, perms: &[Vec<usize>], inverse: bool) -> Tensor<T> {
    let k = perms.len();
    let n = x.len() / k;
    let d = x.data();
    let mut out = vec![T::zero(); n * k];
    for (j, p) in perms.iter().enumerate() {
        for i in 0..n {
            if inverse {
                out[p[i] * k + j] = d[i * k + j];
            } else {
                out[i * k + j] = d[p[i] * k + j];
            }
        }
    }
    Tensor::from_parts(x.dims().to_vec(), out).expect("same dims")
}

/// Sums over `axes`, keeping them as extent-1 axes.
pub fn reduce_sum<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    if let Some(&a) = axes.iter().find(|&&a| a >= x.rank()) {
        return Err(shape_err!(
            "reduce axis {a} out of range for {:?}",
            x.dims()
        ));
    }
    let out_dims: Vec<usize> = x
        .dims()
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let ostr = strides(&out_dims);
    let n_out: usize = out_dims.iter().product();
    let mut out = vec![T::zero(); n_out];
    let dims = x.dims();
    let mut idx = vec![0usize; dims.len()];
    for &v in x.data() {
        let mut off = 0;
        for a in 0..dims.len() {
            if out_dims[a] != 1 {
                off += idx[a] * ostr[a];
            }
        }
        out[off] += v;
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::from_parts(out_dims, out)
}

/// Replicates extent-1 axes of `x` up to `dims` (ranks must agree).
pub fn broadcast_to<T: Scalar>(x: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    if x.rank() != dims.len() || x.dims().iter().zip(dims).any(|(&a, &b)| a != b && a != 1) {
        return Err(shape_err!("cannot broadcast {:?} to {:?}", x.dims(), dims));
    }
    let istr = strides(x.dims());
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    let src = x.data();
    for _ in 0..n {
        let mut off = 0;
        for a in 0..dims.len() {
            if x.dims()[a] != 1 {
                off += idx[a] * istr[a];
            }
        }
        out.push(src[off]);
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::from_parts(dims.to_vec(), out)
}

fn outer_inner(dims: &[usize], axis: usize) -> (usize, usize) {
    (
        dims[..axis].iter().product(),
        dims[axis + 1..].iter().product(),
    )
}

/// `len` entries of `axis` starting at `start`.
pub fn slice_axis<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() || len == 0 || start + len > x.dims()[axis] {
        return Err(shape_err!(
            "slice [{start}, {}) of axis {axis} out of range for {:?}",
            start + len,
            x.dims()
        ));
    }
    let (outer, inner) = outer_inner(x.dims(), axis);
    let n = x.dims()[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Tensor::from_parts(dims, out)
}

/// Zero-pads `axis` with `before` and `after` entries.
pub fn pad_axis<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    before: usize,
    after: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(shape_err!(
            "pad axis {axis} out of range for {:?}",
            x.dims()
        ));
    }
    let (outer, inner) = outer_inner(x.dims(), axis);
    let n = x.dims()[axis];
    let m = before + n + after;
    let mut out = vec![T::zero(); outer * m * inner];
    for o in 0..outer {
        let s = o * n * inner;
        let d = (o * m + before) * inner;
        out[d..d + n * inner].copy_from_slice(&x.data()[s..s + n * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = m;
    Tensor::from_parts(dims, out)
}

/// Joins two tensors along `axis`; all other extents must match.
pub fn concat_axis<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let ok = a.rank() == b.rank()
        && axis < a.rank()
        && a.dims()
            .iter()
            .zip(b.dims())
            .enumerate()
            .all(|(i, (x, y))| i == axis || x == y);
    if !ok {
        return Err(shape_err!(
            "cannot concat {:?} and {:?} on axis {axis}",
            a.dims(),
            b.dims()
        ));
    }
    let (outer, inner) = outer_inner(a.dims(), axis);
    let (na, nb) = (a.dims()[axis], b.dims()[axis]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * na * inner..(o + 1) * na * inner]);
        out.extend_from_slice(&b.data()[o * nb * inner..(o + 1) * nb * inner]);
    }
    let mut dims = a.dims().to_vec();
    dims[axis] = na + nb;
    Tensor::from_parts(dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [bn, ci, t, h, w] = <[usize; 5]>::try_from(x.dims()).unwrap();
        let [co, _, kt, kh, kw] = <[usize; 5]>::try_from(k.dims()).unwrap();
        let mut out = Tensor::zeros(&[bn, co, t, h, w]);
        let ostr = out.strides();
        for n in 0..bn {
            for o in 0..co {
                for a in 0..t {
                    for p in 0..h {
                        for q in 0..w {
                            let mut s = b.data()[o];
                            for c in 0..ci {
                                for i in 0..kt {
                                    for j in 0..kh {
                                        for l in 0..kw {
                                            let st = a as isize + i as isize - (kt / 2) as isize;
                                            let sh = p as isize + j as isize - (kh / 2) as isize;
                                            let sw = q as isize + l as isize - (kw / 2) as isize;
                                            if st < 0 || sh < 0 || sw < 0 {
                                                continue;
                                            }
                                            let (st, sh, sw) =
                                                (st as usize, sh as usize, sw as usize);
                                            if st >= t || sh >= h || sw >= w {
                                                continue;
                                            }
                                            s += k.get(&[o, c, i, j, l])
                                                * x.get(&[n, c, st, sh, sw]);
                                        }
                                    }
                                }
                            }
                            let off = n * ostr[0] + o * ostr[1] + a * ostr[2] + p * ostr[3] + q;
                            out.data_mut()[off] = s;
                        }
                    }
                }
            }
        }
        out
    }

    fn naive_pool(x: &Tensor<f64>, f: Shape3d) -> Tensor<f64> {
        let [bn, c, t, h, w] = <[usize; 5]>::try_from(x.dims()).unwrap();
        let dims = [bn, c, t / f.t, h / f.h, w / f.w];
        let mut out = Tensor::zeros(&dims);
        let ostr = out.strides();
        for n in 0..bn {
            for ch in 0..c {
                for a in 0..dims[2] {
                    for p in 0..dims[3] {
                        for q in 0..dims[4] {
                            let mut s = 0.0;
                            for i in 0..f.t {
                                for j in 0..f.h {
                                    for l in 0..f.w {
                                        s += x.get(&[n, ch, a * f.t + i, p * f.h + j, q * f.w + l]);
                                    }
                                }
                            }
                            let off = n * ostr[0] + ch * ostr[1] + a * ostr[2] + p * ostr[3] + q;
                            out.data_mut()[off] = s / f.volume() as f64;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pool_constant_and_hand_example() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 4, 4], 3.0);
        let y = avg_pool3d(&x, Shape3d::cube(2)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.0));

        let x = Tensor::<f64>::new(vec![1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let y = avg_pool3d(&x, Shape3d { t: 1, h: 2, w: 2 }).unwrap();
        assert_eq!(y.data(), &[2.75]);

        let r = rand_tensor(&[2, 2, 2, 4, 2], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(avg_pool3d(&r, Shape3d::UNIT).unwrap(), r);
    }

    #[test]
    fn pool_rejects_indivisible_axis() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4, 4]);
        let err = avg_pool3d(&x, Shape3d::cube(2)).unwrap_err().to_string();
        assert!(err.contains("axis T"), "{err}");
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1, 1], 7.0);
        let y = upsample_nearest3d(&x, Shape3d::cube(2)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        let r = rand_tensor(&[1, 2, 2, 3, 2], &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(upsample_nearest3d(&r, Shape3d::UNIT).unwrap(), r);
    }

    #[test]
    fn conv_identity_constant_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[2, 1, 3, 3, 3], &mut rng);
        let k = Tensor::<f64>::ones(&[1, 1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert_eq!(conv3d(&x, &k, &b).unwrap(), x);

        let ones = Tensor::<f64>::ones(&[1, 1, 3, 3, 3]);
        let k3 = Tensor::<f64>::ones(&[1, 1, 3, 3, 3]);
        let y = conv3d(&ones, &k3, &b).unwrap();
        assert_eq!(y.get(&[0, 0, 1, 1, 1]), 27.0);
        assert_eq!(y.get(&[0, 0, 0, 0, 0]), 8.0);

        let z = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        let bb = Tensor::<f64>::scalar(0.25);
        let y = conv3d(&x, &z, &bb).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 3, 3, 3, 3]);
        assert!(conv3d(&x, &k, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn matmul_and_dense_against_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[3, 4], &mut rng);
        let w = rand_tensor(&[5, 4], &mut rng);
        let b = rand_tensor(&[5], &mut rng);
        let y = dense(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = b.data()[j];
                for k in 0..4 {
                    s += x.get(&[i, k]) * w.get(&[j, k]);
                }
                assert!((y.get(&[i, j]) - s).abs() < 1e-12);
            }
        }
        let eye = Tensor::<f64>::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
        let y0 = dense(&x, &Tensor::zeros(&[5, 4]), &b).unwrap();
        for i in 0..3 {
            assert_eq!(y0.row(i), b.data());
        }
        assert!(dense(&x, &Tensor::zeros(&[5, 3]), &b).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f64>::new(vec![3], vec![2.0, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).data(), &[2.0, -0.2, 0.0]);
        assert_eq!(leaky_relu(&x, 0.0).data()[0], 2.0);
    }

    #[test]
    fn sort_examples() {
        let x = Tensor::<f64>::new(vec![3], vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(sort_values(&x).unwrap().data(), &[1.0, 2.0, 3.0]);
        let s = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sort_values(&s).unwrap(), s);
        assert_eq!(argsort_stable(&[1.0, 0.0, 1.0, 0.0]), vec![1, 3, 0, 2]);
    }

    fn insertion_sort(v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &x in v {
            let mut i = out.len();
            while i > 0 && out[i - 1] > x {
                i -= 1;
            }
            out.insert(i, x);
        }
        out
    }

    #[test]
    fn slice_pad_concat_reduce_broadcast() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64);
        let s = slice_axis(&x, 1, 1, 2).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(s.get(&[1, 0, 1]), x.get(&[1, 1, 1]));
        let p = pad_axis(&s, 1, 1, 0).unwrap();
        assert_eq!(p.dims(), &[2, 3, 2]);
        assert_eq!(p.get(&[0, 0, 0]), 0.0);
        assert_eq!(p.get(&[1, 2, 1]), x.get(&[1, 2, 1]));
        let c = concat_axis(&slice_axis(&x, 1, 0, 1).unwrap(), &s, 1).unwrap();
        assert_eq!(c, x);
        let r = reduce_sum(&x, &[0, 2]).unwrap();
        assert_eq!(r.dims(), &[1, 3, 1]);
        assert_eq!(
            r.data(),
            &[
                0.0 + 1.0 + 6.0 + 7.0,
                2.0 + 3.0 + 8.0 + 9.0,
                4.0 + 5.0 + 10.0 + 11.0
            ]
        );
        let b = broadcast_to(&r, &[2, 3, 2]).unwrap();
        assert_eq!(b.get(&[1, 2, 1]), r.data()[2]);
        assert!(broadcast_to(&x, &[2, 3, 3]).is_err());
    }

    #[test]
    fn flip_swap_is_involution() {
        let k = rand_tensor(&[2, 3, 3, 1, 3], &mut ChaCha8Rng::seed_from_u64(5));
        let f = flip_swap_kernel(&k).unwrap();
        assert_eq!(f.dims(), &[3, 2, 3, 1, 3]);
        assert_eq!(flip_swap_kernel(&f).unwrap(), k);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conv_matches_naive(seed in 0u64..1000, b in 1usize..3, ci in 1usize..3, co in 1usize..3,
                              t in 1usize..5, h in 1usize..6, w in 1usize..6, k3 in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ks = if k3 { 3 } else { 1 };
            let x = rand_tensor(&[b, ci, t, h, w], &mut rng);
            let k = rand_tensor(&[co, ci, ks, ks, ks], &mut rng);
            let bias = rand_tensor(&[co], &mut rng);
            let fast = conv3d(&x, &k, &bias).unwrap();
            let slow = naive_conv(&x, &k, &bias);
            prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
        }

        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, c in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&[1, 2, 3, 4, 3], &mut rng);
            let y = rand_tensor(&[1, 2, 3, 4, 3], &mut rng);
            let k = rand_tensor(&[2, 2, 3, 3, 3], &mut rng);
            let lhs = conv3d_nobias(&x.scale(a).add(&y.scale(c)).unwrap(), &k).unwrap();
            let rhs = conv3d_nobias(&x, &k).unwrap().scale(a).add(&conv3d_nobias(&y, &k).unwrap().scale(c)).unwrap();
            let scale = rhs.norm().max(1.0);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * scale);
        }

        #[test]
        fn weight_grad_is_adjoint(seed in 0u64..1000) {
            // <conv(x, k), g> == <k, weight_grad(x, g)>
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&[2, 2, 3, 4, 2], &mut rng);
            let k = rand_tensor(&[3, 2, 3, 3, 1], &mut rng);
            let g = rand_tensor(&[2, 3, 3, 4, 2], &mut rng);
            let lhs = conv3d_nobias(&x, &k).unwrap().dot(&g).unwrap();
            let rhs = k.dot(&conv3d_weight_grad(&x, &g, [3, 3, 1]).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
            // <conv(x, k), g> == <x, conv(g, flip_swap(k))>
            let rhs2 = x.dot(&conv3d_nobias(&g, &flip_swap_kernel(&k).unwrap()).unwrap()).unwrap();
            prop_assert!((lhs - rhs2).abs() < 1e-10);
        }

        #[test]
        fn pool_matches_naive_and_roundtrips(seed in 0u64..1000, ft in 1usize..3, fh in 1usize..3, fw in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Shape3d { t: ft, h: fh, w: fw };
            let x = rand_tensor(&[2, 2, 2 * ft, 3 * fh, 2 * fw], &mut rng);
            let p = avg_pool3d(&x, f).unwrap();
            prop_assert!(p.max_abs_diff(&naive_pool(&x, f)) <= 1e-12);
            let small = rand_tensor(&[1, 2, 2, 3, 2], &mut rng);
            let back = avg_pool3d(&upsample_nearest3d(&small, f).unwrap(), f).unwrap();
            prop_assert!(back.max_abs_diff(&small) <= 1e-15);
        }

        #[test]
        fn pool_upsample_pool_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Shape3d::cube(2);
            let x = rand_tensor(&[1, 2, 4, 4, 4], &mut rng);
            let once = avg_pool3d(&x, f).unwrap();
            let twice = avg_pool3d(&upsample_nearest3d(&once, f).unwrap(), f).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-15);
        }

        #[test]
        fn sort_matches_insertion_sort(v in proptest::collection::vec(-5i32..5, 1..40)) {
            let xs: Vec<f64> = v.iter().map(|&i| i as f64 * 0.5).collect();
            let t = Tensor::<f64>::new(vec![xs.len()], xs.clone()).unwrap();
            prop_assert_eq!(sort_values(&t).unwrap().data().to_vec(), insertion_sort(&xs));
        }

        #[test]
        fn column_permutation_roundtrip(seed in 0u64..1000, n in 1usize..10, k in 1usize..4) {
            let x = rand_tensor(&[n, k], &mut ChaCha8Rng::seed_from_u64(seed));
            let p = column_argsort(&x).unwrap();
            let s = permute_columns(&x, &p, false);
            for j in 0..k {
                for i in 1..n {
                    prop_assert!(s.get(&[i - 1, j]) <= s.get(&[i, j]));
                }
            }
            prop_assert_eq!(permute_columns(&s, &p, true), x);
        }
    }
}
