//! Reference kernels, generic over f32/f64.
//!
//! Every loop nest has a fixed iteration order (row-major outputs, ascending
//! reduction index), so results are bit-deterministic for a given scalar
//! type, and the C backend can reproduce them exactly by emitting the same
//! order. No blocking, no SIMD — these are the semantic ground truth the
//! optimized paths are tested against.

use num_traits::Float;

/// Scalar type the interpreter runs on. FP32 mirrors the device; FP64 exists
/// for the finite-difference oracle.
pub trait Scalar: Float + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64_val(self) -> f64;
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_val(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

/// `out[M,N] = op(a) · op(b) (+ bias)` with optional transposes. `a` is
/// stored row-major with `a_rows`×`a_cols`; `trans_a` selects the logical
/// transpose. Accumulation over `k` ascending.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    a: &[T],
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_cols: usize,
    trans_b: bool,
    bias: Option<&[T]>,
    m: usize,
    n: usize,
    k: usize,
    out: &mut [T],
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                let av = if trans_a {
                    a[p * a_cols + i]
                } else {
                    a[i * a_cols + p]
                };
                let bv = if trans_b {
                    b[p + j * b_cols]
                } else {
                    b[p * b_cols + j]
                };
                acc = acc + av * bv;
            }
            if let Some(bias) = bias {
                acc = acc + bias[j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Unfold `x [N,C,H,W]` into the patch matrix `col [C·k², N·Ho·Wo]`.
/// Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    col: &mut [T],
) {
    let ho = (h + 2 * padding - kernel) / stride + 1;
    let wo = (w + 2 * padding - kernel) / stride + 1;
    let cols = n * ho * wo;
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                for ni in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            let col_idx = row * cols + (ni * ho + oy) * wo + ox;
                            col[col_idx] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                x[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `dcol [C·k², N·Ho·Wo]` back into
/// `dx [N,C,H,W]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    dcol: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dx: &mut [T],
) {
    let ho = (h + 2 * padding - kernel) / stride + 1;
    let wo = (w + 2 * padding - kernel) / stride + 1;
    let cols = n * ho * wo;
    for v in dx.iter_mut() {
        *v = T::zero();
    }
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                for ni in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                let xi = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                dx[xi] = dx[xi] + dcol[row * cols + (ni * ho + oy) * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling with implicit `-inf` padding; window scanned row-major so the
/// first maximum wins ties (the backward pass repeats the same scan).
#[allow(clippy::too_many_arguments)]
pub fn maxpool<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [T],
) {
    let ho = (h + 2 * padding - kernel) / stride + 1;
    let wo = (w + 2 * padding - kernel) / stride + 1;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    for ki in 0..kernel {
                        for kj in 0..kernel {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                let v = x[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                    }
                    out[((ni * c + ci) * ho + oy) * wo + ox] = best;
                }
            }
        }
    }
}

/// Route `dy` to the first-maximum position of each window (matches
/// [`maxpool`]'s tie rule); overlapping windows accumulate.
#[allow(clippy::too_many_arguments)]
pub fn maxpool_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dx: &mut [T],
) {
    let ho = (h + 2 * padding - kernel) / stride + 1;
    let wo = (w + 2 * padding - kernel) / stride + 1;
    for v in dx.iter_mut() {
        *v = T::zero();
    }
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = None;
                    for ki in 0..kernel {
                        for kj in 0..kernel {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                let idx = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = Some(idx);
                                }
                            }
                        }
                    }
                    if let Some(idx) = best_idx {
                        dx[idx] = dx[idx] + dy[((ni * c + ci) * ho + oy) * wo + ox];
                    }
                }
            }
        }
    }
}

pub fn relu<T: Scalar>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

/// Subgradient choice at zero: `relu'(0) = 0`.
pub fn relu_backward<T: Scalar>(x: &[T], dy: &[T], dx: &mut [T]) {
    for i in 0..dx.len() {
        dx[i] = if x[i] > T::zero() { dy[i] } else { T::zero() };
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// tanh-approximation GELU.
pub fn gelu<T: Scalar>(x: &[T], out: &mut [T]) {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    for (o, &v) in out.iter_mut().zip(x) {
        let u = c * (v + a * v * v * v);
        *o = half * v * (T::one() + u.tanh());
    }
}

/// Exact analytic derivative of the tanh approximation (not the erf form).
pub fn gelu_backward<T: Scalar>(x: &[T], dy: &[T], dx: &mut [T]) {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    for i in 0..dx.len() {
        let v = x[i];
        let u = c * (v + a * v * v * v);
        let t = u.tanh();
        let sech2 = T::one() - t * t;
        let du = c * (T::one() + three * a * v * v);
        let g = half * (T::one() + t) + half * v * sech2 * du;
        dx[i] = dy[i] * g;
    }
}

/// Numerically-stable softmax along `axis` of `shape`.
pub fn softmax<T: Scalar>(x: &[T], shape: &[usize], axis: usize, out: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                let v = x[base + j * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum = sum + e;
            }
            for j in 0..len {
                out[base + j * inner] = out[base + j * inner] / sum;
            }
        }
    }
}

/// `dx = (dy - <dy, y>) * y` along `axis`, with `y` the forward output.
pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], shape: &[usize], axis: usize, dx: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot = dot + dy[base + j * inner] * y[base + j * inner];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = (dy[idx] - dot) * y[idx];
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// LayerNorm over the last axis with affine parameters.
pub fn layernorm<T: Scalar>(x: &[T], d: usize, gamma: &[T], beta: &[T], eps: f64, out: &mut [T]) {
    let eps = T::from_f64(eps);
    let rows = x.len() / d;
    let dn = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = T::zero();
        for &v in row {
            var = var + (v - mean) * (v - mean);
        }
        var = var / dn;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
    }
}

/// Input gradient of [`layernorm`]; statistics recomputed from `x`.
pub fn layernorm_backward<T: Scalar>(
    x: &[T],
    d: usize,
    gamma: &[T],
    dy: &[T],
    eps: f64,
    dx: &mut [T],
) {
    let eps = T::from_f64(eps);
    let rows = x.len() / d;
    let dn = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = T::zero();
        for &v in row {
            var = var + (v - mean) * (v - mean);
        }
        var = var / dn;
        let rstd = T::one() / (var + eps).sqrt();
        // dxhat, plus the two row means that correct for mean/variance paths.
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dy[r * d + j] * gamma[j];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
        }
        let m1 = sum_dxhat / dn;
        let m2 = sum_dxhat_xhat / dn;
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dy[r * d + j] * gamma[j];
            dx[r * d + j] = (dxhat - m1 - xhat * m2) * rstd;
        }
    }
}

/// Affine-parameter gradients of [`layernorm`].
pub fn layernorm_param_backward<T: Scalar>(
    x: &[T],
    d: usize,
    dy: &[T],
    eps: f64,
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let eps = T::from_f64(eps);
    let rows = x.len() / d;
    let dn = T::from_f64(d as f64);
    for j in 0..d {
        dgamma[j] = T::zero();
        dbeta[j] = T::zero();
    }
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = T::zero();
        for &v in row {
            var = var + (v - mean) * (v - mean);
        }
        var = var / dn;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            dgamma[j] = dgamma[j] + dy[r * d + j] * xhat;
            dbeta[j] = dbeta[j] + dy[r * d + j];
        }
    }
}

/// Mean cross-entropy over the batch from raw logits and one-hot labels,
/// via stable log-softmax.
pub fn cross_entropy<T: Scalar>(logits: &[T], onehot: &[T], batch: usize, classes: usize) -> T {
    let mut loss = T::zero();
    for b in 0..batch {
        let row = &logits[b * classes..(b + 1) * classes];
        let mut max = T::neg_infinity();
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for &v in row {
            sum = sum + (v - max).exp();
        }
        let lse = max + sum.ln();
        for c in 0..classes {
            let p = onehot[b * classes + c];
            if p != T::zero() {
                loss = loss - p * (row[c] - lse);
            }
        }
    }
    loss / T::from_f64(batch as f64)
}

/// Fused loss gradient: `(softmax(logits) - onehot) / batch`.
pub fn cross_entropy_backward<T: Scalar>(
    logits: &[T],
    onehot: &[T],
    batch: usize,
    classes: usize,
    dlogits: &mut [T],
) {
    let bn = T::from_f64(batch as f64);
    for b in 0..batch {
        let row = &logits[b * classes..(b + 1) * classes];
        let mut max = T::neg_infinity();
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for &v in row {
            sum = sum + (v - max).exp();
        }
        for c in 0..classes {
            let p = (row[c] - max).exp() / sum;
            dlogits[b * classes + c] = (p - onehot[b * classes + c]) / bn;
        }
    }
}

/// General permutation copy.
pub fn transpose<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize], out: &mut [T]) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut idx = vec![0usize; rank];
    for o in out.iter_mut() {
        let mut src = 0;
        for (i, &ii) in idx.iter().enumerate() {
            src += ii * in_strides[perm[i]];
        }
        *o = x[src];
        // Row-major increment over the output index space.
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < out_shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
}

/// Copy `x` into a slice of itself along `axis`: `out = x[.., start..end, ..]`.
pub fn slice<T: Scalar>(x: &[T], shape: &[usize], axis: usize, start: usize, end: usize, out: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    let width = end - start;
    for o in 0..outer {
        for j in 0..width {
            let src = (o * len + start + j) * inner;
            let dst = (o * width + j) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
}

/// Adjoint of [`slice`]: embed `x` into zeros of `size` along `axis` at
/// offset `start`.
pub fn pad<T: Scalar>(x: &[T], shape: &[usize], axis: usize, start: usize, size: usize, out: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for o in 0..outer {
        for j in 0..len {
            let src = (o * len + j) * inner;
            let dst = (o * size + start + j) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
}

/// Column-sum style reduction: sum `dy` over every axis except `axis`.
pub fn bias_backward<T: Scalar>(dy: &[T], shape: &[usize], axis: usize, db: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for v in db.iter_mut() {
        *v = T::zero();
    }
    for o in 0..outer {
        for j in 0..len {
            for i in 0..inner {
                db[j] = db[j] + dy[(o * len + j) * inner + i];
            }
        }
    }
}
