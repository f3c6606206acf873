//! Dense kernels: matrix products, direct convolution, pooling, activations
//! and a single-head attention forward pass.
//!
//! Every reduction accumulates in ascending index order starting from zero so
//! that a prefix of a reduction is itself reproducible bit-for-bit. The
//! pruning engine relies on this to compare pruned and unpruned paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl Conv2dGeometry {
    /// `floor((input + 2*padding - kernel) / stride) + 1`, rejecting empty outputs.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("convolution stride must be at least 1".into()));
        }
        let padded = input + 2 * self.padding;
        if kernel == 0 || kernel > padded {
            return Err(Error::Shape(format!(
                "kernel extent {kernel} does not fit padded input extent {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// `out[i] = sum_j w[i, j] * x[j]`.
pub fn matmul<T: Real>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match w.shape() {
        &[m, n] => (m, n),
        other => {
            return Err(Error::Shape(format!(
                "matmul expects a matrix, got shape {other:?}"
            )))
        }
    };
    if x.shape() != [n] {
        return Err(Error::Shape(format!(
            "matmul inner extents disagree: {:?} x {:?}",
            w.shape(),
            x.shape()
        )));
    }
    let xs = x.data();
    let out = w
        .data()
        .chunks_exact(n)
        .map(|row| dot(row, xs))
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), m);
    Tensor::vector(out)
}

/// Matrix-matrix product `a[m×n] · b[n×p]`.
pub fn matmul_mat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n, p) = match (a.shape(), b.shape()) {
        (&[m, n], &[n2, p]) if n == n2 => (m, n, p),
        (sa, sb) => {
            return Err(Error::Shape(format!(
                "matrix product extents disagree: {sa:?} x {sb:?}"
            )))
        }
    };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = T::zero();
            for t in 0..n {
                acc += ad[i * n + t] * bd[t * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    Tensor::new(vec![m, p], out)
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match a.shape() {
        &[m, n] => (m, n),
        other => return Err(Error::Shape(format!("cannot transpose {other:?}"))),
    };
    let d = a.data();
    Tensor::from_fn(vec![n, m], |idx| {
        let (j, i) = (idx / m, idx % m);
        d[i * n + j]
    })
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Contribution of one input-channel plane to one output pixel:
/// the tap sum over the `kh × kw` window, skipping padded positions.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn channel_tap_sum<T: Real>(
    plane: &[T],
    (h, w): (usize, usize),
    taps: &[T],
    (kh, kw): (usize, usize),
    (oy, ox): (usize, usize),
    geom: Conv2dGeometry,
) -> T {
    let mut acc = T::zero();
    let (p, y0, x0) = (geom.padding, oy * geom.stride, ox * geom.stride);
    // Taps that land inside the plane, in the same row-major order as the kernel.
    let (r_lo, r_hi) = (p.saturating_sub(y0), kh.min((h + p).saturating_sub(y0)));
    let (c_lo, c_hi) = (p.saturating_sub(x0), kw.min((w + p).saturating_sub(x0)));
    for r in r_lo..r_hi {
        let iy = y0 + r - p;
        let row = &plane[iy * w + x0 + c_lo - p..iy * w + x0 + c_hi - p];
        let trow = &taps[r * kw + c_lo..r * kw + c_hi];
        for (&x, &t) in row.iter().zip(trow) {
            acc += x * t;
        }
    }
    acc
}

/// Checked geometry of `conv2d(a, k)`: returns `(c_in, h, w, c_out, kh, kw, h_out, w_out)`.
#[allow(clippy::type_complexity)]
pub(crate) fn conv_dims<T: Real>(
    a: &Tensor<T>,
    k: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (c_in, h, w) = match a.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::Shape(format!(
                "conv2d input must be C×H×W, got {other:?}"
            )))
        }
    };
    let (c_out, kc, kh, kw) = match k.shape() {
        &[o, i, kh, kw] => (o, i, kh, kw),
        other => {
            return Err(Error::Shape(format!(
                "conv2d kernel must be Cout×Cin×kh×kw, got {other:?}"
            )))
        }
    };
    if kc != c_in {
        return Err(Error::Shape(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let ho = geom.output_extent(h, kh)?;
    let wo = geom.output_extent(w, kw)?;
    Ok((c_in, h, w, c_out, kh, kw, ho, wo))
}

/// Direct 2-D cross-correlation (no kernel flip). Per output pixel the
/// input-channel contributions are added in ascending channel order.
pub fn conv2d<T: Real>(a: &Tensor<T>, k: &Tensor<T>, geom: Conv2dGeometry) -> Result<Tensor<T>> {
    let (c_in, h, w, c_out, kh, kw, ho, wo) = conv_dims(a, k, geom)?;
    let (ad, kd) = (a.data(), k.data());
    let mut out = vec![T::zero(); c_out * ho * wo];
    for co in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ci in 0..c_in {
                    let plane = &ad[ci * h * w..(ci + 1) * h * w];
                    let taps = &kd[(co * c_in + ci) * kh * kw..(co * c_in + ci + 1) * kh * kw];
                    acc += channel_tap_sum(plane, (h, w), taps, (kh, kw), (oy, ox), geom);
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, ho, wo], out)
}

/// The contribution of input channel `channel` alone to every output of `conv2d(a, k)`.
pub fn conv2d_channel<T: Real>(
    a: &Tensor<T>,
    k: &Tensor<T>,
    channel: usize,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let (c_in, h, w, c_out, kh, kw, ho, wo) = conv_dims(a, k, geom)?;
    if channel >= c_in {
        return Err(Error::Shape(format!(
            "channel {channel} out of range for {c_in} input channels"
        )));
    }
    let (ad, kd) = (a.data(), k.data());
    let plane = &ad[channel * h * w..(channel + 1) * h * w];
    Tensor::from_fn(vec![c_out, ho, wo], |idx| {
        let co = idx / (ho * wo);
        let (oy, ox) = ((idx / wo) % ho, idx % wo);
        let taps = &kd[(co * c_in + channel) * kh * kw..(co * c_in + channel + 1) * kh * kw];
        channel_tap_sum(plane, (h, w), taps, (kh, kw), (oy, ox), geom)
    })
}

/// Channel-wise mean over the spatial extent of a C×H×W tensor.
pub fn avg_pool_global<T: Real>(b: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = match b.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::Shape(format!(
                "global pooling expects C×H×W, got {other:?}"
            )))
        }
    };
    let area = h * w;
    let denom = T::from_usize(area).expect("area fits the float type");
    let out = b
        .data()
        .chunks_exact(area)
        .map(|plane| {
            let mut acc = T::zero();
            for &x in plane {
                acc += x;
            }
            acc / denom
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), c);
    Tensor::vector(out)
}

/// `max(0, w*x + b)`.
#[inline]
pub fn relu<T: Real>(x: T, w: T, b: T) -> T {
    let z = w * x + b;
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn relu0<T: Real>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

pub fn relu_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(relu0)
}

/// Inference-form normalization of one value of channel `c`.
#[inline]
pub(crate) fn batchnorm_scalar<T: Real>(x: T, gamma: T, beta: T, mean: T, var: T, eps: T) -> T {
    (x - mean) / (var + eps).sqrt() * gamma + beta
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta` per channel; the channel is
/// the leading dimension of `x`.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let c = x.shape()[0];
    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
        return Err(Error::Shape(format!(
            "batchnorm over {c} channels got parameters of lengths {:?}",
            [gamma.len(), beta.len(), mean.len(), var.len()]
        )));
    }
    let per = x.len() / c;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i / per;
        *v = batchnorm_scalar(*v, gamma[ch], beta[ch], mean[ch], var[ch], eps);
    }
    Ok(out)
}

/// Numerically stable softmax applied independently to every column.
pub fn softmax_columns<T: Real>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = match m.shape() {
        &[r, c] => (r, c),
        other => return Err(Error::Shape(format!("softmax expects a matrix, got {other:?}"))),
    };
    let d = m.data();
    let mut out = vec![T::zero(); r * c];
    for j in 0..c {
        let max = (0..r).map(|i| d[i * c + j]).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for i in 0..r {
            let e = (d[i * c + j] - max).exp();
            out[i * c + j] = e;
            total += e;
        }
        for i in 0..r {
            out[i * c + j] = out[i * c + j] / total;
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Single-head attention followed by a fully connected layer:
/// `W · (V · X) · softmax_cols((QX)ᵀ (KX))` with X of shape d₁×L.
pub fn attention_forward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    q: &Tensor<T>,
    v: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d1 = match x.shape() {
        &[d1, _] => d1,
        other => return Err(Error::Shape(format!("attention input must be d₁×L, got {other:?}"))),
    };
    let d2 = match v.shape() {
        &[d2, c] if c == d1 => d2,
        other => return Err(Error::Shape(format!("V must be d₂×{d1}, got {other:?}"))),
    };
    for (name, m) in [("K", k), ("Q", q)] {
        if m.shape() != [d2, d1] {
            return Err(Error::Shape(format!(
                "{name} must be {d2}×{d1}, got {:?}",
                m.shape()
            )));
        }
    }
    match w.shape() {
        &[_, c] if c == d2 => {}
        other => return Err(Error::Shape(format!("W must be d₃×{d2}, got {other:?}"))),
    }
    let qx = matmul_mat(q, x)?;
    let kx = matmul_mat(k, x)?;
    let scores = matmul_mat(&transpose(&qx)?, &kx)?;
    let attn = softmax_columns(&scores)?;
    let vx = matmul_mat(v, x)?;
    let mixed = matmul_mat(&vx, &attn)?;
    matmul_mat(w, &mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn matmul_identity_and_row_sums() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::vector(vec![3.0, 5.0]).unwrap();
        assert_eq!(matmul(&eye, &x).unwrap().data(), &[3.0, 5.0]);

        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&w, &ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(vec![4, 4], &mut rng);
        let x = random(vec![4], &mut rng);
        let got = matmul(&w, &x).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += w.at(&[i, j]) * x.at(&[j]);
            }
            assert_eq!(got.data()[i], acc);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let w = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let x = Tensor::<f64>::zeros(vec![2]).unwrap();
        assert!(matches!(matmul(&w, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_scalar_kernel_doubles_input() {
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d(&a, &k, Conv2dGeometry::default()).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_zero_kernel_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(vec![2, 4, 4], &mut rng);
        let k = Tensor::zeros(vec![3, 2, 3, 3]).unwrap();
        let out = conv2d(&a, &k, Conv2dGeometry { stride: 1, padding: 1 }).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_explicitly_padded_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (h, w, kh, kw, stride, padding) in [(5, 4, 3, 3, 1, 1), (6, 6, 3, 2, 2, 2), (4, 7, 1, 3, 3, 0), (3, 3, 3, 3, 1, 2)] {
            let a = random(vec![2, h, w], &mut rng);
            let k = random(vec![3, 2, kh, kw], &mut rng);
            let geom = Conv2dGeometry { stride, padding };
            let out = conv2d(&a, &k, geom).unwrap();
            let (hp, wp) = (h + 2 * padding, w + 2 * padding);
            let padded = |c: usize, y: usize, x: usize| {
                if y < padding || x < padding || y - padding >= h || x - padding >= w {
                    0.0
                } else {
                    a.at(&[c, y - padding, x - padding])
                }
            };
            let (ho, wo) = ((hp - kh) / stride + 1, (wp - kw) / stride + 1);
            assert_eq!(out.shape(), &[3, ho, wo]);
            for co in 0..3 {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut want = 0.0;
                        for ci in 0..2 {
                            for r in 0..kh {
                                for c in 0..kw {
                                    want += k.at(&[co, ci, r, c]) * padded(ci, oy * stride + r, ox * stride + c);
                                }
                            }
                        }
                        assert!((out.at(&[co, oy, ox]) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let a = Tensor::<f64>::zeros(vec![1, 2, 2]).unwrap();
        let k = Tensor::<f64>::zeros(vec![1, 1, 3, 3]).unwrap();
        assert!(conv2d(&a, &k, Conv2dGeometry::default()).is_err());
        let k2 = Tensor::<f64>::zeros(vec![1, 2, 1, 1]).unwrap();
        assert!(conv2d(&a, &k2, Conv2dGeometry::default()).is_err());
        assert!(conv2d(&a, &k2, Conv2dGeometry { stride: 0, padding: 0 }).is_err());
    }

    #[test]
    fn pooling_examples() {
        let c = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_global(&c).unwrap().data(), &[2.5]);
        let v = Tensor::new(vec![2, 3, 3], vec![0.75; 18]).unwrap();
        assert_eq!(avg_pool_global(&v).unwrap().data(), &[0.75, 0.75]);
    }

    #[test]
    fn scalar_relu() {
        assert_eq!(relu(-1.0, 1.0, 0.0), 0.0);
        assert_eq!(relu(2.0, 3.0, -1.0), 5.0);
        assert_eq!(relu(0.5, -2.0, 1.0), 0.0);
    }

    #[test]
    fn single_token_attention_reduces_to_linear_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(vec![3, 1], &mut rng);
        let (k, q, v) = (
            random(vec![2, 3], &mut rng),
            random(vec![2, 3], &mut rng),
            random(vec![2, 3], &mut rng),
        );
        let w = random(vec![4, 2], &mut rng);
        let out = attention_forward(&x, &k, &q, &v, &w).unwrap();
        let expect = matmul_mat(&w, &matmul_mat(&v, &x).unwrap()).unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-15);
    }
}
