//! Forward and backward kernels. Backward functions take the upstream
//! gradient and return (or accumulate) gradients for each input.

use super::Tensor;
use crate::{Error, Result};

/// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), row-major, where
/// `a` is m×k and `b` is k×n after the optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice length checks above bound every index the kernel
    // touches for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than kernel {k} with padding {p}"
            )));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col(
    x: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let k = g.kernel;
    let p = ho * wo;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let k = g.kernel;
    let p = ho * wo;
    for c in 0..channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv(x: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeometry) -> Result<()> {
    let [co, ci, kh, kw] = weight.shape();
    if ci != x.channels() || kh != g.kernel || kw != g.kernel {
        return Err(Error::Shape(format!(
            "conv weight {:?} incompatible with input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    bias.ensure_shape([co, 1, 1, 1], "conv bias")
}

/// Cross-correlation with zero padding. `weight` is (out, in, k, k) and
/// `bias` is (out, 1, 1, 1).
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeometry) -> Result<Tensor> {
    check_conv(x, weight, bias, g)?;
    let [n, ci, h, w] = x.shape();
    let co = weight.batch();
    let (ho, wo) = g.output_size(h, w)?;
    let p = ho * wo;
    let kdim = ci * g.kernel * g.kernel;
    let mut y = Tensor::zeros([n, co, ho, wo]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kdim * p]
    };
    for b in 0..n {
        let out = y.item_mut(b);
        for (c, plane) in out.chunks_exact_mut(p).enumerate() {
            plane.fill(bias.data()[c]);
        }
        let src = if g.is_pointwise() {
            x.item(b)
        } else {
            im2col(x.item(b), ci, h, w, g, ho, wo, &mut cols);
            &cols
        };
        gemm(co, kdim, p, weight.data(), false, src, false, out, true);
    }
    Ok(y)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    g: ConvGeometry,
) -> Result<ConvGrads> {
    let [n, ci, h, w] = x.shape();
    let co = weight.batch();
    let (ho, wo) = g.output_size(h, w)?;
    dy.ensure_shape([n, co, ho, wo], "conv output gradient")?;
    let p = ho * wo;
    let kdim = ci * g.kernel * g.kernel;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([co, 1, 1, 1]);
    let mut cols = vec![0.0; kdim * p];
    let mut dcols = vec![0.0; kdim * p];
    for b in 0..n {
        let grad = dy.item(b);
        for (c, plane) in grad.chunks_exact(p).enumerate() {
            db.data_mut()[c] += plane.iter().sum::<f64>();
        }
        if g.is_pointwise() {
            gemm(co, p, kdim, grad, false, x.item(b), true, dw.data_mut(), true);
            gemm(kdim, co, p, weight.data(), true, grad, false, dx.item_mut(b), false);
        } else {
            im2col(x.item(b), ci, h, w, g, ho, wo, &mut cols);
            gemm(co, p, kdim, grad, false, &cols, true, dw.data_mut(), true);
            gemm(kdim, co, p, weight.data(), true, grad, false, &mut dcols, false);
            col2im_add(&dcols, ci, h, w, g, ho, wo, dx.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of relu given its *output*.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean over the spatial plane: (n, c, h, w) -> (n, c, 1, 1).
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, _, _] = x.shape();
    let inv = 1.0 / x.plane_len() as f64;
    Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
        x.plane(b, ch).iter().sum::<f64>() * inv
    })
}

pub fn global_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let inv = 1.0 / (h * w) as f64;
    broadcast_spatial(dy, h, w).map(|v| v * inv)
}

/// (n, c, 1, 1) -> (n, c, h, w) by repetition.
pub fn broadcast_spatial(v: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, _, _] = v.shape();
    Tensor::from_fn([n, c, h, w], |[b, ch, _, _]| v.at(b, ch, 0, 0))
}

/// Adjoint of [`broadcast_spatial`]: spatial sums.
pub fn broadcast_spatial_backward(dy: &Tensor) -> Tensor {
    let [n, c, _, _] = dy.shape();
    Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| dy.plane(b, ch).iter().sum())
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resampling of one plane with half-pixel centres and edge
/// clamping.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for y in &ty {
        let r0 = &src[y.lo * w..(y.lo + 1) * w];
        let r1 = &src[y.hi * w..(y.hi + 1) * w];
        for x in &tx {
            let top = r0[x.lo] + (r0[x.hi] - r0[x.lo]) * x.frac;
            let bot = r1[x.lo] + (r1[x.hi] - r1[x.lo]) * x.frac;
            out.push(top + (bot - top) * y.frac);
        }
    }
    out
}

fn resize_plane_backward(dy: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for (oy, y) in ty.iter().enumerate() {
        for (ox, x) in tx.iter().enumerate() {
            let g = dy[oy * ow + ox];
            let gt = g * (1.0 - y.frac);
            let gb = g * y.frac;
            dx[y.lo * w + x.lo] += gt * (1.0 - x.frac);
            dx[y.lo * w + x.hi] += gt * x.frac;
            dx[y.hi * w + x.lo] += gb * (1.0 - x.frac);
            dx[y.hi * w + x.hi] += gb * x.frac;
        }
    }
}

pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            data.extend(resize_plane(x.plane(b, ch), h, w, oh, ow));
        }
    }
    Tensor::from_vec([n, c, oh, ow], data).expect("sizes agree by construction")
}

pub fn resize_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            resize_plane_backward(dy.plane(b, ch), h, w, oh, ow, dx.plane_mut(b, ch));
        }
    }
    dx
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let [n, c, h, w] = logits.shape();
    let p = h * w;
    let mut out = Tensor::zeros(logits.shape());
    for b in 0..n {
        let src = logits.item(b);
        let dst = out.item_mut(b);
        for i in 0..p {
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(src[ch * p + i]);
            }
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (src[ch * p + i] - max).exp();
                dst[ch * p + i] = e;
                sum += e;
            }
            for ch in 0..c {
                dst[ch * p + i] /= sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(x: &Tensor, wt: &Tensor, b: &Tensor, g: ConvGeometry) -> Tensor {
        let [n, ci, h, w] = x.shape();
        let co = wt.batch();
        let (ho, wo) = g.output_size(h, w).unwrap();
        Tensor::from_fn([n, co, ho, wo], |[bi, o, oy, ox]| {
            let mut acc = b.data()[o];
            for c in 0..ci {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += wt.at(o, c, ky, kx) * x.at(bi, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in [
            ConvGeometry::new(3, 1, 1),
            ConvGeometry::new(3, 2, 1),
            ConvGeometry::new(1, 1, 0),
        ] {
            let x = random([2, 3, 7, 6], &mut rng);
            let wt = random([4, 3, g.kernel, g.kernel], &mut rng);
            let b = random([4, 1, 1, 1], &mut rng);
            let fast = conv2d(&x, &wt, &b, g).unwrap();
            let slow = naive_conv(&x, &wt, &b, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // conv without bias is bilinear in (x, w), so each gradient
        // contracted with its own argument reproduces <conv(x), r>.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeometry::new(3, 2, 1);
        let x = random([1, 2, 8, 7], &mut rng);
        let wt = random([3, 2, 3, 3], &mut rng);
        let b = random([3, 1, 1, 1], &mut rng);
        let y = conv2d(&x, &wt, &b, g).unwrap();
        let r = random(y.shape(), &mut rng);
        let grads = conv2d_backward(&x, &wt, &r, g).unwrap();
        let y0 = conv2d(&x, &wt, &Tensor::zeros(b.shape()), g).unwrap();
        assert!((y0.dot(&r) - grads.input.dot(&x)).abs() < 1e-9);
        assert!((y0.dot(&r) - grads.weight.dot(&wt)).abs() < 1e-9);
        let mut bias_part = y.clone();
        for (v, z) in bias_part.data_mut().iter_mut().zip(y0.data()) {
            *v -= z;
        }
        assert!((bias_part.dot(&r) - grads.bias.dot(&b)).abs() < 1e-9);
    }

    #[test]
    fn resize_identity_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random([1, 2, 5, 6], &mut rng);
        assert_eq!(resize_bilinear(&x, 5, 6), x);
        let y = resize_bilinear(&x, 10, 12);
        let r = random(y.shape(), &mut rng);
        let dx = resize_bilinear_backward(&r, 5, 6);
        assert!((y.dot(&r) - dx.dot(&x)).abs() < 1e-10);
    }

    #[test]
    fn resize_keeps_constants() {
        let x = Tensor::full([1, 1, 3, 4], 2.5);
        let y = resize_bilinear(&x, 13, 7);
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 5, 3, 3], &mut rng).map(|v| v * 30.0);
        let p = softmax_channels(&x);
        for b in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    let s: f64 = (0..5).map(|c| p.at(b, c, y, xx)).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
