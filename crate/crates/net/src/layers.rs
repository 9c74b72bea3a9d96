//! Batched layer kernels in NCHW layout (each sample contiguous).
//!
//! Per-sample work runs on the rayon pool; every reduction over samples runs
//! in a fixed order so results do not depend on the number of threads.

use rand::Rng;
use rayon::prelude::*;

use crate::real::{gemm, Real};

/// Samples per parallel work item in weight-gradient reductions. Fixed so the
/// summation order is independent of the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stride-1 convolution with symmetric zero padding `(ph, pw)` per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvSpec {
    pub const fn out_shape(&self, s: Shape) -> Shape {
        Shape::new(self.cout, s.h + 2 * self.ph + 1 - self.kh, s.w + 2 * self.pw + 1 - self.kw)
    }

    /// Rows of the im2col matrix.
    pub const fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub spec: ConvSpec,
    /// `cout × (cin·kh·kw)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: vec![T::zero(); spec.cout * spec.k()],
            bias: vec![T::zero(); spec.cout],
        }
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init<R: Rng>(spec: ConvSpec, rng: &mut R) -> Self {
        let mut c = Self::zeros(spec);
        fill_uniform(&mut c.weight, spec.k(), rng);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_out × fan_in` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![T::zero(); fan_in * fan_out],
            bias: vec![T::zero(); fan_out],
        }
    }

    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(fan_in, fan_out);
        fill_uniform(&mut l.weight, fan_in, rng);
        l
    }
}

/// He-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn fill_uniform<T: Real, R: Rng>(w: &mut [T], fan_in: usize, rng: &mut R) {
    let b = (6.0 / fan_in as f64).sqrt();
    for v in w {
        *v = T::from_f64c(rng.random_range(-b..b));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: vec![T::zero(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `running = (1 - momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, stats: &BnStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + momentum * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + momentum * stats.var_unbiased[c];
        }
    }
}

/// Batch statistics of one normalized layer, for the running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

/// What the backward pass of a fused batch-norm + ReLU needs.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Post-ReLU output; its sign pattern is the ReLU mask.
    pub out: Vec<T>,
}

fn im2col<T: Real>(x: &[T], s: Shape, spec: &ConvSpec, col: &mut [T]) {
    let o = spec.out_shape(s);
    let p = o.plane();
    for ci in 0..spec.cin {
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ci * spec.kh + ky) * spec.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..o.h {
                    let iy = (oy + ky) as isize - spec.ph as isize;
                    let line = &mut dst[oy * o.w..(oy + 1) * o.w];
                    if iy < 0 || iy as usize >= s.h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * s.h + iy as usize) * s.w..][..s.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox + kx) as isize - spec.pw as isize;
                        *v = if ix < 0 || ix as usize >= s.w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], s: Shape, spec: &ConvSpec, dx: &mut [T]) {
    let o = spec.out_shape(s);
    let p = o.plane();
    dx.fill(T::zero());
    for ci in 0..spec.cin {
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ci * spec.kh + ky) * spec.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..o.h {
                    let iy = (oy + ky) as isize - spec.ph as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    let dst = &mut dx[(ci * s.h + iy as usize) * s.w..][..s.w];
                    for ox in 0..o.w {
                        let ix = (ox + kx) as isize - spec.pw as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * o.w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of `n` samples of shape `s`; returns `n × out_shape`.
pub fn conv_forward<T: Real>(conv: &Conv<T>, x: &[T], n: usize, s: Shape) -> Vec<T> {
    let spec = &conv.spec;
    assert_eq!(s.c, spec.cin, "conv input channels");
    assert_eq!(x.len(), n * s.len(), "conv input length");
    let o = spec.out_shape(s);
    let (k, p) = (spec.k(), o.plane());
    let mut out = vec![T::zero(); n * o.len()];
    out.par_chunks_mut(o.len())
        .zip(x.par_chunks(s.len()))
        .for_each_init(
            || vec![T::zero(); k * p],
            |col, (os, xs)| {
                im2col(xs, s, spec, col);
                for (co, plane) in os.chunks_mut(p).enumerate() {
                    plane.fill(conv.bias[co]);
                }
                gemm(spec.cout, k, p, &conv.weight, k, false, col, p, false, T::one(), os, p);
            },
        );
    out
}

/// Gradients of a convolution given its input and the output gradient.
/// The input gradient is computed only when `want_dx`.
pub fn conv_backward<T: Real>(
    conv: &Conv<T>,
    x: &[T],
    n: usize,
    s: Shape,
    dout: &[T],
    want_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let spec = &conv.spec;
    let o = spec.out_shape(s);
    let (k, p) = (spec.k(), o.plane());
    assert_eq!(dout.len(), n * o.len(), "conv output gradient length");
    let mut dx = want_dx.then(|| vec![T::zero(); n * s.len()]);
    let n_chunks = n.div_ceil(GRAD_CHUNK);
    let dx_chunks: Vec<Option<&mut [T]>> = match dx.as_mut() {
        Some(d) => d.chunks_mut(GRAD_CHUNK * s.len()).map(Some).collect(),
        None => (0..n_chunks).map(|_| None).collect(),
    };
    let partials: Vec<(Vec<T>, Vec<T>)> = dx_chunks
        .into_par_iter()
        .enumerate()
        .map(|(ci, mut dxc)| {
            let mut dw = vec![T::zero(); spec.cout * k];
            let mut db = vec![T::zero(); spec.cout];
            let mut col = vec![T::zero(); k * p];
            let mut dcol = if dxc.is_some() { vec![T::zero(); k * p] } else { Vec::new() };
            let lo = ci * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(n);
            for i in lo..hi {
                let xs = &x[i * s.len()..(i + 1) * s.len()];
                let ds = &dout[i * o.len()..(i + 1) * o.len()];
                im2col(xs, s, spec, &mut col);
                gemm(spec.cout, p, k, ds, p, false, &col, p, true, T::one(), &mut dw, k);
                for (co, plane) in ds.chunks(p).enumerate() {
                    db[co] = db[co] + plane.iter().copied().sum::<T>();
                }
                if let Some(dxc) = dxc.as_deref_mut() {
                    gemm(k, spec.cout, p, &conv.weight, k, true, ds, p, false, T::zero(), &mut dcol, p);
                    let j = i - lo;
                    col2im(&dcol, s, spec, &mut dxc[j * s.len()..(j + 1) * s.len()]);
                }
            }
            (dw, db)
        })
        .collect();
    let mut dw = vec![T::zero(); spec.cout * k];
    let mut db = vec![T::zero(); spec.cout];
    for (pw, pb) in partials {
        add_into(&mut dw, &pw);
        add_into(&mut db, &pb);
    }
    (dw, db, dx)
}

pub fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a = *a + *b;
    }
}

/// Training-mode batch norm over `n` samples of `c` channels × `hw` positions
/// followed by ReLU. `z` is consumed; statistics are biased for the
/// normalization and unbiased for the running averages.
pub fn bn_relu_train<T: Real>(bn: &BatchNorm<T>, z: Vec<T>, n: usize, c: usize, hw: usize, eps: f64) -> (BnCache<T>, BnStats<T>) {
    assert_eq!(z.len(), n * c * hw, "batch norm input length");
    assert_eq!(bn.channels(), c, "batch norm channels");
    let m = (n * hw) as f64;
    let mut sum = vec![0.0f64; c];
    for i in 0..n {
        for (ch, acc) in sum.iter_mut().enumerate() {
            *acc += z[(i * c + ch) * hw..][..hw].iter().map(|v| v.to_f64c()).sum::<f64>();
        }
    }
    let mean_f: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let mut sq = vec![0.0f64; c];
    for i in 0..n {
        for (ch, acc) in sq.iter_mut().enumerate() {
            let mu = mean_f[ch];
            *acc += z[(i * c + ch) * hw..][..hw].iter().map(|v| (v.to_f64c() - mu).powi(2)).sum::<f64>();
        }
    }
    let mut mean = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    let mut var_unbiased = vec![T::zero(); c];
    for ch in 0..c {
        let var = sq[ch] / m;
        mean[ch] = T::from_f64c(mean_f[ch]);
        inv_std[ch] = T::from_f64c(1.0 / (var + eps).sqrt());
        var_unbiased[ch] = T::from_f64c(if m > 1.0 { var * m / (m - 1.0) } else { var });
    }
    let mut x_hat = z;
    let mut out = vec![T::zero(); x_hat.len()];
    x_hat
        .par_chunks_mut(hw)
        .zip(out.par_chunks_mut(hw))
        .enumerate()
        .for_each(|(blk, (xh, o))| {
            let ch = blk % c;
            let (mu, inv) = (mean[ch], inv_std[ch]);
            let (g, b) = (bn.gamma[ch], bn.beta[ch]);
            for (v, y) in xh.iter_mut().zip(o.iter_mut()) {
                *v = (*v - mu) * inv;
                let a = g * *v + b;
                *y = if a > T::zero() { a } else { T::zero() };
            }
        });
    (BnCache { x_hat, inv_std, out }, BnStats { mean, var_unbiased })
}

/// Inference-mode batch norm + ReLU with running statistics, in place.
pub fn bn_relu_infer<T: Real>(bn: &BatchNorm<T>, z: &mut [T], c: usize, hw: usize, eps: f64) {
    let eps = T::from_f64c(eps);
    z.par_chunks_mut(hw).enumerate().for_each(|(blk, zs)| {
        let ch = blk % c;
        let scale = bn.gamma[ch] / (bn.running_var[ch] + eps).sqrt();
        let shift = bn.beta[ch] - bn.running_mean[ch] * scale;
        for v in zs {
            let a = *v * scale + shift;
            *v = if a > T::zero() { a } else { T::zero() };
        }
    });
}

/// Backward of [`bn_relu_train`]: turns the gradient w.r.t. the ReLU output
/// (`d`, in place) into the gradient w.r.t. the normalized input and returns
/// `(dgamma, dbeta)`.
pub fn bn_relu_backward<T: Real>(bn: &BatchNorm<T>, cache: &BnCache<T>, d: &mut [T], n: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let c = bn.channels();
    assert_eq!(d.len(), n * c * hw, "batch norm gradient length");
    for (g, o) in d.iter_mut().zip(&cache.out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
    let mut sdy = vec![0.0f64; c];
    let mut sdyx = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            let (mut a, mut b) = (0.0, 0.0);
            for (g, xh) in d[off..off + hw].iter().zip(&cache.x_hat[off..off + hw]) {
                let g = g.to_f64c();
                a += g;
                b += g * xh.to_f64c();
            }
            sdy[ch] += a;
            sdyx[ch] += b;
        }
    }
    let m = T::from_usize(n * hw).expect("batch size fits");
    let dbeta: Vec<T> = sdy.iter().map(|&v| T::from_f64c(v)).collect();
    let dgamma: Vec<T> = sdyx.iter().map(|&v| T::from_f64c(v)).collect();
    d.par_chunks_mut(hw)
        .zip(cache.x_hat.par_chunks(hw))
        .enumerate()
        .for_each(|(blk, (g, xh))| {
            let ch = blk % c;
            let k = bn.gamma[ch] * cache.inv_std[ch] / m;
            for (gv, x) in g.iter_mut().zip(xh) {
                *gv = k * (m * *gv - dbeta[ch] - *x * dgamma[ch]);
            }
        });
    (dgamma, dbeta)
}

/// 2×2 stride-2 max pooling; ties go to the first position in row-major
/// window order. Returns the pooled batch and the argmax (0..4) per output.
pub fn maxpool_forward<T: Real>(x: &[T], n: usize, s: Shape) -> (Vec<T>, Vec<u8>) {
    assert!(s.h.is_multiple_of(2) && s.w.is_multiple_of(2), "pooling needs even spatial dims");
    let o = Shape::new(s.c, s.h / 2, s.w / 2);
    let mut out = vec![T::zero(); n * o.len()];
    let mut arg = vec![0u8; n * o.len()];
    out.par_chunks_mut(o.plane())
        .zip(arg.par_chunks_mut(o.plane()))
        .zip(x.par_chunks(s.plane()))
        .for_each(|((op, ap), xp)| {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let base = 2 * oy * s.w + 2 * ox;
                    let cand = [xp[base], xp[base + 1], xp[base + s.w], xp[base + s.w + 1]];
                    let mut best = 0;
                    for (j, v) in cand.iter().enumerate().skip(1) {
                        if *v > cand[best] {
                            best = j;
                        }
                    }
                    op[oy * o.w + ox] = cand[best];
                    ap[oy * o.w + ox] = best as u8;
                }
            }
        });
    (out, arg)
}

/// Routes pooled gradients back to the argmax positions; `s` is the input shape.
pub fn maxpool_backward<T: Real>(dout: &[T], arg: &[u8], n: usize, s: Shape) -> Vec<T> {
    let o = Shape::new(s.c, s.h / 2, s.w / 2);
    let mut dx = vec![T::zero(); n * s.len()];
    dx.par_chunks_mut(s.plane())
        .zip(dout.par_chunks(o.plane()))
        .zip(arg.par_chunks(o.plane()))
        .for_each(|((dp, gp), ap)| {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let j = ap[oy * o.w + ox] as usize;
                    let idx = (2 * oy + j / 2) * s.w + 2 * ox + j % 2;
                    dp[idx] = gp[oy * o.w + ox];
                }
            }
        });
    dx
}

/// Inverted dropout in place; returns the per-element factor (0 or
/// `1/(1-p)`) for the backward pass.
pub fn dropout_forward<T: Real, R: Rng>(x: &mut [T], p: f64, rng: &mut R) -> Vec<T> {
    let scale = T::from_f64c(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v = *v * *m;
    }
    mask
}

/// `out (n × fan_out) = x (n × fan_in) · Wᵀ + b`.
pub fn linear_forward<T: Real>(l: &Linear<T>, x: &[T], n: usize) -> Vec<T> {
    assert_eq!(x.len(), n * l.fan_in, "linear input length");
    let mut out = vec![T::zero(); n * l.fan_out];
    for row in out.chunks_mut(l.fan_out) {
        row.copy_from_slice(&l.bias);
    }
    gemm(n, l.fan_in, l.fan_out, x, l.fan_in, false, &l.weight, l.fan_in, true, T::one(), &mut out, l.fan_out);
    out
}

/// Returns `(dW, db, dx)`.
pub fn linear_backward<T: Real>(l: &Linear<T>, x: &[T], n: usize, dout: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (fi, fo) = (l.fan_in, l.fan_out);
    let mut dw = vec![T::zero(); fo * fi];
    gemm(fo, n, fi, dout, fo, true, x, fi, false, T::zero(), &mut dw, fi);
    let mut db = vec![T::zero(); fo];
    for row in dout.chunks(fo) {
        add_into(&mut db, row);
    }
    let mut dx = vec![T::zero(); n * fi];
    gemm(n, fo, fi, dout, fo, false, &l.weight, fi, false, T::zero(), &mut dx, fi);
    (dw, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv<f64>, x: &[f64], s: Shape) -> Vec<f64> {
        let sp = conv.spec;
        let o = sp.out_shape(s);
        let mut out = vec![0.0; o.len()];
        for co in 0..sp.cout {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let mut acc = conv.bias[co];
                    for ci in 0..sp.cin {
                        for ky in 0..sp.kh {
                            for kx in 0..sp.kw {
                                let iy = (oy + ky) as isize - sp.ph as isize;
                                let ix = (ox + kx) as isize - sp.pw as isize;
                                if iy < 0 || ix < 0 || iy as usize >= s.h || ix as usize >= s.w {
                                    continue;
                                }
                                let w = conv.weight[((co * sp.cin + ci) * sp.kh + ky) * sp.kw + kx];
                                acc += w * x[(ci * s.h + iy as usize) * s.w + ix as usize];
                            }
                        }
                    }
                    out[(co * o.h + oy) * o.w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop_with_asymmetric_kernel_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec { cin: 2, cout: 3, kh: 2, kw: 3, ph: 1, pw: 0 };
        let mut conv = Conv::<f64>::init(spec, &mut rng);
        conv.bias = vec![0.1, -0.2, 0.3];
        let s = Shape::new(2, 5, 6);
        let x: Vec<f64> = (0..2 * s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = conv_forward(&conv, &x, 2, s);
        let o = spec.out_shape(s);
        assert_eq!(o, Shape::new(3, 6, 4));
        for i in 0..2 {
            let want = naive_conv(&conv, &x[i * s.len()..(i + 1) * s.len()], s);
            for (a, b) in out[i * o.len()..(i + 1) * o.len()].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint_of_forward() {
        // <conv(x), g> is linear in x and w: check dx and dw by inner products
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ConvSpec { cin: 2, cout: 2, kh: 3, kw: 3, ph: 1, pw: 1 };
        let conv = Conv::<f64>::init(spec, &mut rng);
        let s = Shape::new(2, 4, 5);
        let n = 20;
        let x: Vec<f64> = (0..n * s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let o = spec.out_shape(s);
        let g: Vec<f64> = (0..n * o.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (dw, db, dx) = conv_backward(&conv, &x, n, s, &g, true);
        let dx = dx.unwrap();
        let nobias = Conv { bias: vec![0.0; 2], ..conv.clone() };
        let y = conv_forward(&nobias, &x, n, s);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_dx: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_dw: f64 = conv.weight.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_dx).abs() < 1e-9);
        assert!((lhs - via_dw).abs() < 1e-9);
        let gsum: Vec<f64> = (0..2).map(|c| (0..n).map(|i| g[i * o.len() + c * o.plane()..][..o.plane()].iter().sum::<f64>()).sum()).collect();
        for c in 0..2 {
            assert!((db[c] - gsum[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn maxpool_routes_to_first_maximum() {
        let s = Shape::new(1, 2, 4);
        let x = vec![1.0, 3.0, 5.0, 5.0, 2.0, 0.0, 5.0, 1.0];
        let (out, arg) = maxpool_forward::<f64>(&x, 1, s);
        assert_eq!(out, vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let dx = maxpool_backward(&[10.0, 20.0], &arg, 1, s);
        assert_eq!(dx, vec![0.0, 10.0, 20.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bn_train_output_is_standardized() {
        let bn = BatchNorm::<f64>::new(2);
        let z: Vec<f64> = (0..24).map(|v| f64::from(v) * 0.7 - 3.0).collect();
        let (cache, stats) = bn_relu_train(&bn, z, 3, 2, 4, 0.0);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|i| cache.x_hat[(i * 2 + ch) * 4..][..4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
            assert!(stats.var_unbiased[ch] > 0.0);
        }
        assert!(cache.out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dropout_keeps_expected_fraction_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = vec![1.0f64; 40_000];
        let mask = dropout_forward(&mut x, 0.25, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / 40_000.0;
        assert!((kept - 0.75).abs() < 0.01);
        assert!(x.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn linear_matches_manual_product() {
        let l = Linear {
            fan_in: 2,
            fan_out: 2,
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5, -0.5],
        };
        let out = linear_forward(&l, &[1.0, 1.0, 0.0, 2.0], 2);
        assert_eq!(out, vec![3.5, 6.5, 4.5, 7.5]);
        let (dw, db, dx) = linear_backward(&l, &[1.0, 1.0, 0.0, 2.0], 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dw, vec![1.0, 1.0, 0.0, 2.0]);
        assert_eq!(db, vec![1.0, 1.0]);
        assert_eq!(dx, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
