use alloc::vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::Param;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stride-1 convolution with "same" zero padding and an odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out_channels x (in_channels * kernel * kernel)`, row-major.
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    /// He-normal initialization, `std = sqrt(2 / fan_in)`; bias starts at zero.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, with_bias: bool, rng: &mut Rng) -> Self {
        debug_assert!(kernel % 2 == 1 && kernel <= 7);
        let fan_in = in_channels * kernel * kernel;
        let std = libm::sqrtf(2.0 / fan_in as f32);
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let weight = (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect();
        // keep the generator stream independent of the bias flag
        let _ = rng.random::<u32>();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(weight),
            bias: with_bias.then(|| Param::new(vec![0.0; out_channels])),
        }
    }

    fn weight_at(&self, o: usize, ci: usize) -> &[f32] {
        let kk = self.kernel * self.kernel;
        let start = (o * self.in_channels + ci) * kk;
        &self.weight.value[start..start + kk]
    }

    /// Works on zero-padded copies so every kernel tap is one contiguous
    /// run per plane; output channels go four at a time so each input run is
    /// read once per block.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_channels);
        let g = Padded::new(self.kernel, x.h, x.w);
        let hw = x.plane_len();
        let mut out = Tensor::zeros(x.n, self.out_channels, x.h, x.w);
        let mut buf = vec![0.0f32; BLOCK * g.out_len()];
        for i in 0..x.n {
            let xp = g.pad_all(x.sample(i), self.in_channels);
            for o0 in (0..self.out_channels).step_by(BLOCK) {
                let nb = (self.out_channels - o0).min(BLOCK);
                let planes = &mut buf[..nb * g.out_len()];
                for (b, plane) in planes.chunks_exact_mut(g.out_len()).enumerate() {
                    plane.fill(self.bias.as_ref().map_or(0.0, |bias| bias.value[o0 + b]));
                }
                for ci in 0..self.in_channels {
                    let in_plane = &xp[ci * g.in_len()..(ci + 1) * g.in_len()];
                    let taps = self.block_taps(o0, nb, ci);
                    for (tap, a) in taps.iter().enumerate().take(g.kk()) {
                        let src = g.offset(tap);
                        block_axpy(a, &in_plane[src..src + g.run()], planes, g.out_len(), nb);
                    }
                }
                let y = out.sample_mut(i);
                for (b, plane) in planes.chunks_exact(g.out_len()).enumerate() {
                    g.unpad_out(plane, &mut y[(o0 + b) * hw..(o0 + b + 1) * hw]);
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns `d loss / d x`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = Padded::new(self.kernel, x.h, x.w);
        let hw = x.plane_len();
        let kk = g.kk();
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let xp = g.pad_all(x.sample(i), self.in_channels);
            let grad_out = dy.sample(i);
            if let Some(bias) = &mut self.bias {
                for (gb, plane) in bias.grad.iter_mut().zip(grad_out.chunks_exact(hw)) {
                    *gb += plane.iter().sum::<f32>();
                }
            }
            // Output gradients laid out like the forward output buffer, with
            // zeros in the pad columns.
            let mut gp = vec![0.0f32; self.out_channels * g.out_len()];
            for (plane, dst) in grad_out.chunks_exact(hw).zip(gp.chunks_exact_mut(g.out_len())) {
                g.pad_out(plane, dst);
            }
            let mut dxp = vec![0.0f32; g.in_len()];
            let grad_in = dx.sample_mut(i);
            for ci in 0..self.in_channels {
                let in_plane = &xp[ci * g.in_len()..(ci + 1) * g.in_len()];
                dxp.fill(0.0);
                for o0 in (0..self.out_channels).step_by(BLOCK) {
                    let nb = (self.out_channels - o0).min(BLOCK);
                    let g_planes = &gp[o0 * g.out_len()..(o0 + nb) * g.out_len()];
                    let taps = self.block_taps(o0, nb, ci);
                    let mut wgrad = [[0.0f32; BLOCK]; 49];
                    for tap in 0..kk {
                        // forward: out_b[j] += w_b * in[src + j]
                        let src = g.offset(tap);
                        let xs = &in_plane[src..src + g.run()];
                        for b in 0..nb {
                            wgrad[tap][b] = dot(&g_planes[b * g.out_len()..b * g.out_len() + g.run()], xs);
                        }
                        block_gather(&taps[tap], g_planes, g.out_len(), nb, &mut dxp[src..src + g.run()]);
                    }
                    for b in 0..nb {
                        let wstart = ((o0 + b) * self.in_channels + ci) * kk;
                        for (t, w) in self.weight.grad[wstart..wstart + kk].iter_mut().enumerate() {
                            *w += wgrad[t][b];
                        }
                    }
                }
                g.unpad_in(&dxp, &mut grad_in[ci * hw..(ci + 1) * hw]);
            }
        }
        dx
    }

    /// Kernel taps of output channels `o0..o0+nb` for input channel `ci`,
    /// indexed `[tap][b]`.
    fn block_taps(&self, o0: usize, nb: usize, ci: usize) -> [[f32; BLOCK]; 49] {
        let mut taps = [[0.0f32; BLOCK]; 49];
        for b in 0..nb {
            for (t, &w) in self.weight_at(o0 + b, ci).iter().enumerate() {
                taps[t][b] = w;
            }
        }
        taps
    }
}

const BLOCK: usize = 4;

/// Geometry of the padded layout for a `k x k` kernel on `h x w` planes.
///
/// Inputs are stored as `(h + 2p) x (w + 2p)` with a zero border. Outputs
/// are stored `h` rows of width `w + 2p`; the last `2p` columns of each row
/// are scratch. Tap `(ky, kx)` then maps output index `j` to input index
/// `ky * (w + 2p) + kx + j` for every `j` in one run.
struct Padded {
    k: usize,
    p: usize,
    h: usize,
    w: usize,
    wp: usize,
}

impl Padded {
    fn new(k: usize, h: usize, w: usize) -> Self {
        let p = k / 2;
        Self { k, p, h, w, wp: w + 2 * p }
    }

    fn kk(&self) -> usize {
        self.k * self.k
    }

    fn in_len(&self) -> usize {
        (self.h + 2 * self.p) * self.wp
    }

    fn out_len(&self) -> usize {
        self.h * self.wp
    }

    /// Length of each tap's run; stops short of the final scratch columns so
    /// the largest offset stays inside the input.
    fn run(&self) -> usize {
        self.out_len() - 2 * self.p
    }

    fn offset(&self, tap: usize) -> usize {
        (tap / self.k) * self.wp + tap % self.k
    }

    fn pad_all(&self, x: &[f32], channels: usize) -> alloc::vec::Vec<f32> {
        let hw = self.h * self.w;
        let mut out = vec![0.0f32; channels * self.in_len()];
        for (plane, dst) in x.chunks_exact(hw).zip(out.chunks_exact_mut(self.in_len())) {
            for (y, row) in plane.chunks_exact(self.w).enumerate() {
                let start = (y + self.p) * self.wp + self.p;
                dst[start..start + self.w].copy_from_slice(row);
            }
        }
        out
    }

    fn unpad_in(&self, padded: &[f32], out: &mut [f32]) {
        for (y, row) in out.chunks_exact_mut(self.w).enumerate() {
            let start = (y + self.p) * self.wp + self.p;
            row.copy_from_slice(&padded[start..start + self.w]);
        }
    }

    fn pad_out(&self, plane: &[f32], dst: &mut [f32]) {
        for (row, d) in plane.chunks_exact(self.w).zip(dst.chunks_exact_mut(self.wp)) {
            d[..self.w].copy_from_slice(row);
        }
    }

    fn unpad_out(&self, padded: &[f32], out: &mut [f32]) {
        for (row, s) in out.chunks_exact_mut(self.w).zip(padded.chunks_exact(self.wp)) {
            row.copy_from_slice(&s[..self.w]);
        }
    }
}

/// `planes_b[..x.len()] += a_b * x` for the first `nb` planes.
#[inline(always)]
fn block_axpy(a: &[f32; BLOCK], x: &[f32], planes: &mut [f32], stride: usize, nb: usize) {
    let n = x.len();
    if nb == BLOCK {
        let (p0, rest) = planes.split_at_mut(stride);
        let (p1, rest) = rest.split_at_mut(stride);
        let (p2, p3) = rest.split_at_mut(stride);
        let (y0, y1, y2, y3) = (&mut p0[..n], &mut p1[..n], &mut p2[..n], &mut p3[..n]);
        for j in 0..n {
            let v = x[j];
            y0[j] += a[0] * v;
            y1[j] += a[1] * v;
            y2[j] += a[2] * v;
            y3[j] += a[3] * v;
        }
    } else {
        for (b, plane) in planes.chunks_exact_mut(stride).take(nb).enumerate() {
            axpy(a[b], x, &mut plane[..n]);
        }
    }
}

/// `out += sum_b a_b * g_b[..out.len()]` over the first `nb` planes.
#[inline(always)]
fn block_gather(a: &[f32; BLOCK], g: &[f32], stride: usize, nb: usize, out: &mut [f32]) {
    let n = out.len();
    if nb == BLOCK {
        let (g0, g1, g2, g3) = (&g[..n], &g[stride..stride + n], &g[2 * stride..2 * stride + n], &g[3 * stride..3 * stride + n]);
        for j in 0..n {
            out[j] += a[0] * g0[j] + a[1] * g1[j] + a[2] * g2[j] + a[3] * g3[j];
        }
    } else {
        for b in 0..nb {
            axpy(a[b], &g[b * stride..b * stride + n], out);
        }
    }
}

#[inline(always)]
fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let k = conv.kernel as isize;
        let pad = k / 2;
        let mut out = Tensor::zeros(x.n, conv.out_channels, x.h, x.w);
        for n in 0..x.n {
            for o in 0..conv.out_channels {
                for y in 0..x.h as isize {
                    for xx in 0..x.w as isize {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                        for ci in 0..x.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y + ky - pad;
                                    let sx = xx + kx - pad;
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[o * x.c * (k * k) as usize + ci * (k * k) as usize + (ky * k + kx) as usize];
                                    acc += wv * x.plane(n, ci)[sy as usize * x.w + sx as usize];
                                }
                            }
                        }
                        out.plane_mut(n, o)[y as usize * x.w + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        for &(k, bias) in &[(3, false), (1, true), (3, true)] {
            let mut rng = rng_from_seed(1);
            let conv = Conv2d::new(3, 4, k, bias, &mut rng);
            let x = random_tensor(2, 3, 5, 6, 2);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> is linear in x and W, so its gradients are exact.
        let mut rng = rng_from_seed(3);
        let mut conv = Conv2d::new(2, 3, 3, true, &mut rng);
        let x = random_tensor(1, 2, 4, 5, 4);
        let dy = random_tensor(1, 3, 4, 5, 5);
        let dx = conv.backward(&x, &dy);
        let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(p, q)| (*p as f64) * (*q as f64)).sum::<f64>();
        let eps = 1e-2f32;
        for idx in [0usize, 7, 19, 39] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (dot(&dy, &conv.forward(&xp)) - dot(&dy, &conv.forward(&xm))) / (2.0 * eps as f64);
            assert!((fd - dx.data[idx] as f64).abs() < 1e-3, "dx[{idx}]: {fd} vs {}", dx.data[idx]);
        }
        for idx in [0usize, 11, 53] {
            let mut cp = conv.clone();
            cp.weight.value[idx] += eps;
            let mut cm = conv.clone();
            cm.weight.value[idx] -= eps;
            let fd = (dot(&dy, &cp.forward(&x)) - dot(&dy, &cm.forward(&x))) / (2.0 * eps as f64);
            assert!((fd - conv.weight.grad[idx] as f64).abs() < 1e-3);
        }
        let bias_grad: f32 = dy.plane(0, 1).iter().sum();
        assert!((conv.bias.as_ref().unwrap().grad[1] - bias_grad).abs() < 1e-5);
    }
}
