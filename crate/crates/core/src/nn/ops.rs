use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Drops whole feature maps: each `(sample, channel)` plane is zeroed with
/// probability `rate`, survivors are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialDropout {
    pub rate: f32,
}

impl SpatialDropout {
    /// Returns the per-plane multipliers, or `None` when dropout is a no-op.
    pub fn sample_mask(&self, n: usize, c: usize, rng: &mut Rng) -> Option<Vec<f32>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some((0..n * c).map(|_| if rng.random::<f32>() < self.rate { 0.0 } else { keep }).collect())
    }

    pub fn apply(mask: &[f32], x: &mut Tensor) {
        let p = x.plane_len();
        for (plane, &m) in x.data.chunks_exact_mut(p).zip(mask) {
            if m == 0.0 {
                plane.iter_mut().for_each(|v| *v = 0.0);
            } else {
                plane.iter_mut().for_each(|v| *v *= m);
            }
        }
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `dy` masked where the forward output was not positive.
pub fn relu_backward(output: &Tensor, dy: &mut Tensor) {
    for (g, &o) in dy.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// index of each selected input element (first maximum wins).
pub fn max_pool2x2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0u32; out.data.len()];
    let ip = x.plane_len();
    let op = oh * ow;
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * ip..(plane + 1) * ip];
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (2 * y) * x.w + 2 * xx;
                for cand in [best + 1, best + x.w, best + x.w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = plane * op + y * ow + xx;
                out.data[o] = src[best];
                arg[o] = (plane * ip + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2x2_backward(input_shape: (usize, usize, usize, usize), arg: &[u32], dy: &Tensor) -> Tensor {
    let (n, c, h, w) = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (&i, &g) in arg.iter().zip(&dy.data) {
        dx.data[i as usize] += g;
    }
    dx
}

pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let ip = x.plane_len();
    let op = oh * ow;
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * ip..(plane + 1) * ip];
        let dst = &mut out.data[plane * op..(plane + 1) * op];
        for y in 0..oh {
            let row = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            for (xx, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *d = row[xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let ip = dy.plane_len();
    let op = h * w;
    for plane in 0..dy.n * dy.c {
        let src = &dy.data[plane * ip..(plane + 1) * ip];
        let dst = &mut dx.data[plane * op..(plane + 1) * op];
        for y in 0..dy.h {
            for x in 0..dy.w {
                dst[(y / 2) * w + x / 2] += src[y * dy.w + x];
            }
        }
    }
    dx
}

/// Per-pixel softmax over channels of one sample, computed in `f64`.
/// Output is pixel-major (`pixel * classes + class`).
pub fn softmax_pixels(logits: &Tensor, sample: usize) -> Vec<f64> {
    let c = logits.c;
    let p = logits.plane_len();
    let src = logits.sample(sample);
    let mut out = vec![0.0f64; p * c];
    for t in 0..p {
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            max = max.max(src[k * p + t] as f64);
        }
        let mut sum = 0.0;
        for k in 0..c {
            let e = libm::exp(src[k * p + t] as f64 - max);
            out[t * c + k] = e;
            sum += e;
        }
        for k in 0..c {
            out[t * c + k] /= sum;
        }
    }
    out
}

/// Pulls `d loss / d probs` (pixel-major) back through the softmax:
/// `dz_j = p_j (g_j - sum_c g_c p_c)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((p, g), o) in probs.chunks_exact(classes).zip(dprobs.chunks_exact(classes)).zip(out.chunks_exact_mut(classes)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..classes {
            o[k] = p[k] * (g[k] - dot);
        }
    }
    out
}
