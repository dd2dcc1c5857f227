use alloc::vec;
use alloc::vec::Vec;

use super::Param;
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization with learnable affine parameters.
///
/// Training mode normalizes with statistics of the current batch (over
/// `N x H x W`) and updates running estimates; inference mode uses the
/// running estimates. With a batch of one image the statistics are purely
/// spatial, which is noisier than usual for small feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_eval(&self, x: &mut Tensor) {
        for n in 0..x.n {
            for c in 0..x.c {
                let scale = self.gamma.value[c] / libm::sqrtf(self.running_var[c] + BN_EPS);
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                x.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
    }

    /// Normalizes each image with its own per-channel statistics, leaving the
    /// running estimates untouched. For a single image this is exactly the
    /// training-mode normalization.
    pub fn forward_per_sample(&self, x: &mut Tensor) {
        let m = x.plane_len() as f64;
        for n in 0..x.n {
            for c in 0..x.c {
                let plane = x.plane_mut(n, c);
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / m;
                let var = plane.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / m;
                let istd = (1.0 / libm::sqrt(var + BN_EPS as f64)) as f32;
                let (g, b, meanf) = (self.gamma.value[c], self.beta.value[c], mean as f32);
                plane.iter_mut().for_each(|v| *v = (*v - meanf) * istd * g + b);
            }
        }
    }

    /// Normalizes in place with batch statistics and updates running estimates.
    pub fn forward_train(&mut self, x: &mut Tensor) -> BnCache {
        let m = (x.n * x.plane_len()) as f64;
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = vec![0.0f32; x.c];
        for c in 0..x.c {
            let mut sum = 0.0f64;
            for n in 0..x.n {
                sum += x.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0f64;
            for n in 0..x.n {
                sq += x.plane(n, c).iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>();
            }
            let var = sq / m;
            let istd = (1.0 / libm::sqrt(var + BN_EPS as f64)) as f32;
            inv_std[c] = istd;
            let (g, b, meanf) = (self.gamma.value[c], self.beta.value[c], mean as f32);
            for n in 0..x.n {
                let src = x.plane_mut(n, c);
                let dst = xhat.plane_mut(n, c);
                for (v, h) in src.iter_mut().zip(dst.iter_mut()) {
                    *h = (*v - meanf) * istd;
                    *v = *h * g + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * meanf;
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased as f32;
        }
        BnCache { xhat, inv_std }
    }

    /// Gradient through the batch-statistics normalization, in place on `dy`.
    pub fn backward(&mut self, cache: &BnCache, dy: &mut Tensor) {
        let m = (dy.n * dy.plane_len()) as f32;
        for c in 0..dy.c {
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xhat = 0.0f32;
            for n in 0..dy.n {
                for (g, h) in dy.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let k = self.gamma.value[c] * cache.inv_std[c] / m;
            for n in 0..dy.n {
                let xh = cache.xhat.plane(n, c);
                for (g, h) in dy.plane_mut(n, c).iter_mut().zip(xh) {
                    *g = k * (m * *g - sum_dy - h * sum_dy_xhat);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn per_sample_matches_training_mode_for_one_image() {
        let mut rng = rng_from_seed(3);
        let data: Vec<f32> = (0..3 * 16).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let x = Tensor::from_vec(1, 3, 4, 4, data).unwrap();
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, 0.0, 0.3];
        let mut a = x.clone();
        bn.forward_per_sample(&mut a);
        let running = (bn.running_mean.clone(), bn.running_var.clone());
        let mut b = x;
        bn.forward_train(&mut b);
        assert_eq!(a, b);
        assert_ne!(running, (bn.running_mean.clone(), bn.running_var.clone()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let data: Vec<f32> = (0..2 * 3 * 4).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let x = Tensor::from_vec(2, 3, 2, 2, data).unwrap();
        let w: Vec<f32> = (0..x.data.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = vec![0.7, 1.3, -0.4];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let objective = |bn: &BatchNorm2d, x: &Tensor| {
            let mut b = bn.clone();
            let mut y = x.clone();
            b.forward_train(&mut y);
            y.data.iter().zip(&w).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>()
        };
        let mut y = x.clone();
        let cache = bn.forward_train(&mut y);
        let mut dy = Tensor::from_vec(2, 3, 2, 2, w.clone()).unwrap();
        let mut bn_grad = bn.clone();
        bn_grad.backward(&cache, &mut dy);
        let eps = 1e-2f32;
        for idx in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (objective(&bn, &xp) - objective(&bn, &xm)) / (2.0 * eps as f64);
            assert!((fd - dy.data[idx] as f64).abs() < 2e-3, "{idx}: {fd} vs {}", dy.data[idx]);
        }
    }
}
