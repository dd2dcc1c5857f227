//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::SegmentationModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, one pair of arrays per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, model: &mut SegmentationModel) -> Self {
        let sizes = model.param_sizes();
        Self {
            config,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update with the accumulated gradients, then zeroes them.
    pub fn step(&mut self, model: &mut SegmentationModel, learning_rate: f64) -> Result<()> {
        let sizes = model.param_sizes();
        if sizes.len() != self.first_moment.len() || sizes.iter().zip(&self.first_moment).any(|(n, m)| *n != m.len()) {
            bail!(Shape, "optimizer state does not match the model's parameters");
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let step_size = (learning_rate / c1) as f32;
        let c2_sqrt = libm::sqrt(c2) as f32;
        let (b1, b2, eps) = (beta1 as f32, beta2 as f32, epsilon as f32);
        let mut index = 0;
        model.for_each_param(&mut |p| {
            let (m, v) = (&mut self.first_moment[index], &mut self.second_moment[index]);
            index += 1;
            for (((w, g), mi), vi) in p.value.iter_mut().zip(p.grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * *g;
                *vi = b2 * *vi + (1.0 - b2) * *g * *g;
                *w -= step_size * *mi / (libm::sqrtf(*vi) / c2_sqrt + eps);
                *g = 0.0;
            }
        });
        Ok(())
    }
}
