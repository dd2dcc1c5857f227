//! Layers with hand-written backward passes.
//!
//! Each layer's `forward_train` returns its output plus a cache owned by the
//! caller; `backward` consumes the cache, accumulates parameter gradients and
//! returns the gradient with respect to the layer input.

mod batchnorm;
mod conv;
mod ops;

use alloc::vec;
use alloc::vec::Vec;

pub use batchnorm::{BatchNorm2d, BnCache};
pub use conv::Conv2d;
pub use ops::{
    max_pool2x2, max_pool2x2_backward, relu_backward, relu_inplace, softmax_backward, softmax_pixels,
    upsample_nearest2x, upsample_nearest2x_backward, SpatialDropout,
};

/// A learnable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// A named storage slot visited when walking a model's state.
pub enum Slot<'a> {
    Param(&'a mut Param),
    /// Non-learnable state such as batch-norm running statistics.
    Buffer(&'a mut Vec<f32>),
}
