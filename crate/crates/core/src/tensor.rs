//! NCHW `f32` activation tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            bail!(Shape, "tensor {}x{}x{}x{} needs {} values, got {}", n, c, h, w, n * c * h * w, data.len());
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stacks single-channel images into an `N x 1 x H x W` batch.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Grid<f32>>) -> Result<Self> {
        let mut data = Vec::new();
        let mut shape = None;
        let mut n = 0;
        for img in images {
            match shape {
                None => shape = Some(img.shape()),
                Some(s) if s != img.shape() => bail!(Shape, "batch images differ in size: {:?} vs {:?}", s, img.shape()),
                _ => {}
            }
            data.extend_from_slice(img.as_slice());
            n += 1;
        }
        let Some((h, w)) = shape else { bail!(Shape, "empty image batch") };
        Ok(Self { n, c: 1, h, w, data })
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let start = (n * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let first = parts[0];
        let (n, h, w) = (first.n, first.h, first.w);
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for part in parts {
                debug_assert_eq!((part.n, part.h, part.w), (n, h, w));
                data.extend_from_slice(part.sample(i));
            }
        }
        Tensor { n, c, h, w, data }
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor> {
        debug_assert_eq!(sizes.iter().sum::<usize>(), self.c);
        let p = self.plane_len();
        let mut out: Vec<Tensor> = sizes.iter().map(|&c| Tensor::zeros(self.n, c, self.h, self.w)).collect();
        for i in 0..self.n {
            let src = self.sample(i);
            let mut offset = 0;
            for (t, &c) in out.iter_mut().zip(sizes) {
                t.sample_mut(i).copy_from_slice(&src[offset * p..(offset + c) * p]);
                offset += c;
            }
        }
        out
    }
}
