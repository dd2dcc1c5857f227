//! Row-major 2D grids and per-pixel class-score maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// A dense `height x width` grid stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Per-pixel class indices.
pub type LabelMap = Grid<u8>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            bail!(Shape, "grid {}x{} needs {} values, got {}", height, width, height * width, data.len());
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(f).collect() }
    }
}

impl<T: Copy> Grid<T> {
    pub fn at(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }
}

/// Per-pixel class probabilities, `height x width x classes`, pixel-major.
///
/// Every pixel's scores lie in `[0, 1]` and sum to one within
/// [`ScoreMap::SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub const SUM_TOLERANCE: f64 = 1e-5;

    /// Builds a map and checks range and normalization of every pixel.
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        let map = Self::from_raw(height, width, classes, data)?;
        map.validate()?;
        Ok(map)
    }

    /// Builds a map, checking only the buffer length.
    pub fn from_raw(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            bail!(Shape, "score map needs at least one class");
        }
        if data.len() != height * width * classes {
            bail!(Shape, "score map {}x{}x{} needs {} values, got {}", height, width, classes, height * width * classes, data.len());
        }
        Ok(Self { height, width, classes, data })
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        Self { height, width, classes, data: vec![1.0 / classes as f64; height * width * classes] }
    }

    /// One-hot encoding of a label map.
    pub fn one_hot(labels: &LabelMap, classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (t, &c) in labels.as_slice().iter().enumerate() {
            if c as usize >= classes {
                bail!(InvalidInput, "label {} out of range for {} classes", c, classes);
            }
            data[t * classes + c as usize] = 1.0;
        }
        Ok(Self { height: labels.height(), width: labels.width(), classes, data })
    }

    pub fn validate(&self) -> Result<()> {
        for (t, px) in self.pixels().enumerate() {
            let mut sum = 0.0;
            for &v in px {
                if !(0.0..=1.0).contains(&v) {
                    bail!(InvalidInput, "score {} at pixel {} outside [0, 1]", v, t);
                }
                sum += v;
            }
            if libm::fabs(sum - 1.0) > Self::SUM_TOLERANCE {
                bail!(InvalidInput, "scores at pixel {} sum to {}", t, sum);
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    pub fn pixels(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    /// Per-pixel argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let labels = self.pixels().map(|px| argmax_lowest(px) as u8).collect();
        Grid { height: self.height, width: self.width, data: labels }
    }

    /// Scores of a single class as a grid.
    pub fn class_plane(&self, class: usize) -> Grid<f64> {
        Grid { height: self.height, width: self.width, data: self.pixels().map(|px| px[class]).collect() }
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
