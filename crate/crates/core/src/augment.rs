//! Paired geometric augmentation of labeled samples.
//!
//! Horizontal mirroring followed by a rotation about the image centre. The
//! image is resampled bilinearly and padded with intensity 0; the label map
//! is resampled by nearest neighbour and padded with background (class 0).

use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::grid::{Grid, LabelMap};
use crate::rng::rng_from_seed;

pub const IMAGE_FILL: f32 = 0.0;
pub const LABEL_FILL: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub mirror_probability: f64,
    /// Inclusive `[low, high]` range of rotation angles in degrees.
    pub rotation_range_degrees: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { mirror_probability: 0.5, rotation_range_degrees: [-15.0, 15.0] }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        Self { mirror_probability: 0.0, rotation_range_degrees: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mirror_probability) {
            bail!(Config, "mirror_probability must be in [0, 1]");
        }
        let [lo, hi] = self.rotation_range_degrees;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            bail!(Config, "rotation range [{}, {}] must be finite with low <= high", lo, hi);
        }
        Ok(())
    }
}

/// Draws a mirror flag and an angle from `seed` and applies them to both grids.
pub fn augment(image: &Grid<f32>, labels: &LabelMap, cfg: &AugmentationConfig, seed: u64) -> Result<(Grid<f32>, LabelMap)> {
    cfg.validate()?;
    if image.shape() != labels.shape() {
        bail!(Shape, "image {:?} and labels {:?} are not aligned", image.shape(), labels.shape());
    }
    let mut rng = rng_from_seed(seed);
    let flip = rng.random::<f64>() < cfg.mirror_probability;
    let [lo, hi] = cfg.rotation_range_degrees;
    let angle = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let (mut img, mut lab) = (image.clone(), labels.clone());
    if flip {
        img = mirror(&img);
        lab = mirror(&lab);
    }
    if angle != 0.0 {
        img = rotate_bilinear(&img, angle);
        lab = rotate_nearest(&lab, angle);
    }
    Ok((img, lab))
}

/// Left-right reflection.
pub fn mirror<T: Clone>(grid: &Grid<T>) -> Grid<T> {
    let w = grid.width();
    Grid::from_fn(grid.height(), w, |y, x| grid.get(y, w - 1 - x).clone())
}

/// Source coordinates of output pixel `(y, x)` for a rotation by `degrees`
/// (counter-clockwise in image coordinates) about the centre.
fn source_coords(h: usize, w: usize, degrees: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let theta = degrees.to_radians();
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    move |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        (cy + c * dy + s * dx, cx - s * dy + c * dx)
    }
}

pub fn rotate_bilinear(image: &Grid<f32>, degrees: f64) -> Grid<f32> {
    let (h, w) = image.shape();
    let src = source_coords(h, w, degrees);
    let fetch = |y: isize, x: isize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            IMAGE_FILL
        } else {
            image.at(y as usize, x as usize)
        }
    };
    Grid::from_fn(h, w, |y, x| {
        let (sy, sx) = src(y, x);
        let (y0, x0) = (libm::floor(sy), libm::floor(sx));
        let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = fetch(y0, x0) * (1.0 - fx) + fetch(y0, x0 + 1) * fx;
        let bottom = fetch(y0 + 1, x0) * (1.0 - fx) + fetch(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn rotate_nearest(labels: &LabelMap, degrees: f64) -> LabelMap {
    let (h, w) = labels.shape();
    let src = source_coords(h, w, degrees);
    Grid::from_fn(h, w, |y, x| {
        let (sy, sx) = src(y, x);
        let (ry, rx) = (libm::round(sy), libm::round(sx));
        if ry < 0.0 || rx < 0.0 || ry >= h as f64 || rx >= w as f64 {
            LABEL_FILL
        } else {
            labels.at(ry as usize, rx as usize)
        }
    })
}
