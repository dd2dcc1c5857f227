use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::grid::{Grid, LabelMap};

/// Stacked surface curves; curve `k` gives, per column, the row where
/// surface `k` lies. `K` curves delimit `K - 1` layers, giving `K` classes
/// once the background (above the first and below the last) is counted.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    curves: Vec<Vec<f64>>,
}

impl BoundarySet {
    /// Rejects empty, ragged, non-finite or non-monotone input.
    pub fn new(curves: Vec<Vec<f64>>, height: usize) -> Result<Self> {
        if curves.len() < 2 {
            bail!(InvalidInput, "need at least two boundary curves, got {}", curves.len());
        }
        let width = curves[0].len();
        if width == 0 || curves.iter().any(|c| c.len() != width) {
            bail!(InvalidInput, "boundary curves must share a non-zero length");
        }
        for (k, curve) in curves.iter().enumerate() {
            for (x, &v) in curve.iter().enumerate() {
                if !v.is_finite() || v < 0.0 || v > height as f64 {
                    bail!(InvalidInput, "boundary {} at column {} is {}, outside [0, {}]", k, x, v, height);
                }
            }
        }
        for k in 1..curves.len() {
            if let Some(x) = (0..width).find(|&x| curves[k][x] < curves[k - 1][x]) {
                bail!(InvalidInput, "boundary {} lies above boundary {} at column {}", k, k - 1, x);
            }
        }
        Ok(Self { curves })
    }

    pub fn curves(&self) -> &[Vec<f64>] {
        &self.curves
    }

    pub fn width(&self) -> usize {
        self.curves[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.curves.len()
    }
}

pub fn round_half_up(v: f64) -> usize {
    libm::floor(v + 0.5) as usize
}

/// Rows in `[r_k, r_{k+1})` get layer class `k + 1` (`r` = boundaries rounded
/// half up); rows above the first and at or below the last boundary are
/// background (class 0).
pub fn boundaries_to_labels(boundaries: &BoundarySet, height: usize) -> Result<LabelMap> {
    let classes = boundaries.num_classes();
    if classes > 256 {
        bail!(InvalidInput, "{} boundaries exceed the 8-bit label range", classes);
    }
    let width = boundaries.width();
    let mut labels = Grid::filled(height, width, 0u8);
    for x in 0..width {
        for (k, pair) in boundaries.curves().windows(2).enumerate() {
            let top = round_half_up(pair[0][x]).min(height);
            let bottom = round_half_up(pair[1][x]).min(height);
            for y in top..bottom {
                labels.set(y, x, (k + 1) as u8);
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn flat_boundaries() {
        let curves = (1..=9).map(|k| vec![10.0 * k as f64; 3]).collect();
        let b = BoundarySet::new(curves, 100).unwrap();
        let labels = boundaries_to_labels(&b, 100).unwrap();
        for x in 0..3 {
            for y in 0..100 {
                let expected = if (10..90).contains(&y) { (y / 10) as u8 } else { 0 };
                assert_eq!(labels.at(y, x), expected, "row {y}");
            }
        }
    }

    #[test]
    fn zero_thickness_layer() {
        let b = BoundarySet::new(vec![vec![2.0, 2.0], vec![2.0, 3.0], vec![5.0, 5.0]], 8).unwrap();
        let labels = boundaries_to_labels(&b, 8).unwrap();
        assert!((0..8).all(|y| labels.at(y, 0) != 1));
        assert_eq!(labels.at(2, 1), 1);
        assert_eq!(labels.at(2, 0), 2);
    }

    #[test]
    fn rejects_invalid_boundaries() {
        assert!(BoundarySet::new(vec![vec![3.0], vec![2.0]], 8).is_err());
        assert!(BoundarySet::new(vec![vec![3.0], vec![9.0]], 8).is_err());
        assert!(BoundarySet::new(vec![vec![3.0], vec![4.0, 5.0]], 8).is_err());
        assert!(BoundarySet::new(vec![vec![f64::NAN], vec![4.0]], 8).is_err());
        assert!(BoundarySet::new(vec![vec![1.0]], 8).is_err());
    }

    #[test]
    fn rounds_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.49), 2);
        assert_eq!(round_half_up(0.0), 0);
    }
}
