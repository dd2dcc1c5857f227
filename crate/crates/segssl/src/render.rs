//! Overlay panels and a precision-recall plot as PNG.
//!
//! The uncertainty heat map scales `u` by `ln C` (its maximum) and blends
//! linearly from blue `(0, 0, 255)` at `u = 0` to red `(255, 0, 0)` at
//! `u = ln C`, so the red channel increases and the blue channel decreases
//! with `u`.

use std::path::Path;

use segssl_core::eval::PrCurve;
use segssl_core::{Grid, LabelMap, UncertaintyMap};

use crate::raster::write_rgb;
use crate::error::Result;

pub fn heat_color(u: f64, classes: usize) -> [u8; 3] {
    let t = (u / (classes as f64).ln()).clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    [r, 0, 255 - r]
}

const PALETTE: [[u8; 3]; 10] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

pub fn class_color(class: u8) -> [u8; 3] {
    let c = class as usize;
    if c < PALETTE.len() {
        PALETTE[c]
    } else {
        let h = (c as u32).wrapping_mul(2_654_435_761);
        [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
    }
}

/// An RGB image assembled from equally sized panels placed left to right.
pub struct Panels {
    height: usize,
    width: usize,
    panels: Vec<Vec<[u8; 3]>>,
}

impl Panels {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, panels: Vec::new() }
    }

    fn push(&mut self, pixels: Vec<[u8; 3]>) {
        assert_eq!(pixels.len(), self.height * self.width, "panel size mismatch");
        self.panels.push(pixels);
    }

    pub fn gray(&mut self, image: &Grid<f32>) {
        self.push(image.as_slice().iter().map(|&v| [(v.clamp(0.0, 1.0) * 255.0).round() as u8; 3]).collect());
    }

    pub fn labels(&mut self, labels: &LabelMap) {
        self.push(labels.as_slice().iter().map(|&c| class_color(c)).collect());
    }

    pub fn heat(&mut self, u: &UncertaintyMap, classes: usize) {
        self.push(u.0.as_slice().iter().map(|&v| heat_color(v, classes)).collect());
    }

    pub fn width(&self) -> usize {
        self.width * self.panels.len()
    }

    pub fn to_rgb(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width() * 3);
        for y in 0..self.height {
            for p in &self.panels {
                for px in &p[y * self.width..(y + 1) * self.width] {
                    out.extend_from_slice(px);
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_rgb(path, self.width(), self.height, &self.to_rgb())
    }
}

/// Input, ground truth (when known), prediction and uncertainty side by side.
pub fn write_overlay(
    path: &Path,
    image: &Grid<f32>,
    gt: Option<&LabelMap>,
    pred: &LabelMap,
    u: &UncertaintyMap,
    classes: usize,
) -> Result<()> {
    let mut panels = Panels::new(image.height(), image.width());
    panels.gray(image);
    if let Some(gt) = gt {
        panels.labels(gt);
    }
    panels.labels(pred);
    panels.heat(u, classes);
    panels.write(path)
}

struct Canvas {
    size: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..self.size as i64).contains(&x) && (0..self.size as i64).contains(&y) {
            let i = (y as usize * self.size + x as usize) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

/// Square plot, recall on x and precision on y, both from 0 to 1.
pub fn write_pr_plot(path: &Path, curve: &PrCurve, size: usize) -> Result<()> {
    let mut canvas = Canvas { size, rgb: vec![255; size * size * 3] };
    let margin = (size / 10) as i64;
    let span = size as i64 - 2 * margin;
    let to_px = |r: f64, p: f64| (margin + (r * span as f64).round() as i64, size as i64 - margin - (p * span as f64).round() as i64);
    let grey = [160, 160, 160];
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        canvas.line(to_px(t, 0.0), to_px(t, 1.0), [230, 230, 230]);
        canvas.line(to_px(0.0, t), to_px(1.0, t), [230, 230, 230]);
    }
    canvas.line(to_px(0.0, 0.0), to_px(1.0, 0.0), grey);
    canvas.line(to_px(0.0, 0.0), to_px(0.0, 1.0), grey);
    let points: Vec<(i64, i64)> = curve.recall.iter().zip(&curve.precision).map(|(&r, &p)| to_px(r, p)).collect();
    for w in points.windows(2) {
        canvas.line(w[0], w[1], [200, 30, 30]);
    }
    write_rgb(path, size, size, &canvas.rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_map_is_monotone_and_cool_at_zero() {
        assert_eq!(heat_color(0.0, 4), [0, 0, 255]);
        assert_eq!(heat_color(4f64.ln(), 4), [255, 0, 0]);
        let mut prev = heat_color(0.0, 9);
        for i in 1..=100 {
            let c = heat_color(9f64.ln() * i as f64 / 100.0, 9);
            assert!(c[0] >= prev[0] && c[2] <= prev[2]);
            prev = c;
        }
    }

    #[test]
    fn panels_are_input_sized() {
        let img = Grid::filled(3, 5, 0.5f32);
        let labels = Grid::filled(3, 5, 1u8);
        let mut p = Panels::new(3, 5);
        p.gray(&img);
        p.labels(&labels);
        p.heat(&UncertaintyMap(Grid::filled(3, 5, 0.0)), 4);
        assert_eq!(p.width(), 15);
        let rgb = p.to_rgb();
        assert_eq!(rgb.len(), 3 * 15 * 3);
        assert_eq!(&rgb[(5 + 1) * 3..(5 + 2) * 3], &class_color(1));
        assert_eq!(&rgb[(10 + 4) * 3..(10 + 5) * 3], &[0, 0, 255]);
    }

    #[test]
    fn pr_plot_writes() {
        let dir = tempfile::tempdir().unwrap();
        let curve = PrCurve { thresholds: vec![1.0, 0.5, 0.0], precision: vec![1.0, 0.8, 0.3], recall: vec![0.0, 0.6, 1.0] };
        write_pr_plot(&dir.path().join("pr.png"), &curve, 200).unwrap();
        assert!(dir.path().join("pr.png").exists());
    }
}
