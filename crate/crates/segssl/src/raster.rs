//! PNG rasters and boundary CSV files.
//!
//! Intensity images are grayscale PNGs at 8 or 16 bits, normalized to
//! `[0, 1]` on load. Label maps are 8-bit grayscale PNGs whose values are
//! class indices. Boundary files are CSV without a header: one row per
//! boundary curve (top to bottom), one column per image column, each value a
//! real row position.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use segssl_core::data::BoundarySet;
use segssl_core::{Grid, LabelMap};

use crate::error::{format_error, IoContext, Result};

fn decode(path: &Path) -> Result<(u32, u32, BitDepth, Vec<u8>)> {
    let file = File::open(path).at(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| format_error(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| format_error(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_error(path, e))?;
    if info.color_type != ColorType::Grayscale {
        return Err(format_error(path, format!("expected a grayscale image, found {:?}", info.color_type)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, info.bit_depth, buf))
}

pub fn read_intensity(path: &Path) -> Result<Grid<f32>> {
    let (w, h, depth, buf) = decode(path)?;
    let data: Vec<f32> = match depth {
        BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0).collect(),
        _ => buf.iter().map(|&v| v as f32 / 255.0).collect(),
    };
    Grid::from_vec(h as usize, w as usize, data).map_err(|e| format_error(path, e))
}

pub fn read_labels(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let (w, h, depth, buf) = decode(path)?;
    if depth != BitDepth::Eight {
        return Err(format_error(path, "label maps must be 8-bit"));
    }
    if let Some(bad) = buf.iter().find(|&&v| v as usize >= num_classes) {
        return Err(format_error(path, format!("label {bad} out of range for {num_classes} classes")));
    }
    Grid::from_vec(h as usize, w as usize, buf).map_err(|e| format_error(path, e))
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let file = File::create(path).at(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| format_error(path, e))?;
    writer.write_image_data(data).map_err(|e| format_error(path, e))?;
    writer.finish().map_err(|e| format_error(path, e))
}

/// 16-bit grayscale; values are clamped to `[0, 1]`.
pub fn write_intensity(path: &Path, image: &Grid<f32>) -> Result<()> {
    let data: Vec<u8> =
        image.as_slice().iter().flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()).collect();
    encode(path, image.width(), image.height(), ColorType::Grayscale, BitDepth::Sixteen, &data)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    encode(path, labels.width(), labels.height(), ColorType::Grayscale, BitDepth::Eight, labels.as_slice())
}

/// `rgb` holds `width * height * 3` bytes, row-major.
pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    encode(path, width, height, ColorType::Rgb, BitDepth::Eight, rgb)
}

pub fn read_boundaries(path: &Path, height: usize) -> Result<BoundarySet> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| format_error(path, e))?;
    let mut curves = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| format_error(path, e))?;
        let curve = row.iter().map(|v| v.trim().parse::<f64>().map_err(|e| format_error(path, format!("{v:?}: {e}")))).collect::<Result<Vec<_>>>()?;
        curves.push(curve);
    }
    BoundarySet::new(curves, height).map_err(|e| format_error(path, e))
}

pub fn write_boundaries(path: &Path, boundaries: &BoundarySet) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| format_error(path, e))?;
    for curve in boundaries.curves() {
        writer.write_record(curve.iter().map(|v| v.to_string())).map_err(|e| format_error(path, e))?;
    }
    writer.flush().at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rasters_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Grid::from_fn(5, 7, |y, x| (y * 7 + x) as f32 / 34.0);
        let p = dir.path().join("img.png");
        write_intensity(&p, &img).unwrap();
        let back = read_intensity(&p).unwrap();
        assert_eq!(back.shape(), (5, 7));
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
        let labels = Grid::from_fn(5, 7, |y, _| (y % 3) as u8);
        let q = dir.path().join("lab.png");
        write_labels(&q, &labels).unwrap();
        assert_eq!(read_labels(&q, 3).unwrap(), labels);
        assert!(read_labels(&q, 2).is_err());
        // An 8-bit intensity image is also accepted.
        assert_eq!(read_intensity(&q).unwrap().at(1, 0), 1.0 / 255.0);
        assert!(read_labels(&p, 3).is_err());
    }

    #[test]
    fn boundaries_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let set = BoundarySet::new(vec![vec![1.25, 2.0], vec![3.5, 4.0], vec![6.0, 7.75]], 8).unwrap();
        let p = dir.path().join("b.csv");
        write_boundaries(&p, &set).unwrap();
        assert_eq!(read_boundaries(&p, 8).unwrap(), set);
        std::fs::write(&p, "3,1\n2,2\n").unwrap();
        assert!(read_boundaries(&p, 8).is_err());
    }
}
