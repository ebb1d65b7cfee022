//! 8-bit windowed grayscale PNG previews.

use std::io::BufWriter;
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Maps `[center − width/2, center + width/2]` to `0..=255`. The top image
/// row is the largest `y`.
pub fn window_to_u8(image: ArrayView2<'_, f64>, center: f64, width: f64) -> Vec<u8> {
    let lo = center - width / 2.0;
    let (ny, _) = image.dim();
    let mut out = Vec::with_capacity(image.len());
    for iy in (0..ny).rev() {
        for v in image.row(iy) {
            let t = ((v - lo) / width).clamp(0.0, 1.0);
            out.push(if t.is_nan() { 0 } else { (t * 255.0).round() as u8 });
        }
    }
    out
}

pub fn write_png(path: &Path, image: ArrayView2<'_, f64>, center: f64, width: f64) -> Result<()> {
    let (ny, nx) = image.dim();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), nx as u32, ny as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = enc.write_header().map_err(fmt)?;
    w.write_image_data(&window_to_u8(image, center, width)).map_err(fmt)?;
    w.finish().map_err(fmt)
}
