//! ROI statistics and contrast-to-noise ratio.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiCircle {
    pub label: String,
    pub center: [f64; 2],
    pub radius: f64,
}

impl RoiCircle {
    pub fn new(label: impl Into<String>, center: [f64; 2], radius: f64) -> Self {
        Self {
            label: label.into(),
            center,
            radius,
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoiSpec {
    pub circles: Vec<RoiCircle>,
}

impl RoiSpec {
    pub fn validate(&self, grid: &ImageGrid) -> Result<()> {
        let (lo, hi) = grid.bounds();
        for (i, c) in self.circles.iter().enumerate() {
            if !(c.radius > 0.0) {
                return Err(Error::config(format!("roi.circles[{i}].radius"), "must be positive"));
            }
            if c.center[0] - c.radius < lo[0]
                || c.center[0] + c.radius > hi[0]
                || c.center[1] - c.radius < lo[1]
                || c.center[1] + c.radius > hi[1]
            {
                return Err(Error::config(
                    format!("roi.circles[{i}]"),
                    format!("circle '{}' extends outside the image", c.label),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&RoiCircle> {
        self.circles.iter().find(|c| c.label == label)
    }

    /// Background plus the three low-contrast inserts of
    /// [`Phantom::low_contrast`](crate::spectral::Phantom::low_contrast).
    pub fn low_contrast() -> Self {
        let mut circles = vec![RoiCircle::new("background", [0.0, -5.0], 1.5)];
        for (i, name) in ["insert_1010", "insert_1005", "insert_1003"].iter().enumerate() {
            let a = (90.0 + 120.0 * i as f64).to_radians();
            circles.push(RoiCircle::new(*name, [5.0 * a.cos(), 5.0 * a.sin()], 1.0));
        }
        Self { circles }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    pub std: f64,
    pub n_pixels: usize,
}

/// Decimal places that show `v` to three significant figures.
fn three_sig_decimals(v: f64) -> usize {
    if v == 0.0 || !v.is_finite() {
        return 0;
    }
    (2 - v.abs().log10().floor() as i64).max(0) as usize
}

/// `mean ± std`, each to three significant figures.
impl std::fmt::Display for RoiStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.*} ± {:.*}",
            three_sig_decimals(self.mean),
            self.mean,
            three_sig_decimals(self.std),
            self.std
        )
    }
}

/// Sample mean and standard deviation (n − 1) over pixels whose centers lie
/// in the circle.
pub fn circle_stats(image: ArrayView2<'_, f64>, grid: &ImageGrid, circle: &RoiCircle) -> Result<RoiStats> {
    if image.dim() != (grid.ny, grid.nx) {
        return Err(Error::Shape("image does not match grid".into()));
    }
    let mut values = Vec::new();
    for ((iy, ix), v) in image.indexed_iter() {
        if circle.contains(grid.pixel_center(ix, iy)) {
            values.push(*v);
        }
    }
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyRoi(circle.label.clone()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RoiStats { mean, std, n_pixels: n })
}

pub fn roi_stats(image: ArrayView2<'_, f64>, grid: &ImageGrid, roi: &RoiSpec) -> Result<Vec<(String, RoiStats)>> {
    roi.circles
        .iter()
        .map(|c| Ok((c.label.clone(), circle_stats(image, grid, c)?)))
        .collect()
}

/// `|mean_target − mean_background| / std_background`.
pub fn cnr(image: ArrayView2<'_, f64>, grid: &ImageGrid, target: &RoiCircle, background: &RoiCircle) -> Result<f64> {
    let t = circle_stats(image, grid, target)?;
    let b = circle_stats(image, grid, background)?;
    if target == background {
        return Ok(0.0);
    }
    if !(b.std > 0.0) {
        return Err(Error::DegenerateBackground(background.label.clone()));
    }
    Ok((t.mean - b.mean).abs() / b.std)
}

/// One CSV row per (method, circle), plus CNR against `background` when given.
pub fn stats_csv(rows: &[(String, Vec<(String, RoiStats)>)], background: Option<&str>) -> String {
    let mut out = String::from("method,label,mean,std,n_pixels,cnr\n");
    for (method, stats) in rows {
        let bg = background
            .and_then(|b| stats.iter().find(|(l, _)| l == b))
            .map(|(_, s)| *s);
        for (label, s) in stats {
            let cnr = match bg {
                Some(b) if b.std > 0.0 && Some(label.as_str()) != background => {
                    format!("{:.6}", (s.mean - b.mean).abs() / b.std)
                }
                _ => String::new(),
            };
            let _ = writeln!(out, "{method},{label},{:.6},{:.6},{},{cnr}", s.mean, s.std, s.n_pixels);
        }
    }
    out
}
