//! Scan geometry, image grid and the ray-driven projector.

use std::f64::consts::PI;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::MaterialImage;
use crate::sinogram::PathlengthSinogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BeamMode {
    Parallel,
    /// Flat-panel fan beam.
    Fan {
        source_to_iso: f64,
        source_to_detector: f64,
    },
}

/// 2D scan geometry. View angles are evenly spaced over `[0, π)` for parallel
/// beam and `[0, 2π)` for fan beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    #[serde(flatten)]
    pub mode: BeamMode,
    pub n_views: usize,
    pub n_channels: usize,
    /// Detector sample spacing (cm). For fan beam this is measured on the
    /// detector, not at isocenter.
    pub detector_spacing: f64,
}

/// A line in world coordinates (cm) with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
}

impl Ray {
    pub fn new(origin: [f64; 2], dir: [f64; 2]) -> Self {
        let n = dir[0].hypot(dir[1]);
        Self {
            origin,
            dir: [dir[0] / n, dir[1] / n],
        }
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        [self.origin[0] + t * self.dir[0], self.origin[1] + t * self.dir[1]]
    }

    /// Perpendicular distance from `point` to the line.
    pub fn distance_to(&self, point: [f64; 2]) -> f64 {
        let dx = point[0] - self.origin[0];
        let dy = point[1] - self.origin[1];
        (dx * self.dir[1] - dy * self.dir[0]).abs()
    }
}

impl ScanGeometry {
    pub fn parallel(n_views: usize, n_channels: usize, detector_spacing: f64) -> Self {
        Self {
            mode: BeamMode::Parallel,
            n_views,
            n_channels,
            detector_spacing,
        }
    }

    pub fn fan(
        n_views: usize,
        n_channels: usize,
        detector_spacing: f64,
        source_to_iso: f64,
        source_to_detector: f64,
    ) -> Self {
        Self {
            mode: BeamMode::Fan {
                source_to_iso,
                source_to_detector,
            },
            n_views,
            n_channels,
            detector_spacing,
        }
    }

    /// Desk-scale default: 360 parallel views over 180°, 256 channels of 1 mm.
    pub fn desk_scale() -> Self {
        Self::parallel(360, 256, 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.n_channels == 0 {
            return Err(Error::config("geometry", "n_views and n_channels must be positive"));
        }
        if !(self.detector_spacing > 0.0) {
            return Err(Error::config("geometry.detector_spacing", "must be positive"));
        }
        if let BeamMode::Fan {
            source_to_iso,
            source_to_detector,
        } = self.mode
        {
            if !(source_to_iso > 0.0 && source_to_detector > source_to_iso) {
                return Err(Error::config(
                    "geometry",
                    "fan beam needs 0 < source_to_iso < source_to_detector",
                ));
            }
        }
        Ok(())
    }

    pub fn n_projections(&self) -> usize {
        self.n_views * self.n_channels
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        let span = match self.mode {
            BeamMode::Parallel => PI,
            BeamMode::Fan { .. } => 2.0 * PI,
        };
        span * view as f64 / self.n_views as f64
    }

    /// Signed channel offset from the central channel, in detector units (cm).
    pub fn channel_offset(&self, channel: usize) -> f64 {
        (channel as f64 - (self.n_channels as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Fan angle of a channel; zero for parallel beam.
    pub fn fan_angle(&self, channel: usize) -> f64 {
        match self.mode {
            BeamMode::Parallel => 0.0,
            BeamMode::Fan { source_to_detector, .. } => (self.channel_offset(channel) / source_to_detector).atan(),
        }
    }

    pub fn ray_for(&self, view: usize, channel: usize) -> Result<Ray> {
        if view >= self.n_views || channel >= self.n_channels {
            return Err(Error::InvalidArgument(format!(
                "ray ({view}, {channel}) outside {}×{} geometry",
                self.n_views, self.n_channels
            )));
        }
        Ok(self.ray_unchecked(view, channel))
    }

    pub(crate) fn ray_unchecked(&self, view: usize, channel: usize) -> Ray {
        let beta = self.view_angle(view);
        let (s, c) = beta.sin_cos();
        // Central direction and detector axis at this view.
        let u0 = [-s, c];
        let e = [c, s];
        let t = self.channel_offset(channel);
        match self.mode {
            BeamMode::Parallel => Ray::new([t * e[0], t * e[1]], u0),
            BeamMode::Fan {
                source_to_iso,
                source_to_detector,
            } => {
                let src = [-source_to_iso * u0[0], -source_to_iso * u0[1]];
                let dir = [
                    source_to_detector * u0[0] + t * e[0],
                    source_to_detector * u0[1] + t * e[1],
                ];
                Ray::new(src, dir)
            }
        }
    }

    /// All rays in projection order (view-major).
    pub fn rays(&self) -> impl IndexedParallelIterator<Item = Ray> + '_ {
        (0..self.n_projections())
            .into_par_iter()
            .map(move |m| self.ray_unchecked(m / self.n_channels, m % self.n_channels))
    }
}

/// Square-pixel image grid; arrays are indexed `[iy, ix]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub pixel_size: f64,
    #[serde(default)]
    pub center: [f64; 2],
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, pixel_size: f64) -> Self {
        Self {
            nx,
            ny,
            pixel_size,
            center: [0.0, 0.0],
        }
    }

    /// 256×256 over a 25.6 cm field of view.
    pub fn desk_scale() -> Self {
        Self::new(256, 256, 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(self.pixel_size > 0.0) {
            return Err(Error::config("grid", "needs positive dimensions and pixel size"));
        }
        Ok(())
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.center[0] + (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.pixel_size,
            self.center[1] + (iy as f64 - (self.ny as f64 - 1.0) / 2.0) * self.pixel_size,
        ]
    }

    /// Lower-left and upper-right corners.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let hx = self.nx as f64 * self.pixel_size / 2.0;
        let hy = self.ny as f64 * self.pixel_size / 2.0;
        (
            [self.center[0] - hx, self.center[1] - hy],
            [self.center[0] + hx, self.center[1] + hy],
        )
    }

    /// Parameter interval where the ray is inside the grid box.
    pub fn clip(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (lo, hi) = self.bounds();
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..2 {
            if ray.dir[a].abs() < 1e-300 {
                if ray.origin[a] < lo[a] || ray.origin[a] > hi[a] {
                    return None;
                }
            } else {
                let ta = (lo[a] - ray.origin[a]) / ray.dir[a];
                let tb = (hi[a] - ray.origin[a]) / ray.dir[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t1 > t0).then_some((t0, t1))
    }

    /// Chord length of the ray through the grid's bounding box.
    pub fn chord_length(&self, ray: &Ray) -> f64 {
        self.clip(ray).map_or(0.0, |(a, b)| b - a)
    }

    /// Siddon traversal: `(flat pixel index iy*nx+ix, intersection length)`
    /// for every pixel the ray crosses.
    pub fn intersections(&self, ray: &Ray) -> Vec<(usize, f64)> {
        let Some((t0, t1)) = self.clip(ray) else {
            return Vec::new();
        };
        let (lo, _) = self.bounds();
        let ps = self.pixel_size;
        let mut ts = vec![t0, t1];
        for (a, n) in [(0, self.nx), (1, self.ny)] {
            if ray.dir[a].abs() < 1e-300 {
                continue;
            }
            for i in 0..=n {
                let t = (lo[a] + i as f64 * ps - ray.origin[a]) / ray.dir[a];
                if t > t0 && t < t1 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        let mut out = Vec::with_capacity(ts.len());
        for w in ts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let mid = ray.at(0.5 * (w[0] + w[1]));
            let ix = ((mid[0] - lo[0]) / ps).floor();
            let iy = ((mid[1] - lo[1]) / ps).floor();
            if ix < 0.0 || iy < 0.0 {
                continue;
            }
            let (ix, iy) = (ix as usize, iy as usize);
            if ix < self.nx && iy < self.ny {
                out.push((iy * self.nx + ix, len));
            }
        }
        out
    }
}

/// Forward projection `p = A x` of a material image with exact ray–pixel
/// intersection lengths.
pub fn project_image(image: &MaterialImage, geometry: &ScanGeometry) -> PathlengthSinogram {
    let l = image.n_materials();
    let grid = image.grid;
    let values = image.values.as_standard_layout();
    let flat = values.as_slice().expect("standard layout");
    let mut out = Array3::<f64>::zeros((geometry.n_views, geometry.n_channels, l));
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(l)
        .zip(geometry.rays())
        .for_each(|(row, ray)| {
            for (n, len) in grid.intersections(&ray) {
                for (mat, r) in row.iter_mut().enumerate() {
                    *r += len * flat[n * l + mat];
                }
            }
        });
    PathlengthSinogram(out)
}
