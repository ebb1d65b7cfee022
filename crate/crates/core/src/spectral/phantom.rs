use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, Ray};
use crate::recon::MaterialImage;

/// A disk of a basis-material mixture. Overlapping disks add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    #[serde(default)]
    pub label: Option<String>,
    pub center: [f64; 2],
    pub radius: f64,
    /// Volume fraction of each basis material (may exceed 1 to model a
    /// density scaling).
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Phantom {
    pub disks: Vec<Disk>,
}

/// Length of the chord the line cuts through a disk.
pub fn disk_chord(center: [f64; 2], radius: f64, ray: &Ray) -> f64 {
    let d = ray.distance_to(center);
    if d >= radius {
        0.0
    } else {
        2.0 * ((radius - d) * (radius + d)).sqrt()
    }
}

impl Disk {
    pub fn new(center: [f64; 2], radius: f64, fractions: Vec<f64>) -> Self {
        Self {
            label: None,
            center,
            radius,
            fractions,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn contains(&self, point: [f64; 2]) -> bool {
        let dx = point[0] - self.center[0];
        let dy = point[1] - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }
}

impl Phantom {
    pub fn new(disks: Vec<Disk>) -> Self {
        Self { disks }
    }

    pub fn validate(&self, n_materials: usize) -> Result<()> {
        for (i, d) in self.disks.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(Error::config(format!("phantom.disks[{i}].radius"), "must be positive"));
            }
            if d.fractions.len() != n_materials {
                return Err(Error::config(
                    format!("phantom.disks[{i}].fractions"),
                    format!("expected {n_materials} fractions, got {}", d.fractions.len()),
                ));
            }
            if d.fractions.iter().any(|f| !f.is_finite()) {
                return Err(Error::config(format!("phantom.disks[{i}].fractions"), "must be finite"));
            }
        }
        Ok(())
    }

    /// Exact per-material pathlengths along a ray, accumulated into `out`.
    pub fn pathlengths_into(&self, ray: &Ray, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for d in &self.disks {
            let chord = disk_chord(d.center, d.radius, ray);
            if chord > 0.0 {
                for (o, f) in out.iter_mut().zip(&d.fractions) {
                    *o += chord * f;
                }
            }
        }
    }

    /// Volume fractions at a point.
    pub fn fractions_at(&self, point: [f64; 2], n_materials: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_materials];
        for d in self.disks.iter().filter(|d| d.contains(point)) {
            for (o, f) in out.iter_mut().zip(&d.fractions) {
                *o += f;
            }
        }
        out
    }

    /// Pixel image with `supersample²` point samples per pixel.
    pub fn rasterize(&self, grid: ImageGrid, n_materials: usize, supersample: usize) -> MaterialImage {
        let s = supersample.max(1);
        let mut values = ndarray::Array3::zeros((grid.ny, grid.nx, n_materials));
        let w = 1.0 / (s * s) as f64;
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let c = grid.pixel_center(ix, iy);
                for sy in 0..s {
                    for sx in 0..s {
                        let px = c[0] + ((sx as f64 + 0.5) / s as f64 - 0.5) * grid.pixel_size;
                        let py = c[1] + ((sy as f64 + 0.5) / s as f64 - 0.5) * grid.pixel_size;
                        for (l, f) in self.fractions_at([px, py], n_materials).into_iter().enumerate() {
                            values[(iy, ix, l)] += w * f;
                        }
                    }
                }
            }
        }
        MaterialImage { values, grid }
    }

    /// Low-contrast detectability phantom: a 10 cm radius water disk with
    /// three 1.5 cm radius inserts at relative densities 1.01, 1.005 and
    /// 1.003. `water` is the water-equivalent basis mixture.
    pub fn low_contrast(water: &[f64]) -> Self {
        let scaled = |k: f64| water.iter().map(|w| w * k).collect::<Vec<_>>();
        let mut disks = vec![Disk::new([0.0, 0.0], 10.0, scaled(1.0)).labeled("background")];
        for (i, (density, label)) in [(1.01, "insert_1010"), (1.005, "insert_1005"), (1.003, "insert_1003")]
            .into_iter()
            .enumerate()
        {
            let angle = std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
            disks.push(Disk::new([5.0 * angle.cos(), 5.0 * angle.sin()], 1.5, scaled(density - 1.0)).labeled(label));
        }
        Self { disks }
    }
}
