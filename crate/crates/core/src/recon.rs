//! Filtered backprojection of pathlength sinograms and virtual
//! mono-energetic image synthesis.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{BeamMode, ImageGrid, ScanGeometry};
use crate::sinogram::PathlengthSinogram;
use crate::spectral::MaterialAttenuation;

/// Fractional-volume images, one per basis material, shape `(ny, nx, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialImage {
    pub values: Array3<f64>,
    pub grid: ImageGrid,
}

impl MaterialImage {
    pub fn new(values: Array3<f64>, grid: ImageGrid) -> Result<Self> {
        let (ny, nx, _) = values.dim();
        if ny != grid.ny || nx != grid.nx {
            return Err(Error::Shape(format!(
                "image is {nx}×{ny} but grid is {}×{}",
                grid.nx, grid.ny
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: ImageGrid, n_materials: usize) -> Self {
        Self {
            values: Array3::zeros((grid.ny, grid.nx, n_materials)),
            grid,
        }
    }

    pub fn n_materials(&self) -> usize {
        self.values.dim().2
    }

    pub fn material(&self, l: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(2), l)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Single-energy image, shape `(ny, nx)`. Values are linear attenuation
/// (1/cm) or, after [`MonoImage::modified_hu`], HU + 1000.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoImage {
    pub values: Array2<f64>,
    pub energy_kev: f64,
    pub grid: ImageGrid,
}

impl MonoImage {
    /// `1000 · μ / μ_ref`: air is 0 and the reference material is 1000.
    pub fn modified_hu(&self, mu_reference: f64) -> Result<Self> {
        if !(mu_reference > 0.0 && mu_reference.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reference attenuation must be positive, got {mu_reference}"
            )));
        }
        Ok(Self {
            values: self.values.mapv(|v| 1000.0 * v / mu_reference),
            energy_kev: self.energy_kev,
            grid: self.grid,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct FbpOptions {
    /// Apodize the ramp with a Hann window.
    #[serde(default)]
    pub hann: bool,
}

fn next_pow2_at_least(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Frequency response of the band-limited ramp, built from its spatial
/// kernel so the DC term is correct.
fn ramp_response(n_pad: usize, spacing: f64, hann: bool) -> Vec<f64> {
    let mut h = vec![Complex::new(0.0, 0.0); n_pad];
    h[0].re = 1.0 / (4.0 * spacing * spacing);
    for n in 1..=n_pad / 2 {
        if n % 2 == 1 {
            let v = -1.0 / (PI * PI * (n * n) as f64 * spacing * spacing);
            h[n].re = v;
            h[n_pad - n].re = v;
        }
    }
    FftPlanner::new().plan_fft_forward(n_pad).process(&mut h);
    h.iter()
        .enumerate()
        .map(|(k, c)| {
            let f = k.min(n_pad - k) as f64 / n_pad as f64;
            let w = if hann { (PI * f).cos().powi(2) } else { 1.0 };
            c.re * spacing * w
        })
        .collect()
}

/// Ramp-filter each row of a `(views, channels)` sinogram.
fn ramp_filter(sino: &Array2<f64>, spacing: f64, hann: bool) -> Array2<f64> {
    let (nv, nc) = sino.dim();
    let n_pad = next_pow2_at_least(2 * nc);
    let response = ramp_response(n_pad, spacing, hann);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_pad);
    let inv = planner.plan_fft_inverse(n_pad);
    let mut out = Array2::zeros((nv, nc));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(sino.axis_iter(Axis(0)))
        .for_each(|(mut dst, src)| {
            let mut buf = vec![Complex::new(0.0, 0.0); n_pad];
            for (b, s) in buf.iter_mut().zip(src.iter()) {
                b.re = *s;
            }
            fwd.process(&mut buf);
            for (b, r) in buf.iter_mut().zip(&response) {
                *b *= r;
            }
            inv.process(&mut buf);
            for (d, b) in dst.iter_mut().zip(&buf) {
                *d = b.re / n_pad as f64;
            }
        });
    out
}

/// Parallel-beam data over `[0, span)` with channel spacing `spacing`
/// centered on the isocenter.
struct ParallelData {
    sino: Array2<f64>,
    angles: Vec<f64>,
    spacing: f64,
}

fn lerp_row(row: &[f64], x: f64) -> f64 {
    if !(x >= 0.0) {
        return 0.0;
    }
    let i = x.floor() as usize;
    if i + 1 >= row.len() {
        return if i + 1 == row.len() && x == i as f64 {
            row[i]
        } else {
            0.0
        };
    }
    let w = x - i as f64;
    row[i] * (1.0 - w) + row[i + 1] * w
}

/// Rebin fan data `(β, t)` onto parallel rays `(θ, s)` with `θ = β − γ` and
/// `s = R sin γ`, sampling the same view angles and the isocenter-scaled
/// channel pitch.
fn rebin_fan(sino: &Array2<f64>, geometry: &ScanGeometry, source_to_iso: f64, source_to_detector: f64) -> ParallelData {
    let (nv, nc) = sino.dim();
    let spacing = geometry.detector_spacing * source_to_iso / source_to_detector;
    let dbeta = 2.0 * PI / nv as f64;
    let angles: Vec<f64> = (0..nv).map(|v| geometry.view_angle(v)).collect();
    let mut out = Array2::zeros((nv, nc));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(v, mut row)| {
            let theta = angles[v];
            for (c, o) in row.iter_mut().enumerate() {
                let s = (c as f64 - (nc as f64 - 1.0) / 2.0) * spacing;
                if s.abs() >= source_to_iso {
                    continue;
                }
                let gamma = (s / source_to_iso).asin();
                let t = source_to_detector * gamma.tan();
                let ch = t / geometry.detector_spacing + (nc as f64 - 1.0) / 2.0;
                if !(ch >= 0.0 && ch <= (nc - 1) as f64) {
                    continue;
                }
                let beta = (theta + gamma).rem_euclid(2.0 * PI) / dbeta;
                let b0 = beta.floor() as usize % nv;
                let b1 = (b0 + 1) % nv;
                let wb = beta - beta.floor();
                let r0 = sino.row(b0);
                let r1 = sino.row(b1);
                let v0 = lerp_row(r0.as_slice().expect("standard layout"), ch);
                let v1 = lerp_row(r1.as_slice().expect("standard layout"), ch);
                *o = v0 * (1.0 - wb) + v1 * wb;
            }
        });
    ParallelData {
        sino: out,
        angles,
        spacing,
    }
}

fn backproject(filtered: &Array2<f64>, angles: &[f64], spacing: f64, grid: &ImageGrid) -> Array2<f64> {
    let (nv, nc) = filtered.dim();
    let trig: Vec<(f64, f64)> = angles.iter().map(|a| a.sin_cos()).collect();
    let weight = PI / nv as f64;
    let half = (nc as f64 - 1.0) / 2.0;
    let mut img = Array2::zeros((grid.ny, grid.nx));
    img.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(iy, mut row)| {
            for (ix, px) in row.iter_mut().enumerate() {
                let [x, y] = grid.pixel_center(ix, iy);
                let mut acc = 0.0;
                for (v, &(s, c)) in trig.iter().enumerate() {
                    let t = x * c + y * s;
                    let r = filtered.row(v);
                    acc += lerp_row(r.as_slice().expect("standard layout"), t / spacing + half);
                }
                *px = acc * weight;
            }
        });
    img
}

fn check_coverage(geometry: &ScanGeometry) -> Result<()> {
    geometry.validate()?;
    let need = match geometry.mode {
        BeamMode::Parallel => 2,
        BeamMode::Fan { .. } => 4,
    };
    if geometry.n_views < need {
        return Err(Error::AngularCoverage(format!(
            "{} views cannot cover the required arc",
            geometry.n_views
        )));
    }
    Ok(())
}

/// Filtered backprojection of one `(views, channels)` sinogram channel.
pub fn fbp_reconstruct(
    sino: ArrayView2<'_, f64>,
    geometry: &ScanGeometry,
    grid: &ImageGrid,
    options: FbpOptions,
) -> Result<Array2<f64>> {
    check_coverage(geometry)?;
    grid.validate()?;
    if sino.dim() != (geometry.n_views, geometry.n_channels) {
        return Err(Error::Shape(format!(
            "sinogram is {:?}, geometry expects ({}, {})",
            sino.dim(),
            geometry.n_views,
            geometry.n_channels
        )));
    }
    let sino = sino.as_standard_layout().into_owned();
    let data = match geometry.mode {
        BeamMode::Parallel => ParallelData {
            sino,
            angles: (0..geometry.n_views).map(|v| geometry.view_angle(v)).collect(),
            spacing: geometry.detector_spacing,
        },
        BeamMode::Fan {
            source_to_iso,
            source_to_detector,
        } => rebin_fan(&sino, geometry, source_to_iso, source_to_detector),
    };
    let filtered = ramp_filter(&data.sino, data.spacing, options.hann);
    // Weight π/N holds for both spans: fan data see every line twice.
    Ok(backproject(&filtered, &data.angles, data.spacing, grid))
}

/// FBP of every material channel.
pub fn reconstruct_materials(
    p: &PathlengthSinogram,
    geometry: &ScanGeometry,
    grid: &ImageGrid,
    options: FbpOptions,
) -> Result<MaterialImage> {
    let l = p.n_materials();
    let mut values = Array3::zeros((grid.ny, grid.nx, l));
    for m in 0..l {
        let img = fbp_reconstruct(p.0.index_axis(Axis(2), m), geometry, grid, options)?;
        values.index_axis_mut(Axis(2), m).assign(&img);
    }
    MaterialImage::new(values, *grid)
}

/// `Σ_l μ_l(E) x_l` per pixel.
pub fn synthesize_mono(x: &MaterialImage, materials: &[MaterialAttenuation], energy_kev: f64) -> Result<MonoImage> {
    if materials.len() != x.n_materials() {
        return Err(Error::Shape(format!(
            "{} materials for a {}-material image",
            materials.len(),
            x.n_materials()
        )));
    }
    let mu: Vec<f64> = materials.iter().map(|m| m.mu(energy_kev)).collect::<Result<_>>()?;
    let values = x
        .values
        .lanes(Axis(2))
        .into_iter()
        .map(|lane| lane.iter().zip(&mu).map(|(a, b)| a * b).sum())
        .collect::<Vec<f64>>();
    let values = Array2::from_shape_vec((x.grid.ny, x.grid.nx), values).expect("lane count matches grid");
    Ok(MonoImage {
        values,
        energy_kev,
        grid: x.grid,
    })
}

/// Attenuation at `energy_kev` of the basis mix with `fractions`.
pub fn mix_attenuation(materials: &[MaterialAttenuation], fractions: &[f64], energy_kev: f64) -> Result<f64> {
    materials
        .iter()
        .zip(fractions)
        .map(|(m, f)| m.mu(energy_kev).map(|mu| mu * f))
        .sum()
}

/// Pixelwise `x ← M x` with an invertible `L×L` matrix.
pub fn basis_change(x: &MaterialImage, matrix: &Array2<f64>) -> Result<MaterialImage> {
    let l = x.n_materials();
    if matrix.dim() != (l, l) {
        return Err(Error::Shape(format!("basis matrix must be {l}×{l}")));
    }
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    let mut b = vec![0.0; l];
    b[0] = 1.0;
    if crate::linalg::solve_general(&mut a, &mut b, l).is_none() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("basis matrix is not invertible".into()));
    }
    let mut values = x.values.clone();
    for mut lane in values.lanes_mut(Axis(2)) {
        let old: Vec<f64> = lane.to_vec();
        for (i, v) in lane.iter_mut().enumerate() {
            *v = (0..l).map(|j| matrix[(i, j)] * old[j]).sum();
        }
    }
    Ok(MaterialImage { values, grid: x.grid })
}
