//! Sinogram-domain prior agents `H(p)`.
//!
//! Filters act on the `(views, channels)` plane of each material channel,
//! with half-sample symmetric reflection at the borders.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationDomain;
use crate::error::{Error, Result};
use crate::sinogram::PathlengthSinogram;

/// Anything that maps a pathlength sinogram to a cleaner one of the same
/// shape. Learned denoisers plug in here.
pub trait Denoiser: Sync {
    fn denoise(&self, p: &PathlengthSinogram) -> Result<PathlengthSinogram>;
}

/// Multipliers on the Gaussian std along each sinogram axis. Zero disables
/// filtering along that axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisWeights {
    pub views: f64,
    pub channels: f64,
}

impl Default for AxisWeights {
    fn default() -> Self {
        Self {
            views: 1.0,
            channels: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Identity,
    /// Gaussian psf per material; `std` holds one value per material, or a
    /// single value used for all.
    Gaussian {
        std: Vec<f64>,
        #[serde(default)]
        axes: AxisWeights,
    },
    /// Rotate the material vector by `rotation`, filter each rotated channel
    /// with its own std, rotate back.
    DecorrelatedGaussian {
        std: Vec<f64>,
        #[serde(default = "default_rotation")]
        rotation: Vec<Vec<f64>>,
        #[serde(default)]
        axes: AxisWeights,
    },
    Clip {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Compose {
        stages: Vec<PriorSpec>,
    },
}

/// 45° rotation `(1/√2)[[1, −1], [1, 1]]`.
pub fn default_rotation() -> Vec<Vec<f64>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    vec![vec![h, -h], vec![h, h]]
}

impl PriorSpec {
    pub fn gaussian(std: f64) -> Self {
        PriorSpec::Gaussian {
            std: vec![std],
            axes: AxisWeights::default(),
        }
    }

    pub fn clip(domain: &CalibrationDomain) -> Self {
        PriorSpec::Clip {
            lower: domain.lower.clone(),
            upper: domain.upper.clone(),
        }
    }

    pub fn validate(&self, n_materials: usize) -> Result<()> {
        let check_std = |std: &[f64]| -> Result<()> {
            if std.is_empty() || (std.len() != 1 && std.len() != n_materials) {
                return Err(Error::config("prior.std", format!("needs 1 or {n_materials} values")));
            }
            if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::config("prior.std", "must be positive"));
            }
            Ok(())
        };
        let check_axes = |a: &AxisWeights| -> Result<()> {
            if !(a.views >= 0.0 && a.channels >= 0.0) {
                return Err(Error::config("prior.axes", "weights must be non-negative"));
            }
            Ok(())
        };
        match self {
            PriorSpec::Identity => Ok(()),
            PriorSpec::Gaussian { std, axes } => {
                check_std(std)?;
                check_axes(axes)
            }
            PriorSpec::DecorrelatedGaussian { std, rotation, axes } => {
                check_std(std)?;
                check_axes(axes)?;
                check_rotation(rotation, n_materials)
            }
            PriorSpec::Clip { lower, upper } => {
                if lower.len() != n_materials || upper.len() != n_materials {
                    return Err(Error::config(
                        "prior.lower/upper",
                        format!("needs {n_materials} values"),
                    ));
                }
                CalibrationDomain::new(lower.clone(), upper.clone()).map(|_| ())
            }
            PriorSpec::Compose { stages } => {
                if stages.is_empty() {
                    return Err(Error::config("prior.stages", "composition must not be empty"));
                }
                stages.iter().try_for_each(|s| s.validate(n_materials))
            }
        }
    }
}

fn check_rotation(r: &[Vec<f64>], l: usize) -> Result<()> {
    if r.len() != l || r.iter().any(|row| row.len() != l) {
        return Err(Error::config("prior.rotation", format!("must be {l}×{l}")));
    }
    for i in 0..l {
        for j in 0..l {
            let dot: f64 = (0..l).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            if (dot - target).abs() > 1e-12 {
                return Err(Error::config("prior.rotation", "must be orthonormal"));
            }
        }
    }
    Ok(())
}

/// Normalized Gaussian taps truncated at 4σ (odd length, centred).
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half-sample symmetric reflection of index `i` into `0..n`.
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

fn convolve_line(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = input.len();
    let r = (kernel.len() / 2) as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, w) in kernel.iter().enumerate() {
            s += w * input[reflect(i as i64 + j as i64 - r, n)];
        }
        *o = s;
    }
}

/// Separable Gaussian blur of one `(views, channels)` plane.
pub(crate) fn gaussian_plane(plane: &Array2<f64>, std_views: f64, std_channels: f64) -> Array2<f64> {
    let mut out = plane.as_standard_layout().into_owned();
    if std_channels > 0.0 {
        let k = gaussian_kernel(std_channels);
        out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
            let input = row.to_vec();
            convolve_line(&input, &k, row.as_slice_mut().unwrap());
        });
    }
    if std_views > 0.0 {
        let k = gaussian_kernel(std_views);
        let mut t = out.t().as_standard_layout().into_owned();
        t.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut col| {
            let input = col.to_vec();
            convolve_line(&input, &k, col.as_slice_mut().unwrap());
        });
        out = t.t().as_standard_layout().into_owned();
    }
    out
}

fn std_for(std: &[f64], l: usize) -> f64 {
    if std.len() == 1 {
        std[0]
    } else {
        std[l]
    }
}

fn filter_channels(a: &Array3<f64>, std: &[f64], axes: AxisWeights) -> Array3<f64> {
    let l = a.dim().2;
    let planes: Vec<Array2<f64>> = (0..l)
        .into_par_iter()
        .map(|m| {
            let s = std_for(std, m);
            gaussian_plane(&a.index_axis(Axis(2), m).to_owned(), s * axes.views, s * axes.channels)
        })
        .collect();
    let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(2), &views).expect("planes share a shape")
}

fn rotate(a: &Array3<f64>, r: &[Vec<f64>], transpose: bool) -> Array3<f64> {
    let l = a.dim().2;
    let mut out = Array3::zeros(a.dim());
    for (mut dst, src) in out.lanes_mut(Axis(2)).into_iter().zip(a.lanes(Axis(2))) {
        for i in 0..l {
            dst[i] = (0..l).map(|j| if transpose { r[j][i] } else { r[i][j] } * src[j]).sum();
        }
    }
    out
}

/// Applies `H` described by `spec`.
pub fn apply_prior(spec: &PriorSpec, p: &PathlengthSinogram) -> Result<PathlengthSinogram> {
    spec.validate(p.n_materials())?;
    Ok(apply_validated(spec, p))
}

fn apply_validated(spec: &PriorSpec, p: &PathlengthSinogram) -> PathlengthSinogram {
    match spec {
        PriorSpec::Identity => p.clone(),
        PriorSpec::Gaussian { std, axes } => PathlengthSinogram::standard(filter_channels(&p.0, std, *axes)),
        PriorSpec::DecorrelatedGaussian { std, rotation, axes } => {
            let rotated = rotate(&p.0, rotation, false);
            let filtered = filter_channels(&rotated, std, *axes);
            PathlengthSinogram::standard(rotate(&filtered, rotation, true))
        }
        PriorSpec::Clip { lower, upper } => {
            let mut out = p.clone();
            for mut lane in out.0.lanes_mut(Axis(2)) {
                for (i, v) in lane.iter_mut().enumerate() {
                    *v = v.clamp(lower[i], upper[i]);
                }
            }
            out
        }
        PriorSpec::Compose { stages } => stages.iter().fold(p.clone(), |acc, s| apply_validated(s, &acc)),
    }
}

impl Denoiser for PriorSpec {
    fn denoise(&self, p: &PathlengthSinogram) -> Result<PathlengthSinogram> {
        apply_prior(self, p)
    }
}
