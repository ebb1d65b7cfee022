//! Sinogram containers shared by the simulator, the decomposition agents and
//! reconstruction. All are laid out `(views, channels, last)` in standard
//! (row-major) order, so projection `m = view * channels + channel` occupies
//! one contiguous lane.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Basis-material pathlengths (cm), `(views, channels, materials)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathlengthSinogram(pub Array3<f64>);

/// Photon counts per bin, `(views, channels, bins)`, with the per-projection
/// air total `λ_Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSinogram {
    pub counts: Array3<f64>,
    pub air_total: Array2<f64>,
}

/// Counts normalized by the air total, `(views, channels, bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSinogram {
    pub t: Array3<f64>,
}

impl PathlengthSinogram {
    pub fn zeros(views: usize, channels: usize, materials: usize) -> Self {
        Self(Array3::zeros((views, channels, materials)))
    }

    pub fn n_views(&self) -> usize {
        self.0.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.0.dim().1
    }

    pub fn n_materials(&self) -> usize {
        self.0.dim().2
    }

    pub fn n_projections(&self) -> usize {
        self.n_views() * self.n_channels()
    }

    /// `(projections, materials)` view.
    pub fn rows(&self) -> ArrayView2<'_, f64> {
        let (v, c, l) = self.0.dim();
        self.0
            .view()
            .into_shape_with_order((v * c, l))
            .expect("sinograms are kept in standard layout")
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("sinograms are kept in standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.0.as_slice_mut().expect("sinograms are kept in standard layout")
    }

    /// Normalized standard layout (some ndarray ops return views in other orders).
    pub(crate) fn standard(a: Array3<f64>) -> Self {
        if a.is_standard_layout() {
            Self(a)
        } else {
            Self(a.as_standard_layout().into_owned())
        }
    }

    /// One material channel as a `(views, channels)` array.
    pub fn material(&self, l: usize) -> Array2<f64> {
        self.0.index_axis(ndarray::Axis(2), l).to_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, views: usize, channels: usize, materials: usize) -> Result<()> {
        if self.0.dim() != (views, channels, materials) {
            return Err(Error::Shape(format!(
                "pathlength sinogram is {:?}, expected {:?}",
                self.0.dim(),
                (views, channels, materials)
            )));
        }
        Ok(())
    }
}

impl CountSinogram {
    pub fn new(counts: Array3<f64>, air_total: Array2<f64>) -> Result<Self> {
        let (v, c, _) = counts.dim();
        if air_total.dim() != (v, c) {
            return Err(Error::Shape(format!(
                "air totals {:?} do not match counts {:?}",
                air_total.dim(),
                counts.dim()
            )));
        }
        if air_total.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidArgument("air totals must be positive".into()));
        }
        if counts.iter().any(|&y| !(y >= 0.0)) {
            return Err(Error::InvalidArgument("counts must be non-negative".into()));
        }
        Ok(Self {
            counts: counts.as_standard_layout().into_owned(),
            air_total,
        })
    }

    /// `T = y / λ_Σ`.
    pub fn transmission(&self) -> TransmissionSinogram {
        let mut t = self.counts.clone();
        for ((v, c, _), x) in t.indexed_iter_mut() {
            *x /= self.air_total[(v, c)];
        }
        TransmissionSinogram { t }
    }
}

impl TransmissionSinogram {
    pub fn n_bins(&self) -> usize {
        self.t.dim().2
    }

    pub fn as_slice(&self) -> &[f64] {
        self.t.as_slice().expect("sinograms are kept in standard layout")
    }
}
