use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::sinogram::{CountSinogram, PathlengthSinogram, TransmissionSinogram};
use crate::spectral::{MaterialAttenuation, Phantom, SourceSpectrum};

/// Spectrum and attenuation tables flattened for fast repeated evaluation of
/// `λ_k(p) = Σ_{E∈k} fluence(E) exp(−Σ_l μ_l(E) p_l)`.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    n_bins: usize,
    n_materials: usize,
    bins: Vec<usize>,
    fluence: Vec<f64>,
    /// `samples × materials`
    mu: Vec<f64>,
    bin_edges: Vec<f64>,
}

impl SpectralModel {
    pub fn new(spectrum: &SourceSpectrum, materials: &[MaterialAttenuation]) -> Result<Self> {
        if materials.is_empty() {
            return Err(Error::InvalidArgument("at least one basis material is required".into()));
        }
        spectrum.check_coverage(materials)?;
        let mut bins = Vec::new();
        let mut fluence = Vec::new();
        let mut mu = Vec::new();
        for (e, f, b) in spectrum.binned_samples() {
            if f == 0.0 {
                continue;
            }
            bins.push(b);
            fluence.push(f);
            mu.extend(materials.iter().map(|m| m.mu_at_node(e).expect("coverage checked")));
        }
        Ok(Self {
            n_bins: spectrum.n_bins(),
            n_materials: materials.len(),
            bins,
            fluence,
            mu,
            bin_edges: spectrum.bin_edges().to_vec(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_materials(&self) -> usize {
        self.n_materials
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn expected_counts_into(&self, p: &[f64], dose_scale: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let l = self.n_materials;
        for (i, (&b, &f)) in self.bins.iter().zip(&self.fluence).enumerate() {
            let mu = &self.mu[i * l..(i + 1) * l];
            let att: f64 = mu.iter().zip(p).map(|(m, x)| m * x).sum();
            out[b] += f * (-att).exp();
        }
        out.iter_mut().for_each(|v| *v *= dose_scale);
    }

    pub fn expected_counts(&self, p: &[f64], dose_scale: f64) -> Result<Vec<f64>> {
        if p.len() != self.n_materials {
            return Err(Error::Shape(format!(
                "pathlength has {} components, model has {} materials",
                p.len(),
                self.n_materials
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pathlength must be finite".into()));
        }
        if !(dose_scale > 0.0) {
            return Err(Error::InvalidArgument("dose scale must be positive".into()));
        }
        let mut out = vec![0.0; self.n_bins];
        self.expected_counts_into(p, dose_scale, &mut out);
        Ok(out)
    }

    /// `λ_Σ`: total expected air counts.
    pub fn air_total(&self, dose_scale: f64) -> f64 {
        dose_scale * self.fluence.iter().sum::<f64>()
    }
}

/// Expected counts per bin for a single pathlength vector.
pub fn expected_counts(
    spectrum: &SourceSpectrum,
    materials: &[MaterialAttenuation],
    p: &[f64],
    dose_scale: f64,
) -> Result<Vec<f64>> {
    SpectralModel::new(spectrum, materials)?.expected_counts(p, dose_scale)
}

fn poisson_draw(rng: &mut impl Rng, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("validated lambda").sample(rng)
}

/// Independent Poisson draws, reproducible for a given seed.
pub fn sample_poisson(lambda: &[f64], seed: u64) -> Result<Vec<u64>> {
    if let Some(bad) = lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "Poisson mean {bad} is negative or non-finite"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lambda.iter().map(|&l| poisson_draw(&mut rng, l) as u64).collect())
}

/// Generator for projection `index`: one ChaCha stream per projection, so the
/// draws do not depend on thread scheduling.
pub(crate) fn projection_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exact analytic pathlengths of a disk phantom for every projection ray.
pub fn project_phantom(phantom: &Phantom, geometry: &ScanGeometry, n_materials: usize) -> PathlengthSinogram {
    let mut p = PathlengthSinogram::zeros(geometry.n_views, geometry.n_channels, n_materials);
    p.as_slice_mut()
        .par_chunks_mut(n_materials)
        .zip(geometry.rays())
        .for_each(|(row, ray)| phantom.pathlengths_into(&ray, row));
    p
}

/// Output of [`scan_phantom`].
#[derive(Debug, Clone)]
pub struct Scan {
    pub counts: CountSinogram,
    pub transmission: TransmissionSinogram,
    /// Ground-truth pathlengths used to generate the counts.
    pub pathlengths: PathlengthSinogram,
}

/// Simulates a photon-counting scan of an analytic phantom.
pub fn scan_phantom(
    phantom: &Phantom,
    geometry: &ScanGeometry,
    model: &SpectralModel,
    dose_scale: f64,
    noise: bool,
    seed: u64,
) -> Result<Scan> {
    geometry.validate()?;
    phantom.validate(model.n_materials())?;
    if !(dose_scale > 0.0) {
        return Err(Error::InvalidArgument("dose scale must be positive".into()));
    }
    let k = model.n_bins();
    let pathlengths = project_phantom(phantom, geometry, model.n_materials());
    let mut counts = Array3::<f64>::zeros((geometry.n_views, geometry.n_channels, k));
    counts
        .as_slice_mut()
        .unwrap()
        .par_chunks_mut(k)
        .zip(pathlengths.as_slice().par_chunks(model.n_materials()))
        .enumerate()
        .for_each(|(m, (y, p))| {
            model.expected_counts_into(p, dose_scale, y);
            if noise {
                let mut rng = projection_rng(seed, m as u64);
                for v in y.iter_mut() {
                    *v = poisson_draw(&mut rng, *v);
                }
            }
        });
    let air = Array2::from_elem((geometry.n_views, geometry.n_channels), model.air_total(dose_scale));
    let counts = CountSinogram::new(counts, air)?;
    let transmission = counts.transmission();
    Ok(Scan {
        counts,
        transmission,
        pathlengths,
    })
}
