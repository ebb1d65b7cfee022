use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::spectral::MaterialAttenuation;

/// Polychromatic source spectrum at 1 keV resolution together with the
/// detector's energy-bin thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpectrum {
    energy_start_kev: f64,
    fluence: Vec<f64>,
    kvp: f64,
    bin_edges: Vec<f64>,
    /// Bin index of every 1 keV sample, `None` outside all bins.
    bin_of: Vec<Option<usize>>,
}

#[derive(Debug, Deserialize)]
struct SpectrumFile {
    #[allow(dead_code)]
    name: Option<String>,
    kvp: f64,
    energy_start_kev: f64,
    energy_step_kev: f64,
    fluence: Vec<f64>,
}

const BUNDLED_120: &str = include_str!("../../data/spectra/w120.toml");

impl SourceSpectrum {
    pub fn new(energy_start_kev: f64, fluence: Vec<f64>, kvp: f64, bin_edges: Vec<f64>) -> Result<Self> {
        if fluence.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        if energy_start_kev.fract() != 0.0 {
            return Err(Error::InvalidArgument("spectrum must start on an integer keV".into()));
        }
        for (i, &f) in fluence.iter().enumerate() {
            let e = energy_start_kev + i as f64;
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "fluence at {e} keV is negative or non-finite"
                )));
            }
            if e > kvp && f != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "fluence at {e} keV is non-zero above the {kvp} kVp cutoff"
                )));
            }
        }
        if bin_edges.len() < 3 {
            return Err(Error::InvalidArgument("at least two energy bins are required".into()));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("bin edges must be strictly ascending".into()));
        }
        let last = energy_start_kev + (fluence.len() - 1) as f64;
        if bin_edges[0] < energy_start_kev || *bin_edges.last().unwrap() > last {
            return Err(Error::InvalidArgument(format!(
                "bin edges must lie within the spectrum support [{energy_start_kev}, {last}] keV"
            )));
        }
        let k = bin_edges.len() - 1;
        let bin_of: Vec<Option<usize>> = (0..fluence.len())
            .map(|i| {
                let e = energy_start_kev + i as f64;
                (0..k).find(|&b| e >= bin_edges[b] && (e < bin_edges[b + 1] || (b + 1 == k && e <= bin_edges[k])))
            })
            .collect();
        for b in 0..k {
            let total: f64 = bin_of
                .iter()
                .zip(&fluence)
                .filter(|(bin, _)| **bin == Some(b))
                .map(|(_, f)| f)
                .sum();
            if total <= 0.0 {
                return Err(Error::EmptyBin {
                    bin: b,
                    lo: bin_edges[b],
                    hi: bin_edges[b + 1],
                });
            }
        }
        Ok(Self {
            energy_start_kev,
            fluence,
            kvp,
            bin_edges,
            bin_of,
        })
    }

    pub fn from_toml_str(text: &str, bin_edges: Vec<f64>) -> Result<Self> {
        let file: SpectrumFile = toml::from_str(text).map_err(|e| Error::config("spectrum", e.to_string()))?;
        if file.energy_step_kev != 1.0 {
            return Err(Error::config(
                "spectrum.energy_step_kev",
                "only 1 keV tables are supported",
            ));
        }
        Self::new(file.energy_start_kev, file.fluence, file.kvp, bin_edges)
    }

    pub fn load(path: &Path, bin_edges: Vec<f64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, bin_edges)
    }

    /// Bundled 120 kVp tungsten-shaped spectrum (6 mm Al) with 8 equal-width
    /// bins between 30 and 120 keV.
    pub fn default_120kvp() -> Self {
        Self::from_toml_str(BUNDLED_120, equal_bins(30.0, 120.0, 8)).expect("bundled spectrum is valid")
    }

    /// Bundled 120 kVp fluence shape with caller-chosen bins.
    pub fn bundled_120kvp(bin_edges: Vec<f64>) -> Result<Self> {
        Self::from_toml_str(BUNDLED_120, bin_edges)
    }

    pub fn n_bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn kvp(&self) -> f64 {
        self.kvp
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    /// `(energy keV, fluence, bin)` for every sample that falls in a bin.
    pub fn binned_samples(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.fluence
            .iter()
            .enumerate()
            .filter_map(move |(i, &f)| self.bin_of[i].map(|b| (self.energy_start_kev + i as f64, f, b)))
    }

    /// Total fluence in each bin.
    pub fn bin_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins()];
        for (_, f, b) in self.binned_samples() {
            out[b] += f;
        }
        out
    }

    /// Effective attenuation check: every material must be tabulated at all
    /// binned energies.
    pub(crate) fn check_coverage(&self, materials: &[MaterialAttenuation]) -> Result<()> {
        for m in materials {
            for (e, _, _) in self.binned_samples() {
                if m.mu_at_node(e).is_none() {
                    let (lo, hi) = m.energy_range();
                    return Err(Error::EnergyOutOfRange { energy: e, lo, hi });
                }
            }
        }
        Ok(())
    }
}

/// `n` equal-width bins spanning `[lo, hi]`.
pub fn equal_bins(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}
