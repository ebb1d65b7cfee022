//! Calibration on disk: a TOML sidecar describing each detector's basis and
//! domain, plus a coefficient container of shape `(channel, term, bin)`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::container::{read_array_ndim, write_array};
use crate::calibration::{Calibration, CalibrationDomain, DrfPolynomial};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct DetectorEntry {
    shift: Vec<f64>,
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    order: usize,
    n_materials: usize,
    n_bins: usize,
    bin_edges: Vec<f64>,
    coefficients: String,
    detector: Vec<DetectorEntry>,
}

fn coefficients_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("pcmd")
}

/// Writes `path` (TOML) and the coefficient container next to it with a
/// `.pcmd` extension. Returns both paths.
pub fn write_calibration(path: &Path, calibration: &Calibration) -> Result<(PathBuf, PathBuf)> {
    calibration.validate()?;
    let first = &calibration.detectors[0];
    let (terms, k) = (first.n_terms(), first.n_bins());
    let mut theta = Array3::zeros((calibration.detectors.len(), terms, k));
    for (mut dst, d) in theta.axis_iter_mut(Axis(0)).zip(&calibration.detectors) {
        if d.order() != first.order() {
            return Err(Error::Shape("detectors disagree on polynomial order".into()));
        }
        dst.assign(&d.theta());
    }
    let coeff = coefficients_path(path);
    write_array(&coeff, theta.view().into_dyn(), &["channel", "term", "bin"])?;
    let sidecar = Sidecar {
        order: first.order(),
        n_materials: first.n_materials(),
        n_bins: k,
        bin_edges: calibration.bin_edges.clone(),
        coefficients: coeff
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        detector: calibration
            .detectors
            .iter()
            .map(|d| DetectorEntry {
                shift: d.basis_shift().to_vec(),
                scale: d.basis_scale().to_vec(),
                lower: d.domain().lower.clone(),
                upper: d.domain().upper.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok((path.to_path_buf(), coeff))
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let sidecar: Sidecar = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let coeff = path.parent().unwrap_or(Path::new(".")).join(&sidecar.coefficients);
    let theta = read_array_ndim(&coeff, 3)?.data;
    let (nc, terms, k) = (theta.shape()[0], theta.shape()[1], theta.shape()[2]);
    if nc != sidecar.detector.len() || k != sidecar.n_bins {
        return Err(bad(format!(
            "coefficients are {nc}×{terms}×{k} but the sidecar lists {} detectors and {} bins",
            sidecar.detector.len(),
            sidecar.n_bins
        )));
    }
    let detectors = sidecar
        .detector
        .into_iter()
        .enumerate()
        .map(|(c, d)| {
            let domain = CalibrationDomain::new(d.lower, d.upper)?;
            let t: Array2<f64> = theta
                .index_axis(Axis(0), c)
                .into_dimensionality()
                .expect("rank checked")
                .to_owned();
            DrfPolynomial::from_parts(sidecar.order, d.shift, d.scale, t, domain)
        })
        .collect::<Result<Vec<_>>>()?;
    let cal = Calibration {
        detectors,
        bin_edges: sidecar.bin_edges,
    };
    if cal.n_materials() != sidecar.n_materials {
        return Err(bad("material count disagrees with coefficients".into()));
    }
    cal.validate()?;
    Ok(cal)
}
