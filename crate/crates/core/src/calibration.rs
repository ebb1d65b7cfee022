//! Polynomial detector response function `φ(p; θ) = −log(λ(p)/λ_Σ)`:
//! slab-scan measurement, least-squares fitting, evaluation and Jacobian.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::spectral::{projection_rng, SpectralModel};

pub const MAX_ORDER: usize = 8;
pub const MAX_MATERIALS: usize = 4;

/// Per-material pathlength box (cm) covered by a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CalibrationDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape("domain bounds must have equal, non-zero length".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidArgument("domain needs finite lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 40] cm` polyethylene × `[0, 5] cm` PVC.
    pub fn pe_pvc_default() -> Self {
        Self::new(vec![0.0, 0.0], vec![40.0, 5.0]).unwrap()
    }

    pub fn n_materials(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (x, (a, b)) in p.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*a, *b);
        }
    }

    /// Box scaled by `factor` about its centre.
    pub fn expanded(&self, factor: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| {
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a) * factor;
                (c - h, c + h)
            })
            .unzip();
        Self { lower, upper }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Self) -> Self {
        Self {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v * factor).collect(),
            upper: self.upper.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Slab thickness combinations to scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDesign {
    pub points: Vec<Vec<f64>>,
    pub repeats: usize,
}

impl CalibrationDesign {
    /// Tensor grid with `counts[l]` evenly spaced points per material.
    pub fn grid(domain: &CalibrationDomain, counts: &[usize], repeats: usize) -> Result<Self> {
        if counts.len() != domain.n_materials() || counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidArgument(
                "grid needs at least two points along every material".into(),
            ));
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..n)
                    .map(|i| domain.lower[l] + (domain.upper[l] - domain.lower[l]) * i as f64 / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let total: usize = counts.iter().product();
        let points = (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; counts.len()];
                for l in (0..counts.len()).rev() {
                    p[l] = axes[l][idx % counts[l]];
                    idx /= counts[l];
                }
                p
            })
            .collect();
        Self::new(points, repeats)
    }

    /// 9 × 9 points over the default PE/PVC domain, 100 repeats.
    pub fn pe_pvc_default() -> Self {
        Self::grid(&CalibrationDomain::pe_pvc_default(), &[9, 9], 100).unwrap()
    }

    pub fn new(points: Vec<Vec<f64>>, repeats: usize) -> Result<Self> {
        if repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("calibration design is empty".into()));
        }
        let l = points[0].len();
        if points.iter().any(|p| p.len() != l || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(
                "design points must be finite and equal length".into(),
            ));
        }
        Ok(Self { points, repeats })
    }

    /// Bounding box of the design points.
    pub fn domain(&self) -> CalibrationDomain {
        let l = self.points[0].len();
        let mut lower = vec![f64::INFINITY; l];
        let mut upper = vec![f64::NEG_INFINITY; l];
        for p in &self.points {
            for i in 0..l {
                lower[i] = lower[i].min(p[i]);
                upper[i] = upper[i].max(p[i]);
            }
        }
        CalibrationDomain { lower, upper }
    }
}

/// Averaged slab-scan counts for one detector channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabScans {
    /// Effective pathlengths seen by this channel.
    pub points: Vec<Vec<f64>>,
    /// `points × bins` mean counts.
    pub mean_counts: Array2<f64>,
    pub air_total: f64,
}

/// Empirical DRF samples `φ̂(p_s)` for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DrfSamples {
    pub points: Vec<Vec<f64>>,
    /// `points × bins`
    pub phi: Array2<f64>,
}

/// `φ̂_k(p_s) = −log(λ̂_k(p_s) / λ̂_Σ)`.
pub fn measure_drf(scans: &SlabScans) -> Result<DrfSamples> {
    if !(scans.air_total > 0.0) {
        return Err(Error::InvalidArgument("air total must be positive".into()));
    }
    if scans.mean_counts.nrows() != scans.points.len() {
        return Err(Error::Shape(
            "one row of counts per calibration point is required".into(),
        ));
    }
    let mut phi = scans.mean_counts.clone();
    for ((s, k), v) in phi.indexed_iter_mut() {
        if !(*v > 0.0) {
            return Err(Error::PhotonStarvation {
                point: s,
                pathlength: scans.points[s].clone(),
                bin: k,
            });
        }
        *v = -(*v / scans.air_total).ln();
    }
    Ok(DrfSamples {
        points: scans.points.clone(),
        phi,
    })
}

/// Simulated single-view slab scans for every detector channel. Slabs are
/// perpendicular to the iso-ray, so channel `j` sees `p_s / cos γ_j`.
/// With `noise`, each point is scanned `design.repeats` times and averaged.
pub fn slab_scan_protocol(
    model: &SpectralModel,
    design: &CalibrationDesign,
    geometry: &ScanGeometry,
    dose_scale: f64,
    noise: bool,
    seed: u64,
) -> Result<Vec<SlabScans>> {
    if design.points[0].len() != model.n_materials() {
        return Err(Error::Shape(format!(
            "design has {} materials, spectral model has {}",
            design.points[0].len(),
            model.n_materials()
        )));
    }
    let air_total = model.air_total(dose_scale);
    let k = model.n_bins();
    let out = (0..geometry.n_channels)
        .into_par_iter()
        .map(|ch| {
            let stretch = 1.0 / geometry.fan_angle(ch).cos();
            let points: Vec<Vec<f64>> = design
                .points
                .iter()
                .map(|p| p.iter().map(|v| v * stretch).collect())
                .collect();
            let mut mean_counts = Array2::zeros((points.len(), k));
            let mut lam = vec![0.0; k];
            for (s, p) in points.iter().enumerate() {
                model.expected_counts_into(p, dose_scale, &mut lam);
                if noise {
                    let mut rng = projection_rng(seed, (ch * design.points.len() + s) as u64);
                    for (b, &l) in lam.iter().enumerate() {
                        // The mean of n Poisson(λ) draws is Poisson(nλ)/n.
                        let n = design.repeats as f64;
                        let total = if l > 0.0 {
                            rand_distr::Distribution::sample(&rand_distr::Poisson::new(n * l).unwrap(), &mut rng)
                        } else {
                            0.0
                        };
                        mean_counts[(s, b)] = total / n;
                    }
                } else {
                    mean_counts.row_mut(s).assign(&ndarray::ArrayView1::from(&lam));
                }
            }
            SlabScans {
                points,
                mean_counts,
                air_total,
            }
        })
        .collect();
    Ok(out)
}

/// Polynomial DRF of one detector: tensor-product monomials of the
/// shifted-scaled pathlengths `u_l = (p_l − shift_l) / scale_l` with
/// exponents `0..=order` per material. Term `t` for L = 2 is
/// `u_0^a u_1^b` with `t = a (order+1) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrfPolynomial {
    order: usize,
    n_bins: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// `terms × bins`, row-major
    theta: Vec<f64>,
    domain: CalibrationDomain,
    exponents: Vec<[u8; MAX_MATERIALS]>,
}

/// Goodness of a least-squares DRF fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// Largest absolute residual over the fitted samples.
    pub max_residual: f64,
    pub rms_residual: f64,
}

fn exponents_for(order: usize, l: usize) -> Vec<[u8; MAX_MATERIALS]> {
    let n = (order + 1).pow(l as u32);
    (0..n)
        .map(|mut t| {
            let mut e = [0u8; MAX_MATERIALS];
            for i in (0..l).rev() {
                e[i] = (t % (order + 1)) as u8;
                t /= order + 1;
            }
            e
        })
        .collect()
}

impl DrfPolynomial {
    /// Builds a polynomial from coefficients in the given basis. `theta` is
    /// `terms × bins`.
    pub fn from_parts(
        order: usize,
        shift: Vec<f64>,
        scale: Vec<f64>,
        theta: Array2<f64>,
        domain: CalibrationDomain,
    ) -> Result<Self> {
        let l = shift.len();
        if l == 0 || l > MAX_MATERIALS || scale.len() != l || domain.n_materials() != l {
            return Err(Error::Shape(format!("unsupported material count {l}")));
        }
        if order > MAX_ORDER {
            return Err(Error::InvalidArgument(format!("order {order} exceeds {MAX_ORDER}")));
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("basis scales must be positive".into()));
        }
        let terms = (order + 1).pow(l as u32);
        if theta.nrows() != terms {
            return Err(Error::Shape(format!(
                "theta has {} rows, expected {terms}",
                theta.nrows()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(Self {
            order,
            n_bins: theta.ncols(),
            shift,
            scale,
            theta: theta.as_standard_layout().iter().copied().collect(),
            domain,
            exponents: exponents_for(order, l),
        })
    }

    /// Coefficients of raw monomials `p_0^a p_1^b …` in cm.
    pub fn from_raw_coefficients(order: usize, theta: Array2<f64>, domain: CalibrationDomain) -> Result<Self> {
        let l = domain.n_materials();
        Self::from_parts(order, vec![0.0; l], vec![1.0; l], theta, domain)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_materials(&self) -> usize {
        self.shift.len()
    }

    pub fn n_terms(&self) -> usize {
        self.exponents.len()
    }

    pub fn domain(&self) -> &CalibrationDomain {
        &self.domain
    }

    pub fn basis_shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn basis_scale(&self) -> &[f64] {
        &self.scale
    }

    /// `terms × bins` coefficients in the shifted-scaled basis.
    pub fn theta(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n_terms(), self.n_bins), self.theta.clone()).unwrap()
    }

    pub fn exponents(&self, term: usize) -> &[u8] {
        &self.exponents[term][..self.n_materials()]
    }

    fn powers(&self, p: &[f64]) -> [[f64; MAX_ORDER + 1]; MAX_MATERIALS] {
        let mut pw = [[1.0; MAX_ORDER + 1]; MAX_MATERIALS];
        for l in 0..self.n_materials() {
            let u = (p[l] - self.shift[l]) / self.scale[l];
            for e in 1..=self.order {
                pw[l][e] = pw[l][e - 1] * u;
            }
        }
        pw
    }

    /// `φ(p)` into `phi` (length K).
    pub fn eval_into(&self, p: &[f64], phi: &mut [f64]) {
        let k = self.n_bins;
        let l = self.n_materials();
        let pw = self.powers(p);
        phi.iter_mut().for_each(|v| *v = 0.0);
        for (t, e) in self.exponents.iter().enumerate() {
            let mut m = 1.0;
            for i in 0..l {
                m *= pw[i][e[i] as usize];
            }
            let coef = &self.theta[t * k..(t + 1) * k];
            for (o, c) in phi.iter_mut().zip(coef) {
                *o += m * c;
            }
        }
    }

    /// `φ(p)` into `phi` and the Jacobian `∂φ_k/∂p_l` into `grad`
    /// (`K × L`, row-major).
    pub fn eval_grad_into(&self, p: &[f64], phi: &mut [f64], grad: &mut [f64]) {
        let k = self.n_bins;
        let l = self.n_materials();
        let pw = self.powers(p);
        phi.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut dm = [0.0; MAX_MATERIALS];
        for (t, e) in self.exponents.iter().enumerate() {
            let mut m = 1.0;
            for i in 0..l {
                m *= pw[i][e[i] as usize];
            }
            for (j, d) in dm.iter_mut().enumerate().take(l) {
                let ej = e[j] as usize;
                *d = if ej == 0 {
                    0.0
                } else {
                    let mut v = ej as f64 * pw[j][ej - 1] / self.scale[j];
                    for i in (0..l).filter(|&i| i != j) {
                        v *= pw[i][e[i] as usize];
                    }
                    v
                };
            }
            let coef = &self.theta[t * k..(t + 1) * k];
            for (b, c) in coef.iter().enumerate() {
                phi[b] += m * c;
                for j in 0..l {
                    grad[b * l + j] += dm[j] * c;
                }
            }
        }
    }

    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; self.n_bins];
        self.eval_into(p, &mut phi);
        phi
    }

    /// Jacobian as a `K × L` array.
    pub fn grad(&self, p: &[f64]) -> Array2<f64> {
        let mut phi = vec![0.0; self.n_bins];
        let mut g = Array2::zeros((self.n_bins, self.n_materials()));
        self.eval_grad_into(p, &mut phi, g.as_slice_mut().unwrap());
        g
    }

    /// Whether `p` is inside the calibrated box; evaluation outside it is
    /// polynomial extrapolation.
    pub fn in_domain(&self, p: &[f64]) -> bool {
        self.domain.contains(p)
    }
}

/// Least-squares fit of an order-`order` polynomial per bin. The basis is
/// shifted and scaled to map `domain` onto `[−1, 1]` per material.
pub fn fit_drf(samples: &DrfSamples, order: usize, domain: &CalibrationDomain) -> Result<(DrfPolynomial, FitReport)> {
    let l = domain.n_materials();
    if l > MAX_MATERIALS || order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "order {order} with {l} materials is not supported"
        )));
    }
    if samples.points.iter().any(|p| p.len() != l) {
        return Err(Error::Shape("sample dimension differs from domain".into()));
    }
    let terms = (order + 1).pow(l as u32);
    let mut distinct: Vec<&Vec<f64>> = samples.points.iter().collect();
    distinct.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < terms {
        return Err(Error::RankDeficient(format!(
            "{} distinct points for {terms} coefficients",
            distinct.len()
        )));
    }
    let shift: Vec<f64> = (0..l).map(|i| 0.5 * (domain.lower[i] + domain.upper[i])).collect();
    let scale: Vec<f64> = (0..l)
        .map(|i| {
            let h = 0.5 * (domain.upper[i] - domain.lower[i]);
            if h > 0.0 {
                h
            } else {
                1.0
            }
        })
        .collect();
    let k = samples.phi.ncols();
    let probe = DrfPolynomial::from_parts(
        order,
        shift.clone(),
        scale.clone(),
        Array2::zeros((terms, 1)),
        domain.clone(),
    )?;
    let s = samples.points.len();
    let mut design = vec![0.0; s * terms];
    for (i, p) in samples.points.iter().enumerate() {
        let pw = probe.powers(p);
        for (t, e) in probe.exponents.iter().enumerate() {
            design[i * terms + t] = (0..l).map(|m| pw[m][e[m] as usize]).product();
        }
    }
    let rhs: Vec<f64> = samples.phi.as_standard_layout().iter().copied().collect();
    let theta = crate::linalg::lstsq(&design, &rhs, s, terms, k)
        .ok_or_else(|| Error::RankDeficient("design matrix is rank deficient".into()))?;
    let drf = DrfPolynomial::from_parts(
        order,
        shift,
        scale,
        Array2::from_shape_vec((terms, k), theta).unwrap(),
        domain.clone(),
    )?;
    let mut max_residual: f64 = 0.0;
    let mut sq = 0.0;
    let mut phi = vec![0.0; k];
    for (i, p) in samples.points.iter().enumerate() {
        drf.eval_into(p, &mut phi);
        for b in 0..k {
            let r = (phi[b] - samples.phi[(i, b)]).abs();
            max_residual = max_residual.max(r);
            sq += r * r;
        }
    }
    let report = FitReport {
        max_residual,
        rms_residual: (sq / (s * k) as f64).sqrt(),
    };
    Ok((drf, report))
}

/// DRFs for every detector channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub detectors: Vec<DrfPolynomial>,
    pub bin_edges: Vec<f64>,
}

impl Calibration {
    pub fn n_bins(&self) -> usize {
        self.detectors[0].n_bins()
    }

    pub fn n_materials(&self) -> usize {
        self.detectors[0].n_materials()
    }

    /// Smallest box containing every detector's domain.
    pub fn domain_envelope(&self) -> CalibrationDomain {
        self.detectors
            .iter()
            .skip(1)
            .fold(self.detectors[0].domain().clone(), |acc, d| acc.union(d.domain()))
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .detectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("calibration has no detectors".into()))?;
        if self
            .detectors
            .iter()
            .any(|d| d.n_bins() != first.n_bins() || d.n_materials() != first.n_materials())
        {
            return Err(Error::Shape("detectors disagree on bin or material count".into()));
        }
        if self.bin_edges.len() != first.n_bins() + 1 {
            return Err(Error::Shape("bin edges do not match bin count".into()));
        }
        Ok(())
    }
}

/// Result of [`calibrate`].
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub max_residual: f64,
    pub worst_channel: usize,
}

/// Runs the slab-scan protocol, measures the DRF and fits one polynomial per
/// channel.
pub fn calibrate(
    model: &SpectralModel,
    design: &CalibrationDesign,
    geometry: &ScanGeometry,
    order: usize,
    dose_scale: f64,
    noise: bool,
    seed: u64,
) -> Result<(Calibration, CalibrationReport)> {
    let scans = slab_scan_protocol(model, design, geometry, dose_scale, noise, seed)?;
    let base = design.domain();
    let fits = scans
        .par_iter()
        .enumerate()
        .map(|(ch, s)| {
            let stretch = 1.0 / geometry.fan_angle(ch).cos();
            let samples = measure_drf(s)?;
            fit_drf(&samples, order, &base.scaled(stretch))
        })
        .collect::<Result<Vec<_>>>()?;
    let (worst_channel, max_residual) = fits
        .iter()
        .map(|(_, r)| r.max_residual)
        .enumerate()
        .fold((0, 0.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
    let calibration = Calibration {
        detectors: fits.into_iter().map(|(d, _)| d).collect(),
        bin_edges: model.bin_edges().to_vec(),
    };
    Ok((
        calibration,
        CalibrationReport {
            max_residual,
            worst_channel,
        },
    ))
}
