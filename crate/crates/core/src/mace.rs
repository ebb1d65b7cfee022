//! Consensus-equilibrium solver (Mann iteration over a data agent and a
//! prior agent) and the grid-search-initialized maximum-likelihood
//! decomposition.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{Calibration, CalibrationDomain};
use crate::detector::{prox_partial_update_in_place, DetectorAgent, ProxParams, ProxScratch};
use crate::error::{Error, Result};
use crate::prior::{Denoiser, PriorSpec};
use crate::sinogram::{PathlengthSinogram, TransmissionSinogram};

/// A data-fitting agent that can be warm-started.
pub trait DataAgent: Sync {
    /// `F(p)` starting its inner iterations from `warm`.
    fn apply_warm(&self, p: &PathlengthSinogram, warm: &PathlengthSinogram) -> Result<PathlengthSinogram>;
}

impl DataAgent for DetectorAgent<'_> {
    fn apply_warm(&self, p: &PathlengthSinogram, warm: &PathlengthSinogram) -> Result<PathlengthSinogram> {
        DetectorAgent::apply_warm(self, p, warm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    /// Grid points per material for the initial exhaustive search.
    pub grid_points: Vec<usize>,
    /// Search box; each detector's calibration domain when absent.
    pub grid_lower: Option<Vec<f64>>,
    pub grid_upper: Option<Vec<f64>>,
    pub n_mle: usize,
    pub sigma_mle: f64,
    pub n_sub: usize,
    /// Mann iterations for rows that diverge and are re-solved with a clip prior.
    pub fallback_iterations: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            grid_points: vec![41, 41],
            grid_lower: None,
            grid_upper: None,
            n_mle: 100,
            sigma_mle: 1e3,
            n_sub: 1,
            fallback_iterations: 50,
        }
    }
}

impl MleConfig {
    /// Shorter refinement used to initialize MACE.
    pub fn for_mace_init() -> Self {
        Self {
            n_mle: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_materials: usize) -> Result<()> {
        if self.grid_points.len() != n_materials || self.grid_points.contains(&0) {
            return Err(Error::config(
                "mle.grid_points",
                format!("needs {n_materials} positive counts"),
            ));
        }
        if self.n_mle == 0 {
            return Err(Error::config("mle.n_mle", "must be at least 1"));
        }
        if self.grid_lower.is_some() != self.grid_upper.is_some() {
            return Err(Error::config("mle.grid_lower/grid_upper", "give both or neither"));
        }
        if let (Some(lo), Some(hi)) = (&self.grid_lower, &self.grid_upper) {
            if lo.len() != n_materials || hi.len() != n_materials {
                return Err(Error::config(
                    "mle.grid_lower/grid_upper",
                    format!("needs {n_materials} values"),
                ));
            }
            CalibrationDomain::new(lo.clone(), hi.clone())?;
        }
        self.prox().validate()
    }

    fn prox(&self) -> ProxParams {
        ProxParams::new(self.sigma_mle, self.n_sub)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaceConfig {
    pub rho: f64,
    pub n_mace: usize,
    pub prox: ProxParams,
    pub prior: PriorSpec,
    pub init: MleConfig,
}

impl Default for MaceConfig {
    fn default() -> Self {
        Self {
            rho: 0.8,
            n_mace: 20,
            prox: ProxParams::new(1.0, 1),
            prior: PriorSpec::gaussian(2.0),
            init: MleConfig::for_mace_init(),
        }
    }
}

impl MaceConfig {
    pub fn validate(&self, n_materials: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("mace.rho", "must lie in (0, 1)"));
        }
        if self.n_mace == 0 {
            return Err(Error::config("mace.n_mace", "must be at least 1"));
        }
        self.prox.validate()?;
        self.prior.validate(n_materials)?;
        self.init.validate(n_materials)
    }
}

/// `‖F-output − H-output‖ / ‖H-output‖` (absolute when the H-output is zero).
pub fn equilibrium_residual(f_out: &PathlengthSinogram, h_out: &PathlengthSinogram) -> f64 {
    let diff: f64 = f_out
        .0
        .iter()
        .zip(h_out.0.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = h_out.norm();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// Final state of a Mann iteration.
#[derive(Debug, Clone)]
pub struct MaceOutcome {
    /// Last data-agent output `p′` (the returned reconstruction).
    pub estimate: PathlengthSinogram,
    /// Mann state `p`.
    pub consensus: PathlengthSinogram,
    /// Equilibrium residual after each iteration.
    pub residuals: Vec<f64>,
}

fn axpby(a: f64, x: &PathlengthSinogram, b: f64, y: &PathlengthSinogram) -> PathlengthSinogram {
    let mut out = x.clone();
    out.as_slice_mut()
        .par_iter_mut()
        .zip(y.as_slice().par_iter())
        .for_each(|(o, y)| *o = a * *o + b * y);
    out
}

/// Mann iteration for the consensus equilibrium of `data` and `prior`:
///
/// ```text
/// p₁ ← 2H(p) − p
/// p′ ← F(p₁)          (warm-started at the previous p′)
/// p₁ ← 2p′ − p₁
/// p  ← (1 − ρ)p + ρp₁
/// ```
pub fn mann_iterate<F, H>(
    data: &F,
    prior: &H,
    init: &PathlengthSinogram,
    rho: f64,
    n_iter: usize,
) -> Result<MaceOutcome>
where
    F: DataAgent + ?Sized,
    H: Denoiser + ?Sized,
{
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
    }
    if n_iter == 0 {
        return Err(Error::InvalidArgument("at least one MACE iteration is required".into()));
    }
    let mut p = init.clone();
    let mut p_prime = init.clone();
    let mut residuals = Vec::with_capacity(n_iter);
    for i in 0..n_iter {
        let hp = prior.denoise(&p)?;
        let p1 = axpby(2.0, &hp, -1.0, &p);
        p_prime = data.apply_warm(&p1, &p_prime)?;
        residuals.push(equilibrium_residual(&p_prime, &hp));
        let p1 = axpby(2.0, &p_prime, -1.0, &p1);
        p = axpby(1.0 - rho, &p, rho, &p1);
        if !p.is_finite() || !p_prime.is_finite() {
            return Err(Error::NonFinite {
                context: format!("MACE iteration {i}"),
            });
        }
        log::debug!("mace iteration {i}: residual {:.3e}", residuals[i]);
    }
    Ok(MaceOutcome {
        estimate: p_prime,
        consensus: p,
        residuals,
    })
}

/// Per-channel table of `φ` and `e^{−φ}` at the search grid.
struct GridTable {
    points: Vec<Vec<f64>>,
    phi: Vec<f64>,
    exp_neg_phi: Vec<f64>,
}

fn grid_box(cfg: &MleConfig, domain: &CalibrationDomain) -> CalibrationDomain {
    match (&cfg.grid_lower, &cfg.grid_upper) {
        (Some(lo), Some(hi)) => CalibrationDomain {
            lower: lo.clone(),
            upper: hi.clone(),
        },
        _ => domain.clone(),
    }
}

fn grid_table(cfg: &MleConfig, drf: &crate::calibration::DrfPolynomial) -> GridTable {
    let bx = grid_box(cfg, drf.domain());
    let l = bx.n_materials();
    let total: usize = cfg.grid_points.iter().product();
    let axis = |m: usize, i: usize| {
        let n = cfg.grid_points[m];
        if n == 1 {
            0.5 * (bx.lower[m] + bx.upper[m])
        } else {
            bx.lower[m] + (bx.upper[m] - bx.lower[m]) * i as f64 / (n - 1) as f64
        }
    };
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; l];
            for m in (0..l).rev() {
                p[m] = axis(m, idx % cfg.grid_points[m]);
                idx /= cfg.grid_points[m];
            }
            p
        })
        .collect();
    let k = drf.n_bins();
    let mut phi = vec![0.0; total * k];
    for (i, p) in points.iter().enumerate() {
        drf.eval_into(p, &mut phi[i * k..(i + 1) * k]);
    }
    let exp_neg_phi = phi.iter().map(|v| (-v.clamp(-50.0, 50.0)).exp()).collect();
    GridTable {
        points,
        phi,
        exp_neg_phi,
    }
}

fn check_inputs(t: &TransmissionSinogram, air_total: &Array2<f64>, calibration: &Calibration) -> Result<()> {
    calibration.validate()?;
    let (v, c, k) = t.t.dim();
    if air_total.dim() != (v, c) {
        return Err(Error::Shape("air totals do not match the transmission sinogram".into()));
    }
    if k != calibration.n_bins() {
        return Err(Error::Shape(format!(
            "transmission has {k} bins but the calibration has {}",
            calibration.n_bins()
        )));
    }
    if calibration.detectors.len() != c {
        return Err(Error::Shape(format!(
            "calibration covers {} channels, sinogram has {c}",
            calibration.detectors.len()
        )));
    }
    Ok(())
}

/// Exhaustive search of `Σ_k e^{−φ_k(p)} + φ_k(p) T_k` over the configured
/// grid, per projection.
pub fn grid_search(t: &TransmissionSinogram, calibration: &Calibration, cfg: &MleConfig) -> Result<PathlengthSinogram> {
    calibration.validate()?;
    let l = calibration.n_materials();
    cfg.validate(l)?;
    let (nv, nc, k) = t.t.dim();
    if k != calibration.n_bins() || calibration.detectors.len() != nc {
        return Err(Error::Shape("transmission does not match calibration".into()));
    }
    if let (Some(lo), Some(hi)) = (&cfg.grid_lower, &cfg.grid_upper) {
        if let Some(c) = calibration
            .detectors
            .iter()
            .position(|d| !(d.domain().contains(lo) && d.domain().contains(hi)))
        {
            return Err(Error::config(
                "mle.grid_lower/grid_upper",
                format!("search box leaves the calibration domain of channel {c}"),
            ));
        }
    }
    let columns: Vec<Vec<f64>> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let table = grid_table(cfg, &calibration.detectors[c]);
            let mut col = Vec::with_capacity(nv * l);
            for v in 0..nv {
                let tr = t.t.slice(ndarray::s![v, c, ..]);
                let tr = tr.as_slice().expect("standard layout");
                let mut best = (f64::INFINITY, 0usize);
                for g in 0..table.points.len() {
                    let phi = &table.phi[g * k..(g + 1) * k];
                    let e = &table.exp_neg_phi[g * k..(g + 1) * k];
                    let mut loss = 0.0;
                    for b in 0..k {
                        loss += e[b] + phi[b] * tr[b];
                    }
                    if loss < best.0 {
                        best = (loss, g);
                    }
                }
                col.extend_from_slice(&table.points[best.1]);
            }
            col
        })
        .collect();
    let mut out = PathlengthSinogram::zeros(nv, nc, l);
    for (c, col) in columns.iter().enumerate() {
        for v in 0..nv {
            for m in 0..l {
                out.0[(v, c, m)] = col[v * l + m];
            }
        }
    }
    Ok(out)
}

/// Result of [`mle_decompose`].
#[derive(Debug, Clone)]
pub struct MleOutcome {
    pub pathlengths: PathlengthSinogram,
    /// Flat projection indices whose refinement diverged and were re-solved
    /// with a clip prior.
    pub divergent_rows: Vec<usize>,
}

/// Grid search followed by `n_mle` rounds of `p ← F(p; p)`.
pub fn mle_decompose(
    t: &TransmissionSinogram,
    air_total: &Array2<f64>,
    calibration: &Calibration,
    cfg: &MleConfig,
) -> Result<MleOutcome> {
    check_inputs(t, air_total, calibration)?;
    let l = calibration.n_materials();
    cfg.validate(l)?;
    let start = grid_search(t, calibration, cfg)?;
    let params = cfg.prox();
    let k = t.n_bins();
    let nc = calibration.detectors.len();
    let tr = t.as_slice();
    let air = air_total
        .as_slice()
        .ok_or_else(|| Error::Shape("air totals not contiguous".into()))?;
    let mut refined = start.clone();
    let diverged: Vec<usize> = refined
        .as_slice_mut()
        .par_chunks_mut(l)
        .enumerate()
        .map_init(
            || (ProxScratch::new(k, l), vec![0.0; l]),
            |(scratch, anchor), (m, p)| {
                let drf = &calibration.detectors[m % nc];
                let limit = drf.domain().expanded(2.0);
                let t_row = &tr[m * k..(m + 1) * k];
                for _ in 0..cfg.n_mle {
                    anchor.copy_from_slice(p);
                    if prox_partial_update_in_place(anchor, p, t_row, air[m], drf, &params, scratch).is_err() {
                        return Some(m);
                    }
                }
                (!limit.contains(p)).then_some(m)
            },
        )
        .flatten()
        .collect();
    if !diverged.is_empty() {
        log::warn!(
            "{} of {} projections diverged; re-solving with a clip prior",
            diverged.len(),
            air.len()
        );
        let fixed = resolve_with_clip(tr, air, &start, &diverged, calibration, cfg)?;
        for (i, &m) in diverged.iter().enumerate() {
            refined.as_slice_mut()[m * l..(m + 1) * l].copy_from_slice(&fixed[i * l..(i + 1) * l]);
        }
    }
    Ok(MleOutcome {
        pathlengths: refined,
        divergent_rows: diverged,
    })
}

/// MACE with `H` = clip to the calibration box, on a subset of projections.
fn resolve_with_clip(
    tr: &[f64],
    air: &[f64],
    start: &PathlengthSinogram,
    rows: &[usize],
    calibration: &Calibration,
    cfg: &MleConfig,
) -> Result<Vec<f64>> {
    let k = calibration.n_bins();
    let l = calibration.n_materials();
    let nc = calibration.detectors.len();
    let sub_t: Vec<f64> = rows
        .iter()
        .flat_map(|&m| tr[m * k..(m + 1) * k].iter().copied())
        .collect();
    let sub_air: Vec<f64> = rows.iter().map(|&m| air[m]).collect();
    let detectors: Vec<usize> = rows.iter().map(|&m| m % nc).collect();
    let mut init = PathlengthSinogram::zeros(1, rows.len(), l);
    for (i, &m) in rows.iter().enumerate() {
        init.as_slice_mut()[i * l..(i + 1) * l].copy_from_slice(&start.as_slice()[m * l..(m + 1) * l]);
    }
    let agent = DetectorAgent::for_rows(&sub_t, &sub_air, detectors, calibration, cfg.prox());
    let clip = PriorSpec::clip(&calibration.domain_envelope());
    let out = mann_iterate(&agent, &clip, &init, 0.8, cfg.fallback_iterations.max(1))?;
    Ok(out.estimate.as_slice().to_vec())
}

/// Full MACE decomposition: MLE initialization (unless `init` is given)
/// followed by the Mann iteration between the detector agent and the
/// configured prior.
pub fn run_mace(
    t: &TransmissionSinogram,
    air_total: &Array2<f64>,
    calibration: &Calibration,
    cfg: &MaceConfig,
    init: Option<&PathlengthSinogram>,
) -> Result<MaceOutcome> {
    check_inputs(t, air_total, calibration)?;
    let l = calibration.n_materials();
    cfg.validate(l)?;
    let (nv, nc, _) = t.t.dim();
    let owned;
    let init = match init {
        Some(p) => {
            p.check_shape(nv, nc, l)?;
            p
        }
        None => {
            owned = mle_decompose(t, air_total, calibration, &cfg.init)?.pathlengths;
            &owned
        }
    };
    let agent = DetectorAgent::new(t, air_total, calibration, cfg.prox)?;
    mann_iterate(&agent, &cfg.prior, init, cfg.rho, cfg.n_mace)
}
