//! Detector agent: per-projection Poisson loss, its optimal quadratic
//! surrogate, and the partial-update proximal map
//! `F_j(p; p′) = (AᵗCA + I/α²)⁻¹ [Aᵗ(CAp′ − b) + p/α²]`, `α = σ√λ_Σ`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{Calibration, DrfPolynomial, MAX_MATERIALS};
use crate::error::{Error, Result};
use crate::sinogram::{PathlengthSinogram, TransmissionSinogram};

/// Exponent arguments are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 50.0;

/// Default surrogate offset `ε`.
pub const DEFAULT_EPSILON: f64 = 1e-3;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times an exponent argument has been clamped to ±[`EXP_CLAMP`]
/// since process start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[inline]
fn clamped(z: f64) -> f64 {
    if z.abs() > EXP_CLAMP {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        z.clamp(-EXP_CLAMP, EXP_CLAMP)
    } else {
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxParams {
    /// Proximal strength σ (cm).
    pub sigma: f64,
    /// Partial updates per application.
    pub n_sub: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl ProxParams {
    pub fn new(sigma: f64, n_sub: usize) -> Self {
        Self {
            sigma,
            n_sub,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.n_sub == 0 {
            return Err(Error::InvalidArgument("n_sub must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `g(z; T) = Σ_k e^{−z_k} + T_k z_k`.
pub fn transmission_loss(z: &[f64], t: &[f64]) -> f64 {
    z.iter().zip(t).map(|(&z, &t)| (-clamped(z)).exp() + t * z).sum()
}

/// Per-projection loss `f_j(p) = λ_Σ Σ_k [e^{−φ_k(p)} + T_k φ_k(p)]`
/// with the data-only constant dropped.
pub fn detector_loss(p: &[f64], t: &[f64], air_total: f64, drf: &DrfPolynomial) -> f64 {
    air_total * transmission_loss(&drf.eval(p), t)
}

/// Quadratic `b·(z − z_ref) + ½ (z − z_ref)ᵗ diag(c) (z − z_ref)` that
/// majorizes `g(z; T) − g(z_ref; T)` on `z ≥ z_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateQuadratic {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub z_ref: Vec<f64>,
    pub z_min: Vec<f64>,
}

/// Optimal curvature of the surrogate for `e^{−z}` over `[z_ref − δ, ∞)`:
/// `2 (e^{−z_min} − e^{−z_ref}(1 + δ)) / δ²`, written with `expm1` so it
/// stays accurate for small `δ`.
#[inline]
fn optimal_curvature(z_ref: f64, delta: f64) -> f64 {
    2.0 * (-clamped(z_ref)).exp() * (delta.exp_m1() - delta) / (delta * delta)
}

impl SurrogateQuadratic {
    pub fn value(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.z_ref)
            .zip(self.b.iter().zip(&self.c))
            .map(|((z, r), (b, c))| {
                let d = z - r;
                b * d + 0.5 * c * d * d
            })
            .sum()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.z_ref)
            .zip(self.b.iter().zip(&self.c))
            .map(|((z, r), (b, c))| b + c * (z - r))
            .collect()
    }
}

/// Surrogate expanded at `z_ref` with `z_min = z_ref − ε`.
pub fn surrogate_at(z_ref: &[f64], t: &[f64], epsilon: f64) -> SurrogateQuadratic {
    let b = z_ref.iter().zip(t).map(|(&z, &t)| -(-clamped(z)).exp() + t).collect();
    let c = z_ref.iter().map(|&z| optimal_curvature(z, epsilon)).collect();
    SurrogateQuadratic {
        b,
        c,
        z_ref: z_ref.to_vec(),
        z_min: z_ref.iter().map(|z| z - epsilon).collect(),
    }
}

/// Scratch buffers for the hot loop.
pub(crate) struct ProxScratch {
    phi: Vec<f64>,
    grad: Vec<f64>,
}

impl ProxScratch {
    pub(crate) fn new(k: usize, l: usize) -> Self {
        Self {
            phi: vec![0.0; k],
            grad: vec![0.0; k * l],
        }
    }
}

/// One application of [`prox_partial_update`] on borrowed buffers;
/// `p_prime` is updated in place.
pub(crate) fn prox_partial_update_in_place(
    p: &[f64],
    p_prime: &mut [f64],
    t: &[f64],
    air_total: f64,
    drf: &DrfPolynomial,
    params: &ProxParams,
    scratch: &mut ProxScratch,
) -> Result<()> {
    let l = p.len();
    let k = t.len();
    let inv_alpha2 = 1.0 / (params.sigma * params.sigma * air_total);
    for _ in 0..params.n_sub {
        drf.eval_grad_into(p_prime, &mut scratch.phi, &mut scratch.grad);
        // H = AᵗCA + I/α², r = Aᵗb + (p′ − p)/α²; step p′ ← p′ − H⁻¹ r.
        let mut h = [0.0; MAX_MATERIALS * MAX_MATERIALS];
        let mut r = [0.0; MAX_MATERIALS];
        for b in 0..k {
            let z = scratch.phi[b];
            let e = (-clamped(z)).exp();
            let grad_b = -e + t[b];
            let c = optimal_curvature(z, params.epsilon);
            let row = &scratch.grad[b * l..(b + 1) * l];
            for i in 0..l {
                r[i] += row[i] * grad_b;
                for j in 0..=i {
                    h[i * l + j] += c * row[i] * row[j];
                }
            }
        }
        for i in 0..l {
            r[i] += (p_prime[i] - p[i]) * inv_alpha2;
            h[i * l + i] += inv_alpha2;
            for j in 0..i {
                h[j * l + i] = h[i * l + j];
            }
        }
        if l == 2 {
            let det = h[0] * h[3] - h[1] * h[1];
            if !(det > 0.0 && det.is_finite()) {
                return Err(Error::Singular(format!("surrogate Hessian determinant {det}")));
            }
            p_prime[0] -= (h[3] * r[0] - h[1] * r[1]) / det;
            p_prime[1] -= (h[0] * r[1] - h[1] * r[0]) / det;
        } else {
            if !crate::linalg::solve_spd(&mut h[..l * l], &mut r[..l], l).is_some() {
                return Err(Error::Singular("surrogate Hessian".into()));
            }
            for i in 0..l {
                p_prime[i] -= r[i];
            }
        }
        if p_prime.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "partial-update proximal map".into(),
            });
        }
    }
    Ok(())
}

/// `N` partial updates of the single-detector proximal map, starting at
/// `p_prime`, each minimizing the Taylor-linearized surrogate plus
/// `‖q − p‖² / (2σ²)`.
pub fn prox_partial_update(
    p: &[f64],
    p_prime: &[f64],
    t: &[f64],
    air_total: f64,
    drf: &DrfPolynomial,
    params: &ProxParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if p.len() != drf.n_materials() || p_prime.len() != p.len() {
        return Err(Error::Shape("pathlength length differs from DRF material count".into()));
    }
    if t.len() != drf.n_bins() {
        return Err(Error::Shape("transmission length differs from DRF bin count".into()));
    }
    if !(air_total > 0.0) {
        return Err(Error::InvalidArgument("air total must be positive".into()));
    }
    let mut out = p_prime.to_vec();
    let mut scratch = ProxScratch::new(t.len(), p.len());
    prox_partial_update_in_place(p, &mut out, t, air_total, drf, params, &mut scratch)?;
    Ok(out)
}

/// Which detector polynomial serves each sinogram row.
#[derive(Debug, Clone)]
pub(crate) enum RowDetectors {
    /// Row `m` uses detector `m % n_channels`.
    Channels(usize),
    Explicit(Vec<usize>),
}

impl RowDetectors {
    #[inline]
    pub(crate) fn of(&self, row: usize) -> usize {
        match self {
            RowDetectors::Channels(c) => row % c,
            RowDetectors::Explicit(v) => v[row],
        }
    }
}

/// The separable detector agent `F(p) = [F_0(p_0), …, F_{M−1}(p_{M−1})]`
/// bound to measured data.
#[derive(Debug, Clone)]
pub struct DetectorAgent<'a> {
    t: &'a [f64],
    air: &'a [f64],
    n_bins: usize,
    calibration: &'a Calibration,
    rows: RowDetectors,
    pub params: ProxParams,
}

impl<'a> DetectorAgent<'a> {
    pub fn new(
        t: &'a TransmissionSinogram,
        air_total: &'a Array2<f64>,
        calibration: &'a Calibration,
        params: ProxParams,
    ) -> Result<Self> {
        params.validate()?;
        calibration.validate()?;
        let (v, c, k) = t.t.dim();
        if air_total.dim() != (v, c) {
            return Err(Error::Shape(format!(
                "air totals {:?} do not match transmission {:?}",
                air_total.dim(),
                (v, c)
            )));
        }
        if k != calibration.n_bins() {
            return Err(Error::Shape(format!(
                "transmission has {k} bins, calibration has {}",
                calibration.n_bins()
            )));
        }
        if calibration.detectors.len() != c {
            return Err(Error::Shape(format!(
                "calibration covers {} channels, sinogram has {c}",
                calibration.detectors.len()
            )));
        }
        Ok(Self {
            t: t.as_slice(),
            air: air_total
                .as_slice()
                .ok_or_else(|| Error::Shape("air totals not contiguous".into()))?,
            n_bins: k,
            calibration,
            rows: RowDetectors::Channels(c),
            params,
        })
    }

    /// Agent over an arbitrary list of rows: `t` is `rows × bins`, and
    /// `detectors[i]` indexes the calibration for row `i`.
    pub(crate) fn for_rows(
        t: &'a [f64],
        air: &'a [f64],
        detectors: Vec<usize>,
        calibration: &'a Calibration,
        params: ProxParams,
    ) -> Self {
        Self {
            t,
            air,
            n_bins: calibration.n_bins(),
            calibration,
            rows: RowDetectors::Explicit(detectors),
            params,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.air.len()
    }

    pub(crate) fn row_data(&self, m: usize) -> (&[f64], f64, &DrfPolynomial) {
        (
            &self.t[m * self.n_bins..(m + 1) * self.n_bins],
            self.air[m],
            &self.calibration.detectors[self.rows.of(m)],
        )
    }

    /// `F(p; p′)` for every row, with `warm` as the starting `p′`.
    pub fn apply_warm(&self, p: &PathlengthSinogram, warm: &PathlengthSinogram) -> Result<PathlengthSinogram> {
        let l = p.n_materials();
        if p.n_projections() != self.n_rows() || warm.0.dim() != p.0.dim() {
            return Err(Error::Shape(format!(
                "agent has {} rows, input is {:?}",
                self.n_rows(),
                p.0.dim()
            )));
        }
        if l != self.calibration.n_materials() {
            return Err(Error::Shape("material count differs from calibration".into()));
        }
        let mut out = warm.clone();
        out.as_slice_mut()
            .par_chunks_mut(l)
            .zip(p.as_slice().par_chunks(l))
            .enumerate()
            .try_for_each_init(
                || ProxScratch::new(self.n_bins, l),
                |scratch, (m, (q, p_row))| {
                    let (t, air, drf) = self.row_data(m);
                    prox_partial_update_in_place(p_row, q, t, air, drf, &self.params, scratch).map_err(|e| Error::Row {
                        row: m,
                        source: Box::new(e),
                    })
                },
            )?;
        Ok(out)
    }

    /// `F(p)` warm-started at `p` itself.
    pub fn apply(&self, p: &PathlengthSinogram) -> Result<PathlengthSinogram> {
        self.apply_warm(p, p)
    }
}

/// Applies the detector agent to a whole sinogram, warm-started at `p`.
pub fn detector_agent_apply(
    p: &PathlengthSinogram,
    t: &TransmissionSinogram,
    air_total: &Array2<f64>,
    calibration: &Calibration,
    params: ProxParams,
) -> Result<PathlengthSinogram> {
    DetectorAgent::new(t, air_total, calibration, params)?.apply(p)
}
