#![allow(dead_code)]

pub mod quadratic;

use std::sync::OnceLock;

use pcct::spectral::{MaterialAttenuation, SourceSpectrum, SpectralModel};
use pcct::{calibrate, Calibration, CalibrationDesign, DrfPolynomial, ScanGeometry};

pub fn basis() -> Vec<MaterialAttenuation> {
    vec![
        MaterialAttenuation::bundled("polyethylene").unwrap(),
        MaterialAttenuation::bundled("pvc").unwrap(),
    ]
}

pub fn model() -> SpectralModel {
    SpectralModel::new(&SourceSpectrum::default_120kvp(), &basis()).unwrap()
}

/// Noiseless order-4 calibration for `n_channels` parallel-beam channels.
pub fn calibration(n_channels: usize) -> Calibration {
    let g = ScanGeometry::parallel(1, n_channels, 0.1);
    calibrate(&model(), &CalibrationDesign::pe_pvc_default(), &g, 4, 1e6, false, 0)
        .unwrap()
        .0
}

/// Single-channel noiseless DRF, computed once per test binary.
pub fn drf() -> &'static DrfPolynomial {
    static DRF: OnceLock<DrfPolynomial> = OnceLock::new();
    DRF.get_or_init(|| calibration(1).detectors.swap_remove(0))
}

/// `f_j(q)/λ_Σ + ‖q − p‖²/(2σ²λ_Σ)` from polynomial evaluations only.
pub fn prox_objective(q: &[f64], p: &[f64], t: &[f64], air: f64, sigma: f64, drf: &DrfPolynomial) -> f64 {
    let phi = drf.eval(q);
    let data: f64 = phi.iter().zip(t).map(|(z, t)| (-z).exp() + t * z).sum();
    let prox: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma * sigma * air);
    data + prox
}

/// Fourth-order central difference of `φ` along material `l`.
fn dphi(q: &[f64], l: usize, drf: &DrfPolynomial) -> Vec<f64> {
    let h = 1e-3;
    let at = |s: f64| {
        let mut x = q.to_vec();
        x[l] += s;
        drf.eval(&x)
    };
    let (a, b, c, d) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
    (0..a.len())
        .map(|k| (a[k] - 8.0 * b[k] + 8.0 * c[k] - d[k]) / (12.0 * h))
        .collect()
}

fn oracle_gradient(q: &[f64], p: &[f64], t: &[f64], air: f64, sigma: f64, drf: &DrfPolynomial) -> Vec<f64> {
    let phi = drf.eval(q);
    (0..q.len())
        .map(|l| {
            let d = dphi(q, l, drf);
            let data: f64 = (0..phi.len()).map(|k| (-(-phi[k]).exp() + t[k]) * d[k]).sum();
            data + (q[l] - p[l]) / (sigma * sigma * air)
        })
        .collect()
}

/// Dense grid search of the 2D proximal objective followed by Newton polish
/// with finite-difference derivatives. Independent of the analytic Jacobian
/// and of the surrogate.
pub fn prox_oracle(p: &[f64], t: &[f64], air: f64, sigma: f64, drf: &DrfPolynomial) -> Vec<f64> {
    let (lo, hi) = (&drf.domain().lower, &drf.domain().upper);
    let n = 161;
    let mut best = (f64::INFINITY, vec![0.0, 0.0]);
    for i in 0..n {
        for j in 0..n {
            let q = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
            ];
            let v = prox_objective(&q, p, t, air, sigma, drf);
            if v < best.0 {
                best = (v, q.to_vec());
            }
        }
    }
    let mut q = best.1;
    for _ in 0..60 {
        let g = oracle_gradient(&q, p, t, air, sigma, drf);
        let h = 1e-4;
        let mut hess = [[0.0; 2]; 2];
        for l in 0..2 {
            let mut a = q.clone();
            let mut b = q.clone();
            a[l] += h;
            b[l] -= h;
            let ga = oracle_gradient(&a, p, t, air, sigma, drf);
            let gb = oracle_gradient(&b, p, t, air, sigma, drf);
            for m in 0..2 {
                hess[m][l] = (ga[m] - gb[m]) / (2.0 * h);
            }
        }
        let sym = 0.5 * (hess[0][1] + hess[1][0]);
        let det = hess[0][0] * hess[1][1] - sym * sym;
        let step = [
            (hess[1][1] * g[0] - sym * g[1]) / det,
            (hess[0][0] * g[1] - sym * g[0]) / det,
        ];
        // Backtrack on the objective to stay in the basin found by the grid.
        let f0 = prox_objective(&q, p, t, air, sigma, drf);
        let mut s = 1.0;
        loop {
            let cand = [q[0] - s * step[0], q[1] - s * step[1]];
            if prox_objective(&cand, p, t, air, sigma, drf) <= f0 + 1e-15 || s < 1e-6 {
                q = cand.to_vec();
                break;
            }
            s *= 0.5;
        }
        if step[0].hypot(step[1]) < 1e-12 {
            break;
        }
    }
    q
}
