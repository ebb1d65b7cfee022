mod common;

use common::{drf, model, prox_objective, prox_oracle};
use ndarray::{array, Array2};
use pcct::detector::{detector_loss, prox_partial_update, surrogate_at, transmission_loss, ProxParams};
use pcct::spectral::sample_poisson;
use pcct::{CalibrationDomain, DrfPolynomial};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AIR: f64 = 1e5;

fn noiseless_t(p: &[f64]) -> Vec<f64> {
    let m = model();
    let lam = m.expected_counts(p, 1.0).unwrap();
    let air = m.air_total(1.0);
    lam.iter().map(|l| l / air).collect()
}

fn noisy_t(p: &[f64], air_total: f64, seed: u64) -> Vec<f64> {
    let m = model();
    let scale = air_total / m.air_total(1.0);
    let lam = m.expected_counts(p, scale).unwrap();
    sample_poisson(&lam, seed)
        .unwrap()
        .iter()
        .map(|&y| y as f64 / air_total)
        .collect()
}

fn ln_factorial(n: f64) -> f64 {
    (1..=n as u64).map(|i| (i as f64).ln()).sum()
}

/// Full Poisson negative log-likelihood of counts `y` under the DRF model.
fn poisson_nll(p: &[f64], y: &[f64], air_total: f64, d: &DrfPolynomial) -> f64 {
    d.eval(p)
        .iter()
        .zip(y)
        .map(|(phi, y)| {
            let lam = air_total * (-phi).exp();
            lam - y * lam.ln() + ln_factorial(*y)
        })
        .sum()
}

/// `φ(q) = A q + c` with two bins and two materials.
fn affine_drf() -> DrfPolynomial {
    // terms are indexed a*(P+1)+b with P = 1: [1, p1, p0, p0 p1]
    let theta = array![[0.05, 0.1], [0.9, 0.4], [0.2, 0.15], [0.0, 0.0]];
    DrfPolynomial::from_raw_coefficients(1, theta, CalibrationDomain::pe_pvc_default()).unwrap()
}

#[test]
fn loss_is_poisson_nll_up_to_a_constant() {
    let d = drf();
    let p_true = [12.0, 1.5];
    let air = 2e4;
    let m = model();
    let lam = m.expected_counts(&p_true, air / m.air_total(1.0)).unwrap();
    let y: Vec<f64> = sample_poisson(&lam, 3).unwrap().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = y.iter().map(|v| v / air).collect();
    let (a, b) = ([12.0, 1.5], [8.0, 2.5]);
    let df = detector_loss(&a, &t, air, d) - detector_loss(&b, &t, air, d);
    let dn = poisson_nll(&a, &y, air, d) - poisson_nll(&b, &y, air, d);
    assert!((df - dn).abs() <= 1e-9 * dn.abs().max(1.0), "{df} vs {dn}");
}

#[test]
fn loss_of_exact_transmission_is_minimized_at_the_generating_point() {
    // K = 1, φ(p) = p: minimizer of e^{-p} + T p is p = -ln T
    let theta = array![[0.0], [1.0]];
    let one_d =
        DrfPolynomial::from_raw_coefficients(1, theta, CalibrationDomain::new(vec![0.0], vec![10.0]).unwrap()).unwrap();
    let t = [(-2.0f64).exp()];
    let f = |x: f64| detector_loss(&[x], &t, 1.0, &one_d);
    assert!(f(2.0) < f(2.0 - 1e-4) && f(2.0) < f(2.0 + 1e-4));
    let grad = -(-2.0f64).exp() + t[0];
    assert!(grad.abs() < 1e-15);
}

#[test]
fn surrogate_curvature_tends_to_the_second_derivative() {
    for z in [-1.0, 0.0, 0.7, 3.0, 9.0] {
        for eps in [1e-2, 1e-3, 1e-4] {
            let s = surrogate_at(&[z], &[0.3], eps);
            let rel = s.c[0] / (-z).exp() - 1.0;
            assert!(rel.abs() <= eps, "z {z} eps {eps} rel {rel}");
            assert!(rel >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn surrogate_majorizes_and_touches(
        z_ref in -2.0f64..20.0,
        t in 0.0f64..1.5,
        step in -1e-3f64..25.0,
    ) {
        let eps = 1e-3;
        let s = surrogate_at(&[z_ref], &[t], eps);
        let z = z_ref + step;
        prop_assume!(z >= z_ref - eps);
        let g = |z: f64| transmission_loss(&[z], &[t]);
        let excess = g(z) - g(z_ref);
        let q = s.value(&[z]);
        prop_assert!(excess <= q + 1e-12 * (1.0 + q.abs()), "{excess} > {q}");
        prop_assert_eq!(s.value(&[z_ref]), 0.0);
        let grad = -(-z_ref).exp() + t;
        prop_assert!((s.gradient(&[z_ref])[0] - grad).abs() <= 1e-15 * (1.0 + grad.abs()));
    }
}

#[test]
fn tiny_sigma_is_the_identity() {
    let d = drf();
    let t = noisy_t(&[10.0, 1.0], AIR, 5);
    let p = [11.0, 0.8];
    let out = prox_partial_update(&p, &p, &t, AIR, d, &ProxParams::new(1e-9, 5)).unwrap();
    for (a, b) in out.iter().zip(&p) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn scalar_fixed_point() {
    // K = 1, φ(q) = q: the minimizer solves -e^{-q} + T + (q - p)/α² = 0
    let theta = array![[0.0], [1.0]];
    let one_d =
        DrfPolynomial::from_raw_coefficients(1, theta, CalibrationDomain::new(vec![0.0], vec![10.0]).unwrap()).unwrap();
    let (t, air, sigma, p) = (0.2, 50.0, 0.1, 1.0);
    let out = prox_partial_update(&[p], &[p], &[t], air, &one_d, &ProxParams::new(sigma, 60)).unwrap()[0];
    let alpha2 = sigma * sigma * air;
    // bisection on the stationarity condition
    let h = |q: f64| -(-q).exp() + t + (q - p) / alpha2;
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((out - lo).abs() < 1e-10, "{out} vs {lo}");
}

#[test]
fn converged_prox_matches_dense_oracle() {
    let d = drf();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..12 {
        let p_true = [rng.random_range(2.0..35.0), rng.random_range(0.2..4.5)];
        let t = noisy_t(&p_true, AIR, 100 + i);
        let p = [
            p_true[0] + rng.random_range(-1.0..1.0),
            p_true[1] + rng.random_range(-0.2..0.2),
        ];
        let sigma = 10f64.powf(rng.random_range(-2.0..0.0));
        let got = prox_partial_update(&p, &p, &t, AIR, d, &ProxParams::new(sigma, 50)).unwrap();
        let want = prox_oracle(&p, &t, AIR, sigma, d);
        let err = (got[0] - want[0]).abs().max((got[1] - want[1]).abs());
        assert!(err <= 1e-6, "instance {i}: {got:?} vs {want:?}");
    }
}

#[test]
fn huge_sigma_at_the_mle_leaves_it_in_place() {
    let d = drf();
    let t = noisy_t(&[15.0, 2.0], AIR, 9);
    let start = [15.0, 2.0];
    let mle = prox_partial_update(&start, &start, &t, AIR, d, &ProxParams::new(1e8, 200)).unwrap();
    let again = prox_partial_update(&mle, &mle, &t, AIR, d, &ProxParams::new(1e8, 1)).unwrap();
    for (a, b) in again.iter().zip(&mle) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn noiseless_data_recovers_true_pathlengths() {
    let d = drf();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_sim: f64 = 0.0;
    for _ in 0..100 {
        let p = [rng.random_range(0.5..39.5), rng.random_range(0.05..4.95)];
        let start = [p[0] + rng.random_range(-1.5..1.5), p[1] + rng.random_range(-0.3..0.3)];
        let params = ProxParams::new(1e6, 50);
        // data generated by the fitted response itself
        let t_model: Vec<f64> = d.eval(&p).iter().map(|phi| (-phi).exp()).collect();
        let out = prox_partial_update(&start, &start, &t_model, AIR, d, &params).unwrap();
        for (a, b) in out.iter().zip(&p) {
            assert!((a - b).abs() <= 1e-4, "{p:?} -> {out:?}");
        }
        // data from the spectral simulator: bounded by the response fit error
        let out = prox_partial_update(&start, &start, &noiseless_t(&p), AIR, d, &params).unwrap();
        worst_sim = out.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(worst_sim, f64::max);
    }
    eprintln!("simulator truth: max error {worst_sim:.3e} cm over 100 rays");
    assert!(worst_sim < 1e-3);
}

#[test]
fn one_partial_update_descends_for_affine_response_within_surrogate_support() {
    let d = affine_drf();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut inside, mut outside, mut outside_worse) = (0, 0, 0);
    for _ in 0..2000 {
        let p = [rng.random_range(0.0..10.0), rng.random_range(0.0..3.0)];
        let start = [p[0] + rng.random_range(-3.0..3.0), p[1] + rng.random_range(-1.0..1.0)];
        let t = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let sigma = 10f64.powf(rng.random_range(-2.0..2.0));
        let air = 10f64.powf(rng.random_range(2.0..6.0));
        let params = ProxParams::new(sigma, 1);
        let before = prox_objective(&start, &p, &t, air, sigma, &d);
        let out = prox_partial_update(&p, &start, &t, air, &d, &params).unwrap();
        let after = prox_objective(&out, &p, &t, air, sigma, &d);
        let (z0, z1) = (d.eval(&start), d.eval(&out));
        if z1.iter().zip(&z0).all(|(a, b)| *a >= b - params.epsilon) {
            inside += 1;
            assert!(after <= before + 1e-9 * before.abs().max(1.0), "{after} > {before}");
        } else {
            outside += 1;
            outside_worse += (after > before) as usize;
        }
    }
    eprintln!("affine: {inside} updates inside the surrogate support, {outside} outside ({outside_worse} increased)");
    assert!(inside > 100);
}

#[test]
fn one_partial_update_on_calibrated_response() {
    let d = drf();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worse = 0;
    for i in 0..500 {
        let p_true = [rng.random_range(1.0..38.0), rng.random_range(0.1..4.8)];
        let t = noisy_t(&p_true, AIR, 1000 + i);
        let p = [
            p_true[0] + rng.random_range(-0.5..0.5),
            p_true[1] + rng.random_range(-0.1..0.1),
        ];
        let start = [p[0] + rng.random_range(-2.0..2.0), p[1] + rng.random_range(-0.5..0.5)];
        let sigma = 10f64.powf(rng.random_range(-2.0..0.0));
        let before = prox_objective(&start, &p, &t, AIR, sigma, d);
        let out = prox_partial_update(&p, &start, &t, AIR, d, &ProxParams::new(sigma, 1)).unwrap();
        if prox_objective(&out, &p, &t, AIR, sigma, d) > before + 1e-9 * before.abs() {
            worse += 1;
        }
    }
    eprintln!("calibrated response: {worse} of 500 single updates increased the objective");
    assert_eq!(worse, 0);
}

#[test]
fn detector_agent_is_separable() {
    use pcct::{Calibration, DetectorAgent, PathlengthSinogram, TransmissionSinogram};
    let d = drf().clone();
    let cal = Calibration {
        detectors: vec![d.clone(), d.clone(), d.clone()],
        bin_edges: model().bin_edges().to_vec(),
    };
    let truths = [
        [5.0, 0.5],
        [20.0, 1.0],
        [30.0, 4.0],
        [12.0, 2.0],
        [2.0, 0.1],
        [8.0, 3.5],
    ];
    let k = cal.n_bins();
    let mut t = ndarray::Array3::zeros((2, 3, k));
    let mut p = PathlengthSinogram::zeros(2, 3, 2);
    for (m, pt) in truths.iter().enumerate() {
        let row = noisy_t(pt, AIR, 40 + m as u64);
        for kk in 0..k {
            t[(m / 3, m % 3, kk)] = row[kk];
        }
        p.0[(m / 3, m % 3, 0)] = pt[0] + 0.3;
        p.0[(m / 3, m % 3, 1)] = pt[1] - 0.05;
    }
    let t = TransmissionSinogram { t };
    let air = Array2::from_elem((2, 3), AIR);
    let agent = DetectorAgent::new(&t, &air, &cal, ProxParams::new(0.1, 3)).unwrap();
    let full = agent.apply(&p).unwrap();
    for (m, _) in truths.iter().enumerate() {
        let (v, c) = (m / 3, m % 3);
        let row_t: Vec<f64> = (0..k).map(|kk| t.t[(v, c, kk)]).collect();
        let row_p = [p.0[(v, c, 0)], p.0[(v, c, 1)]];
        let single = prox_partial_update(&row_p, &row_p, &row_t, AIR, &d, &ProxParams::new(0.1, 3)).unwrap();
        assert_eq!(single, vec![full.0[(v, c, 0)], full.0[(v, c, 1)]]);
    }
}
