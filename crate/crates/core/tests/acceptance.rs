//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::time::Instant;

use common::quadratic::quadratic_problem;
use common::{calibration, drf, model, prox_oracle};
use ndarray::Axis;
use pcct::detector::{prox_partial_update, surrogate_at, transmission_loss};
use pcct::mace::{grid_search, MleConfig};
use pcct::metrics::circle_stats;
use pcct::recon::{mix_attenuation, reconstruct_materials};
use pcct::spectral::{equivalent_fractions, project_phantom, sample_poisson, scan_phantom, Disk};
use pcct::{
    fbp_reconstruct, mann_iterate, mle_decompose, run_mace, synthesize_mono, Calibration, FbpOptions, ImageGrid,
    MaceConfig, MaterialAttenuation, PathlengthSinogram, Phantom, PriorSpec, ProxParams, RoiSpec, ScanGeometry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(n: usize, name: &str, o: &Outcome) {
    println!(
        "criterion {n} ({name}): {}  {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

struct Study {
    cnr_mle: f64,
    cnr_mace: f64,
    mean_mle: f64,
    mean_mace: f64,
    std_mle: f64,
    std_mace: f64,
    seconds: f64,
}

struct Roi {
    mean: f64,
    std: f64,
    cnr: f64,
}

fn hu_stats(p: &PathlengthSinogram, geometry: &ScanGeometry, basis: &[MaterialAttenuation], mu_ref: f64) -> Roi {
    let grid = ImageGrid::desk_scale();
    let x = reconstruct_materials(p, geometry, &grid, FbpOptions::default()).unwrap();
    let hu = synthesize_mono(&x, basis, 70.0).unwrap().modified_hu(mu_ref).unwrap();
    let roi = RoiSpec::low_contrast();
    let bg = circle_stats(hu.values.view(), &grid, roi.get("background").unwrap()).unwrap();
    let insert = circle_stats(hu.values.view(), &grid, roi.get("insert_1010").unwrap()).unwrap();
    Roi {
        mean: bg.mean,
        std: bg.std,
        cnr: (insert.mean - bg.mean).abs() / bg.std,
    }
}

fn low_contrast_study(cal: &Calibration) -> Study {
    let start = Instant::now();
    let b = common::basis();
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water").unwrap(), &b, 30.0, 120.0).unwrap();
    let mu_ref = mix_attenuation(&b, &water, 70.0).unwrap();
    let geometry = ScanGeometry::desk_scale();
    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model(), 5e5, true, 1).unwrap();
    let air = &scan.counts.air_total;
    let mle = mle_decompose(&scan.transmission, air, cal, &MleConfig::default()).unwrap();
    let cfg = MaceConfig {
        n_mace: 20,
        prox: ProxParams::new(0.05, 1),
        prior: PriorSpec::gaussian(2.0),
        ..MaceConfig::default()
    };
    let mace = run_mace(&scan.transmission, air, cal, &cfg, None).unwrap();
    let a = hu_stats(&mle.pathlengths, &geometry, &b, mu_ref);
    let m = hu_stats(&mace.estimate, &geometry, &b, mu_ref);
    Study {
        cnr_mle: a.cnr,
        cnr_mace: m.cnr,
        mean_mle: a.mean,
        mean_mace: m.mean,
        std_mle: a.std,
        std_mace: m.std,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn cnr_boost(s: &Study, calibration_seconds: f64) -> Outcome {
    let ratio = s.cnr_mace / s.cnr_mle;
    let seconds = s.seconds + calibration_seconds;
    let in_band = (0.3..=1.0).contains(&s.cnr_mle);
    Outcome {
        pass: in_band && ratio >= 3.0 && seconds <= 600.0,
        detail: format!(
            "dose 5e5: CNR(MLE) {:.3} (band [0.3, 1.0]), CNR(MACE) {:.3}, ratio {ratio:.2} (>= 3.0), {seconds:.1} s (<= 600 s)",
            s.cnr_mle, s.cnr_mace
        ),
    }
}

fn noise_reduction(s: &Study) -> Outcome {
    let std_ratio = s.std_mace / s.std_mle;
    let shift = (s.mean_mace - s.mean_mle).abs() / s.mean_mle.abs();
    Outcome {
        pass: std_ratio <= 0.2 && shift <= 0.02,
        detail: format!(
            "background MLE {:.1} ± {:.2}, MACE {:.1} ± {:.2}: std ratio {std_ratio:.3} (<= 0.2), mean shift {:.3}% (<= 2%)",
            s.mean_mle,
            s.std_mle,
            s.mean_mace,
            s.std_mace,
            100.0 * shift
        ),
    }
}

fn mle_consistency(cal: &Calibration) -> Outcome {
    let b = common::basis();
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water").unwrap(), &b, 30.0, 120.0).unwrap();
    let geometry = ScanGeometry::desk_scale();
    let start = Instant::now();
    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model(), 1e5, false, 0).unwrap();
    let out = mle_decompose(&scan.transmission, &scan.counts.air_total, cal, &MleConfig::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let err = out
        .pathlengths
        .as_slice()
        .iter()
        .zip(scan.pathlengths.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: err < 1e-3 && seconds <= 120.0,
        detail: format!(
            "{} projections, N_MLE = 100: max error {err:.3e} cm (< 1e-3), {seconds:.1} s (<= 120 s)",
            geometry.n_projections()
        ),
    }
}

fn majorization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-3;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut tangency = true;
    for _ in 0..10_000 {
        let k = 8;
        let z_ref: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..20.0)).collect();
        let t: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.5)).collect();
        let z: Vec<f64> = z_ref.iter().map(|r| r - eps + rng.random_range(0.0..25.0)).collect();
        let s = surrogate_at(&z_ref, &t, eps);
        let excess = transmission_loss(&z, &t) - transmission_loss(&z_ref, &t) - s.value(&z);
        worst_excess = worst_excess.max(excess);
        let grad_ok = s.gradient(&z_ref) == s.b;
        tangency &= s.value(&z_ref) == 0.0 && grad_ok;
    }
    let mut worst_c: f64 = 0.0;
    for e in [1e-2, 1e-3, 1e-4] {
        for z in [-1.0f64, 0.0, 2.5, 9.0] {
            let c = surrogate_at(&[z], &[0.5], e).c[0];
            worst_c = worst_c.max((c / (-z).exp() - 1.0).abs() / e);
        }
    }
    Outcome {
        pass: worst_excess <= 1e-12 && tangency && worst_c <= 1.0,
        detail: format!(
            "1e4 triples: max g(z) - g(z_ref) - Q(z) = {worst_excess:.2e} (<= 1e-12), tangency exact: {tangency}, \
             max |C/e^-z - 1|/eps = {worst_c:.3} over eps in {{1e-2, 1e-3, 1e-4}}"
        ),
    }
}

fn prox_oracle_equivalence() -> Outcome {
    let d = drf();
    let m = model();
    let air = 1e5;
    let scale = air / m.air_total(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let p_true = [rng.random_range(1.0..38.0), rng.random_range(0.1..4.8)];
        let lam = m.expected_counts(&p_true, scale).unwrap();
        let t: Vec<f64> = sample_poisson(&lam, 500 + i)
            .unwrap()
            .iter()
            .map(|&y| y as f64 / air)
            .collect();
        let p = [
            p_true[0] + rng.random_range(-1.0..1.0),
            p_true[1] + rng.random_range(-0.2..0.2),
        ];
        let sigma = 10f64.powf(rng.random_range(-2.0..0.0));
        let got = prox_partial_update(&p, &p, &t, air, d, &ProxParams::new(sigma, 50)).unwrap();
        let want = prox_oracle(&p, &t, air, sigma, d);
        worst = worst.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!(
            "100 instances, N = 50, sigma in [0.01, 1]: max deviation from grid+polish oracle {worst:.2e} cm (<= 1e-6)"
        ),
    }
}

fn mace_equals_map() -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, rho) in [(61, 0.2), (62, 0.5), (63, 0.8)] {
        let prob = quadratic_problem(seed, 0.7);
        let init = PathlengthSinogram::zeros(2, 3, 2);
        let out = mann_iterate(&prob.f, &prob.h, &init, rho, 200).unwrap();
        let err = out
            .estimate
            .as_slice()
            .iter()
            .zip(&prob.map)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!(
            "rho in {{0.2, 0.5, 0.8}}, 200 iterations: max deviation from closed-form MAP {worst:.2e} (<= 1e-8)"
        ),
    }
}

fn calibration_fidelity() -> Outcome {
    let d = drf();
    let m = model();
    let air = m.air_total(1.0);
    let mut residual: f64 = 0.0;
    for i in 0..=80 {
        for j in 0..=80 {
            let p = [40.0 * i as f64 / 80.0, 5.0 * j as f64 / 80.0];
            let lam = m.expected_counts(&p, 1.0).unwrap();
            for (phi, l) in d.eval(&p).iter().zip(&lam) {
                residual = residual.max((phi + (l / air).ln()).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut grad_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..200 {
        let p = [rng.random_range(1.0..39.0), rng.random_range(0.1..4.9)];
        let g = d.grad(&p);
        for l in 0..2 {
            let (mut a, mut b) = (p, p);
            a[l] += h;
            b[l] -= h;
            let (fa, fb) = (d.eval(&a), d.eval(&b));
            for k in 0..fa.len() {
                let fd = (fa[k] - fb[k]) / (2.0 * h);
                grad_rel = grad_rel.max((fd - g[(k, l)]).abs() / g[(k, l)].abs().max(1e-3));
            }
        }
    }
    Outcome {
        pass: residual < 1e-3 && grad_rel <= 1e-6,
        detail: format!(
            "order 4 on 9x9 grid: dense 81x81 validation residual {residual:.2e} (< 1e-3), gradient vs central differences {grad_rel:.2e} relative (<= 1e-6)"
        ),
    }
}

fn fbp_fidelity() -> Outcome {
    let phantom = Phantom::new(vec![Disk::new([0.0, 0.0], 5.0, vec![1.0])]);
    let grid = ImageGrid::new(128, 128, 0.2);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, g) in [
        ("parallel", ScanGeometry::parallel(360, 256, 0.1)),
        ("fan", ScanGeometry::fan(720, 256, 0.2, 50.0, 100.0)),
    ] {
        let p = project_phantom(&phantom, &g, 1);
        let img = fbp_reconstruct(p.0.index_axis(Axis(2), 0), &g, &grid, FbpOptions::default()).unwrap();
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
        for ((iy, ix), v) in img.indexed_iter() {
            let r = grid.pixel_center(ix, iy)[0].hypot(grid.pixel_center(ix, iy)[1]);
            if r < 4.0 {
                inside += v;
                ni += 1;
            } else if r > 6.0 && r < 12.0 {
                outside += v;
                no += 1;
            }
        }
        let (inside, outside) = (inside / ni as f64, outside / no as f64);
        pass &= (inside - 1.0).abs() <= 0.02 && outside.abs() < 0.02;
        parts.push(format!("{name}: interior {inside:.4}, exterior {outside:+.4}"));
    }
    Outcome {
        pass,
        detail: format!("{} (interior within 2% of 1, |exterior| < 0.02)", parts.join("; ")),
    }
}

fn throughput(cal: &Calibration) -> Outcome {
    let b = common::basis();
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water").unwrap(), &b, 30.0, 120.0).unwrap();
    let geometry = ScanGeometry::desk_scale();
    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model(), 5e5, true, 9).unwrap();
    let cfg = MleConfig::default();
    let t0 = Instant::now();
    grid_search(&scan.transmission, cal, &cfg).unwrap();
    let search = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    mle_decompose(&scan.transmission, &scan.counts.air_total, cal, &cfg).unwrap();
    let refine = (t0.elapsed().as_secs_f64() - search).max(1e-9);
    let cores = rayon::current_num_threads() as f64;
    let n = geometry.n_projections() as f64;
    let per_iter = n * cfg.n_mle as f64 / refine / cores;
    Outcome {
        pass: true,
        detail: format!(
            "report only: {cores} thread(s); MLE refinement {per_iter:.3e} projection-iterations/s/core \
             ({:.3e} projections/s/core for all {} iterations; reference 1e4); grid search {search:.2} s",
            n / refine / cores,
            cfg.n_mle
        ),
    }
}

fn main() {
    let t0 = Instant::now();
    let cal = calibration(ScanGeometry::desk_scale().n_channels);
    let calibration_seconds = t0.elapsed().as_secs_f64();
    let study = low_contrast_study(&cal);
    let results = [
        ("CNR boost", cnr_boost(&study, calibration_seconds)),
        ("noise reduction", noise_reduction(&study)),
        ("MLE consistency", mle_consistency(&cal)),
        ("surrogate majorization", majorization()),
        ("proximal-map oracle", prox_oracle_equivalence()),
        ("MACE equals MAP on quadratics", mace_equals_map()),
        ("calibration fidelity", calibration_fidelity()),
        ("FBP fidelity", fbp_fidelity()),
        ("throughput", throughput(&cal)),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        verdict(i + 1, name, o);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
