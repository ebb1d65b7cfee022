mod common;

use common::{basis, calibration, model};
use ndarray::{array, Array2, Array3};
use pcct::mace::MleConfig;
use pcct::metrics::circle_stats;
use pcct::recon::{mix_attenuation, reconstruct_materials};
use pcct::spectral::{equivalent_fractions, scan_phantom, Disk};
use pcct::{
    basis_change, fbp_reconstruct, mle_decompose, project_image, synthesize_mono, Error, FbpOptions, ImageGrid,
    MaterialAttenuation, MaterialImage, Phantom, RoiSpec, ScanGeometry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sino(rng: &mut ChaCha8Rng, v: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((v, c), |_| rng.random_range(-1.0..1.0))
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn fbp_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = ImageGrid::new(48, 48, 0.25);
    for g in [
        ScanGeometry::parallel(60, 64, 0.2),
        ScanGeometry::fan(90, 64, 0.3, 40.0, 60.0),
    ] {
        let p = random_sino(&mut rng, g.n_views, g.n_channels);
        let q = random_sino(&mut rng, g.n_views, g.n_channels);
        let (a, b) = (1.7, -0.4);
        let opts = FbpOptions { hann: true };
        let lhs = fbp_reconstruct((&p * a + &q * b).view(), &g, &grid, opts).unwrap();
        let rhs = fbp_reconstruct(p.view(), &g, &grid, opts).unwrap() * a
            + fbp_reconstruct(q.view(), &g, &grid, opts).unwrap() * b;
        assert!(max_abs(&(&lhs - &rhs)) <= 1e-10 * (1.0 + max_abs(&lhs)));
    }
}

#[test]
fn smooth_image_round_trips_through_projection() {
    let grid = ImageGrid::new(96, 96, 0.2);
    let values = Array3::from_shape_fn((96, 96, 1), |(iy, ix, _)| {
        let c = grid.pixel_center(ix, iy);
        let blob = |x0: f64, y0: f64, s: f64| (-((c[0] - x0).powi(2) + (c[1] - y0).powi(2)) / (2.0 * s * s)).exp();
        blob(0.0, 0.0, 2.5) + 0.5 * blob(2.0, -1.5, 1.2)
    });
    let image = MaterialImage::new(values, grid).unwrap();
    let g = ScanGeometry::parallel(180, 160, 0.2);
    let sino = project_image(&image, &g);
    let recon = reconstruct_materials(&sino, &g, &grid, FbpOptions::default()).unwrap();
    let diff: f64 = (&recon.values - &image.values)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let norm: f64 = image.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / norm <= 0.05, "relative L2 error {}", diff / norm);
}

#[test]
fn mono_synthesis_matches_table_lookup() {
    let b = basis();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = ImageGrid::new(7, 5, 1.0);
    let x = MaterialImage::new(Array3::from_shape_fn((5, 7, 2), |_| rng.random_range(-0.2..1.5)), grid).unwrap();
    for e in [40.0, 70.0, 100.0] {
        let mono = synthesize_mono(&x, &b, e).unwrap();
        let (m0, m1) = (b[0].mu(e).unwrap(), b[1].mu(e).unwrap());
        for iy in 0..5 {
            for ix in 0..7 {
                let want = m0 * x.values[(iy, ix, 0)] + m1 * x.values[(iy, ix, 1)];
                assert!((mono.values[(iy, ix)] - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }
    assert!(matches!(
        synthesize_mono(&x, &b, 400.0),
        Err(Error::EnergyOutOfRange { .. })
    ));
}

#[test]
fn modified_hu_convention() {
    let b = basis();
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water").unwrap(), &b, 30.0, 120.0).unwrap();
    let grid = ImageGrid::new(2, 1, 1.0);
    let x = MaterialImage::new(array![[[0.0, 0.0], [water[0], water[1]]]], grid).unwrap();
    let mu_ref = mix_attenuation(&b, &water, 70.0).unwrap();
    let hu = synthesize_mono(&x, &b, 70.0).unwrap().modified_hu(mu_ref).unwrap();
    assert_eq!(hu.values[(0, 0)], 0.0);
    assert!((hu.values[(0, 1)] - 1000.0).abs() <= 1e-10);
    let pe = MaterialImage::new(array![[[1.0, 0.0]]], ImageGrid::new(1, 1, 1.0)).unwrap();
    assert_eq!(
        synthesize_mono(&pe, &b, 70.0).unwrap().values[(0, 0)],
        b[0].mu(70.0).unwrap()
    );
}

#[test]
fn basis_change_matches_pixelwise_product_and_inverts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = ImageGrid::new(6, 4, 1.0);
    let x = MaterialImage::new(Array3::from_shape_fn((4, 6, 2), |_| rng.random_range(-1.0..2.0)), grid).unwrap();
    let m = array![[1.3, -0.4], [0.25, 0.9]];
    let det = 1.3 * 0.9 + 0.4 * 0.25;
    let inv = array![[0.9 / det, 0.4 / det], [-0.25 / det, 1.3 / det]];
    let y = basis_change(&x, &m).unwrap();
    for iy in 0..4 {
        for ix in 0..6 {
            let (a, b) = (x.values[(iy, ix, 0)], x.values[(iy, ix, 1)]);
            assert!((y.values[(iy, ix, 0)] - (1.3 * a - 0.4 * b)).abs() <= 1e-10);
            assert!((y.values[(iy, ix, 1)] - (0.25 * a + 0.9 * b)).abs() <= 1e-10);
        }
    }
    let back = basis_change(&y, &inv).unwrap();
    assert!((&back.values - &x.values).iter().all(|v| v.abs() <= 1e-10));
    assert!(matches!(
        basis_change(&x, &array![[1.0, 2.0], [0.5, 1.0]]),
        Err(Error::Singular(_))
    ));
}

#[test]
fn one_percent_density_reads_ten_hu_after_noiseless_decomposition() {
    let b = basis();
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water").unwrap(), &b, 30.0, 120.0).unwrap();
    let phantom = Phantom::new(vec![
        Disk::new([0.0, 0.0], 10.0, water.clone()),
        Disk::new([0.0, 5.0], 1.5, water.iter().map(|w| 0.01 * w).collect()),
    ]);
    let g = ScanGeometry::desk_scale();
    let grid = ImageGrid::desk_scale();
    let scan = scan_phantom(&phantom, &g, &model(), 1e5, false, 0).unwrap();
    let cal = calibration(g.n_channels);
    let air = scan.counts.air_total.clone();
    let p = mle_decompose(&scan.transmission, &air, &cal, &MleConfig::default())
        .unwrap()
        .pathlengths;
    let x = reconstruct_materials(&p, &g, &grid, FbpOptions::default()).unwrap();
    let hu = synthesize_mono(&x, &b, 70.0)
        .unwrap()
        .modified_hu(mix_attenuation(&b, &water, 70.0).unwrap())
        .unwrap();
    let roi = RoiSpec::low_contrast();
    let insert = circle_stats(hu.values.view(), &grid, roi.get("insert_1010").unwrap()).unwrap();
    let bg = circle_stats(hu.values.view(), &grid, roi.get("background").unwrap()).unwrap();
    let delta = insert.mean - bg.mean;
    eprintln!(
        "background {:.3} HU, insert {:.3} HU, difference {delta:.4}",
        bg.mean, insert.mean
    );
    assert!((delta - 10.0).abs() <= 0.2, "{delta}");
}
