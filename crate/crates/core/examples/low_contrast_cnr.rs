//! Low-contrast phantom, MLE vs MACE: reports ROI statistics of the 70 keV
//! mono image and the CNR of each insert.
//!
//! cargo run --release --example low_contrast_cnr -- [dose] [sigma] [prior_std] [n_mace]

use std::time::Instant;

use pcct::calibration::{calibrate, CalibrationDesign};
use pcct::mace::{mle_decompose, run_mace, MaceConfig, MleConfig};
use pcct::metrics::{circle_stats, RoiSpec};
use pcct::recon::{mix_attenuation, reconstruct_materials, synthesize_mono, FbpOptions};
use pcct::spectral::{equivalent_fractions, scan_phantom, MaterialAttenuation, Phantom, SourceSpectrum, SpectralModel};
use pcct::{ImageGrid, PathlengthSinogram, PriorSpec, ProxParams, ScanGeometry};

fn arg(i: usize, default: f64) -> f64 {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn report(name: &str, p: &PathlengthSinogram, ctx: &Ctx) -> pcct::Result<(f64, f64, f64)> {
    let x = reconstruct_materials(p, &ctx.geometry, &ctx.grid, FbpOptions::default())?;
    let mono = synthesize_mono(&x, &ctx.basis, 70.0)?.modified_hu(ctx.mu_water)?;
    let bg = circle_stats(mono.values.view(), &ctx.grid, ctx.roi.get("background").unwrap())?;
    print!("{name:>5}: background {:.1} ± {:.2}", bg.mean, bg.std);
    let mut first = 0.0;
    for label in ["insert_1010", "insert_1005", "insert_1003"] {
        let s = circle_stats(mono.values.view(), &ctx.grid, ctx.roi.get(label).unwrap())?;
        let cnr = (s.mean - bg.mean).abs() / bg.std;
        if label == "insert_1010" {
            first = cnr;
        }
        print!("  {label} {:.1} (CNR {cnr:.2})", s.mean);
    }
    println!();
    Ok((first, bg.mean, bg.std))
}

struct Ctx {
    geometry: ScanGeometry,
    grid: ImageGrid,
    basis: Vec<MaterialAttenuation>,
    mu_water: f64,
    roi: RoiSpec,
}

fn main() -> pcct::Result<()> {
    let dose = arg(1, 5e5);
    let sigma = arg(2, 0.05);
    let prior_std = arg(3, 2.0);
    let n_mace = arg(4, 20.0) as usize;

    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water")?, &basis, 30.0, 120.0)?;
    let spectrum = SourceSpectrum::default_120kvp();
    let model = SpectralModel::new(&spectrum, &basis)?;
    let geometry = ScanGeometry::desk_scale();
    let grid = ImageGrid::desk_scale();
    let ctx = Ctx {
        mu_water: mix_attenuation(&basis, &water, 70.0)?,
        geometry: geometry.clone(),
        grid,
        basis: basis.clone(),
        roi: RoiSpec::low_contrast(),
    };

    let t0 = Instant::now();
    let (cal, rep) = calibrate(
        &model,
        &CalibrationDesign::pe_pvc_default(),
        &geometry,
        4,
        1e6,
        false,
        7,
    )?;
    println!(
        "calibration residual {:.2e} ({:.1} s)",
        rep.max_residual,
        t0.elapsed().as_secs_f64()
    );

    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model, dose, true, 11)?;
    let t0 = Instant::now();
    let mle = mle_decompose(&scan.transmission, &scan.counts.air_total, &cal, &MleConfig::default())?;
    println!(
        "mle: {:.1} s, {} divergent",
        t0.elapsed().as_secs_f64(),
        mle.divergent_rows.len()
    );
    let (cnr_mle, _, std_mle) = report("mle", &mle.pathlengths, &ctx)?;

    let cfg = MaceConfig {
        n_mace,
        prox: ProxParams::new(sigma, 1),
        prior: PriorSpec::gaussian(prior_std),
        ..MaceConfig::default()
    };
    let t0 = Instant::now();
    let mace = run_mace(
        &scan.transmission,
        &scan.counts.air_total,
        &cal,
        &cfg,
        Some(&mle.pathlengths),
    )?;
    println!(
        "mace: {:.1} s, residual {:.2e} -> {:.2e}",
        t0.elapsed().as_secs_f64(),
        mace.residuals[0],
        mace.residuals.last().unwrap()
    );
    let (cnr_mace, _, std_mace) = report("mace", &mace.estimate, &ctx)?;
    println!(
        "CNR ratio {:.2}, std ratio {:.3}",
        cnr_mace / cnr_mle,
        std_mace / std_mle
    );
    Ok(())
}
