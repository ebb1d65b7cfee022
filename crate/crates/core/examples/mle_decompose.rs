//! Maximum-likelihood decomposition of a noiseless scan, compared with the
//! true pathlengths.
//!
//! cargo run --release --example mle_decompose -- [n_mle]

use std::time::Instant;

use pcct::calibration::{calibrate, CalibrationDesign};
use pcct::mace::{mle_decompose, MleConfig};
use pcct::spectral::{equivalent_fractions, scan_phantom};
use pcct::{MaterialAttenuation, Phantom, ScanGeometry, SourceSpectrum, SpectralModel};

fn main() -> pcct::Result<()> {
    let n_mle = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water")?, &basis, 30.0, 120.0)?;
    let model = SpectralModel::new(&SourceSpectrum::default_120kvp(), &basis)?;
    let geometry = ScanGeometry::parallel(90, 128, 0.2);
    let (cal, _) = calibrate(
        &model,
        &CalibrationDesign::pe_pvc_default(),
        &geometry,
        4,
        1e6,
        false,
        0,
    )?;

    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model, 1e5, false, 0)?;
    let cfg = MleConfig {
        n_mle,
        ..MleConfig::default()
    };
    let start = Instant::now();
    let out = mle_decompose(&scan.transmission, &scan.counts.air_total, &cal, &cfg)?;
    let err = out
        .pathlengths
        .as_slice()
        .iter()
        .zip(scan.pathlengths.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{} projections, {n_mle} refinement rounds in {:.2} s: max |p - p_true| = {err:.2e} cm, {} divergent rows",
        geometry.n_projections(),
        start.elapsed().as_secs_f64(),
        out.divergent_rows.len()
    );
    Ok(())
}
