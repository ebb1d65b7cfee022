//! Consensus-equilibrium decomposition of a low-dose scan: prints the
//! equilibrium residual per iteration and the error of MLE and MACE against
//! the truth.
//!
//! cargo run --release --example mace_decompose -- [dose] [rho]

use pcct::calibration::{calibrate, CalibrationDesign};
use pcct::mace::{mle_decompose, run_mace, MaceConfig, MleConfig};
use pcct::spectral::{equivalent_fractions, scan_phantom};
use pcct::{
    MaterialAttenuation, PathlengthSinogram, Phantom, PriorSpec, ProxParams, ScanGeometry, SourceSpectrum,
    SpectralModel,
};

fn rms(a: &PathlengthSinogram, b: &PathlengthSinogram) -> f64 {
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    (s / a.as_slice().len() as f64).sqrt()
}

/// RMS of the second difference along the channel axis.
fn roughness(p: &PathlengthSinogram) -> f64 {
    let a = &p.0;
    let (v, c, l) = a.dim();
    let mut s = 0.0;
    for i in 0..v {
        for j in 1..c - 1 {
            for m in 0..l {
                s += (a[(i, j - 1, m)] - 2.0 * a[(i, j, m)] + a[(i, j + 1, m)]).powi(2);
            }
        }
    }
    (s / (v * (c - 2) * l) as f64).sqrt()
}

fn main() -> pcct::Result<()> {
    let mut args = std::env::args().skip(1);
    let dose: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5e4);
    let rho: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.8);

    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water")?, &basis, 30.0, 120.0)?;
    let model = SpectralModel::new(&SourceSpectrum::default_120kvp(), &basis)?;
    let geometry = ScanGeometry::parallel(120, 128, 0.2);
    let (cal, _) = calibrate(
        &model,
        &CalibrationDesign::pe_pvc_default(),
        &geometry,
        4,
        1e6,
        false,
        0,
    )?;
    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model, dose, true, 2)?;
    let air = &scan.counts.air_total;

    let mle = mle_decompose(&scan.transmission, air, &cal, &MleConfig::default())?;
    let cfg = MaceConfig {
        rho,
        n_mace: 20,
        prox: ProxParams::new(0.05, 1),
        prior: PriorSpec::gaussian(2.0),
        ..MaceConfig::default()
    };
    let mace = run_mace(&scan.transmission, air, &cal, &cfg, Some(&mle.pathlengths))?;
    for (i, r) in mace.residuals.iter().enumerate() {
        println!("iteration {:>2}: residual {r:.3e}", i + 1);
    }
    for (name, p) in [
        ("truth", &scan.pathlengths),
        ("MLE", &mle.pathlengths),
        ("MACE", &mace.estimate),
    ] {
        println!(
            "{name:>5}: rms error {:.4} cm, roughness {:.4} cm",
            rms(p, &scan.pathlengths),
            roughness(p)
        );
    }
    Ok(())
}
