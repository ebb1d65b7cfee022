//! Fits the per-channel polynomial detector response from slab scans and
//! saves it.
//!
//! cargo run --release --example calibrate_detector -- [order] [noise: 0|1]

use pcct::calibration::{calibrate, CalibrationDesign};
use pcct::io::{read_calibration, write_calibration};
use pcct::{MaterialAttenuation, ScanGeometry, SourceSpectrum, SpectralModel};

fn main() -> pcct::Result<()> {
    let mut args = std::env::args().skip(1);
    let order: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let noise = args.next().map(|s| s == "1").unwrap_or(false);

    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let model = SpectralModel::new(&SourceSpectrum::default_120kvp(), &basis)?;
    let design = CalibrationDesign::pe_pvc_default();
    let geometry = ScanGeometry::parallel(1, 16, 0.1);
    let (cal, report) = calibrate(&model, &design, &geometry, order, 1e6, noise, 3)?;
    println!(
        "order {order}, noise {noise}: {} channels x {} bins x {} terms, worst fit residual {:.2e} (channel {})",
        cal.detectors.len(),
        cal.n_bins(),
        cal.detectors[0].n_terms(),
        report.max_residual,
        report.worst_channel
    );

    let d = &cal.detectors[0];
    for p in [[0.0, 0.0], [20.0, 2.5], [40.0, 5.0]] {
        let phi = d.eval(&p);
        let truth: Vec<f64> = model
            .expected_counts(&p, 1.0)?
            .iter()
            .map(|l| -(l / model.air_total(1.0)).ln())
            .collect();
        println!("p = {p:?}: phi {phi:.4?}  exact {truth:.4?}");
    }

    let path = std::env::temp_dir().join("pcct_example_calibration.toml");
    let (toml, data) = write_calibration(&path, &cal)?;
    let back = read_calibration(&path)?;
    println!(
        "saved {} + {}; reload matches: {}",
        toml.display(),
        data.display(),
        back == cal
    );
    Ok(())
}
