//! Simulates a noisy photon-counting scan of the low-contrast phantom and
//! writes the transmission sinogram plus a preview of the first bin.
//!
//! cargo run --release --example simulate_scan -- [out_dir]

use std::path::PathBuf;

use pcct::io::{write_array, write_png};
use pcct::spectral::{equivalent_fractions, scan_phantom};
use pcct::{MaterialAttenuation, Phantom, ScanGeometry, SourceSpectrum, SpectralModel};

fn main() -> pcct::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/simulate".into()));
    std::fs::create_dir_all(&out).map_err(|e| pcct::Error::io(&out, e))?;

    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water")?, &basis, 30.0, 120.0)?;
    let spectrum = SourceSpectrum::default_120kvp();
    let model = SpectralModel::new(&spectrum, &basis)?;
    println!("{} bins, edges {:?} keV", model.n_bins(), model.bin_edges());
    println!("water as PE/PVC mix: {water:.4?}");

    let geometry = ScanGeometry::parallel(180, 128, 0.2);
    let scan = scan_phantom(&Phantom::low_contrast(&water), &geometry, &model, 5e5, true, 1)?;
    let t = &scan.transmission.t;
    let min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{} projections, smallest bin transmission {min:.4}",
        geometry.n_projections()
    );

    write_array(
        &out.join("transmission.pcmd"),
        t.view().into_dyn(),
        &["view", "channel", "bin"],
    )?;
    let bin0 = t.index_axis(ndarray::Axis(2), 0).mapv(|v| -v.max(1e-12).ln());
    write_png(&out.join("bin0_line_integral.png"), bin0.view(), 2.0, 4.0)?;
    println!("wrote {}", out.display());
    Ok(())
}
