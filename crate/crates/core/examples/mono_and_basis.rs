//! Material images of the rasterized phantom, a change of basis to
//! water/PVC and virtual mono images across energies.
//!
//! cargo run --example mono_and_basis

use ndarray::array;
use pcct::metrics::circle_stats;
use pcct::recon::mix_attenuation;
use pcct::spectral::equivalent_fractions;
use pcct::{basis_change, synthesize_mono, ImageGrid, MaterialAttenuation, Phantom, RoiSpec};

fn main() -> pcct::Result<()> {
    let basis = vec![
        MaterialAttenuation::bundled("polyethylene")?,
        MaterialAttenuation::bundled("pvc")?,
    ];
    let water = equivalent_fractions(&MaterialAttenuation::bundled("water")?, &basis, 30.0, 120.0)?;
    let grid = ImageGrid::new(64, 64, 0.4);
    let x = Phantom::low_contrast(&water).rasterize(grid, 2, 2);

    let roi = RoiSpec::low_contrast();
    for e in [40.0, 70.0, 100.0] {
        let mu = mix_attenuation(&basis, &water, e)?;
        let hu = synthesize_mono(&x, &basis, e)?.modified_hu(mu)?;
        print!("{e:>5} keV: corner {:.1}", hu.values[(0, 0)]);
        for label in ["background", "insert_1010", "insert_1005", "insert_1003"] {
            let s = circle_stats(hu.values.view(), &grid, roi.get(label).unwrap())?;
            print!("  {label} {:.1}", s.mean);
        }
        println!();
    }

    // Columns of the matrix express each old basis material in the new basis.
    let m = array![[1.0 / water[0], 0.0], [-water[1] / water[0], 1.0]];
    let y = basis_change(&x, &m)?;
    println!(
        "centre pixel PE/PVC {:.4}/{:.4} -> water/PVC {:.4}/{:.4}",
        x.values[(32, 32, 0)],
        x.values[(32, 32, 1)],
        y.values[(32, 32, 0)],
        y.values[(32, 32, 1)]
    );
    Ok(())
}
