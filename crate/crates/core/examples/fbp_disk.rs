//! Filtered backprojection of a uniform disk in parallel and fan geometry.
//!
//! cargo run --release --example fbp_disk -- [hann: 0|1]

use ndarray::Axis;
use pcct::io::write_png;
use pcct::spectral::{project_phantom, Disk};
use pcct::{fbp_reconstruct, FbpOptions, ImageGrid, Phantom, ScanGeometry};

fn main() -> pcct::Result<()> {
    let hann = std::env::args().nth(1).map(|s| s == "1").unwrap_or(false);
    let phantom = Phantom::new(vec![Disk::new([1.0, -0.5], 5.0, vec![1.0])]);
    let grid = ImageGrid::new(128, 128, 0.2);
    for (name, g) in [
        ("parallel", ScanGeometry::parallel(360, 256, 0.1)),
        ("fan", ScanGeometry::fan(720, 256, 0.2, 50.0, 100.0)),
    ] {
        let p = project_phantom(&phantom, &g, 1);
        let img = fbp_reconstruct(p.0.index_axis(Axis(2), 0), &g, &grid, FbpOptions { hann })?;
        let c = img[(64 + 2, 64 + 5)];
        println!(
            "{name:>8}: value near centre {c:.4}, image range [{:.3}, {:.3}]",
            img.iter().cloned().fold(f64::INFINITY, f64::min),
            img.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        );
        let path = std::env::temp_dir().join(format!("pcct_fbp_{name}.png"));
        write_png(&path, img.view(), 0.5, 1.2)?;
        println!("          preview {}", path.display());
    }
    Ok(())
}
