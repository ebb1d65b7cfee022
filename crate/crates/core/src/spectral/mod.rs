//! Polychromatic forward model, analytic phantoms and count simulation.

mod material;
mod phantom;
mod simulate;
mod spectrum;

pub use material::{equivalent_fractions, MaterialAttenuation};
pub use phantom::{disk_chord, Disk, Phantom};
pub(crate) use simulate::projection_rng;
pub use simulate::{expected_counts, project_phantom, sample_poisson, scan_phantom, Scan, SpectralModel};
pub use spectrum::{equal_bins, SourceSpectrum};
