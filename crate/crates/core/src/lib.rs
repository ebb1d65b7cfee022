//! Photon-counting CT toolkit: spectral simulation, detector-response
//! calibration, sinogram-domain basis-material decomposition (maximum
//! likelihood and consensus equilibrium with a sinogram prior),
//! filtered-backprojection reconstruction and ROI metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod io;
mod linalg;
pub mod mace;
pub mod metrics;
pub mod prior;
pub mod recon;
pub mod sinogram;
pub mod spectral;

pub use calibration::{calibrate, fit_drf, Calibration, CalibrationDesign, CalibrationDomain, DrfPolynomial};
pub use detector::{detector_agent_apply, prox_partial_update, surrogate_at, DetectorAgent, ProxParams};
pub use error::{Error, Result};
pub use geometry::{project_image, BeamMode, ImageGrid, Ray, ScanGeometry};
pub use mace::{
    equilibrium_residual, mann_iterate, mle_decompose, run_mace, DataAgent, MaceConfig, MaceOutcome, MleConfig,
};
pub use metrics::{cnr, roi_stats, RoiCircle, RoiSpec};
pub use prior::{apply_prior, Denoiser, PriorSpec};
pub use recon::{basis_change, fbp_reconstruct, synthesize_mono, FbpOptions, MaterialImage, MonoImage};
pub use sinogram::{CountSinogram, PathlengthSinogram, TransmissionSinogram};
pub use spectral::{MaterialAttenuation, Phantom, SourceSpectrum, SpectralModel};
