//! Pipeline configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationDesign, CalibrationDomain};
use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, ScanGeometry};
use crate::mace::{MaceConfig, MleConfig};
use crate::metrics::RoiSpec;
use crate::spectral::{
    equal_bins, equivalent_fractions, Disk, MaterialAttenuation, Phantom, SourceSpectrum, SpectralModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub simulate: u64,
    pub calibrate: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            simulate: 1,
            calibrate: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    /// `"w120"` for the bundled spectrum, otherwise a TOML path.
    #[serde(default = "default_spectrum")]
    pub source: String,
    #[serde(default = "default_bin_edges")]
    pub bin_edges: Vec<f64>,
}

fn default_spectrum() -> String {
    "w120".into()
}

fn default_bin_edges() -> Vec<f64> {
    equal_bins(30.0, 120.0, 8)
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            source: default_spectrum(),
            bin_edges: default_bin_edges(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsSection {
    pub basis: Vec<String>,
    /// Material defining "1000" in mono images and the density of phantom
    /// disks given by `density`.
    #[serde(default = "default_reference")]
    pub reference: String,
}

fn default_reference() -> String {
    "water".into()
}

impl Default for MaterialsSection {
    fn default() -> Self {
        Self {
            basis: vec!["polyethylene".into(), "pvc".into()],
            reference: default_reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskSection {
    pub label: Option<String>,
    pub center: [f64; 2],
    pub radius: f64,
    /// Basis volume fractions.
    pub fractions: Option<Vec<f64>>,
    /// Density relative to the reference material; converted to fractions.
    pub density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// `"low-contrast"` or absent.
    pub preset: Option<String>,
    /// Disks add on top of the preset (overlaps sum).
    #[serde(default)]
    pub disks: Vec<DiskSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Air counts per projection summed over bins.
    pub dose: f64,
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { dose: 1e5, noise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub order: usize,
    pub grid_points: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub repeats: usize,
    pub dose: f64,
    pub noise: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            order: 4,
            grid_points: vec![9, 9],
            lower: vec![0.0, 0.0],
            upper: vec![40.0, 5.0],
            repeats: 100,
            dose: 1e6,
            noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub grid: ImageGrid,
    pub hann: bool,
    pub mono_energy_kev: f64,
    pub window_center: f64,
    pub window_width: f64,
}

impl Default for ReconSection {
    fn default() -> Self {
        Self {
            grid: ImageGrid::desk_scale(),
            hann: false,
            mono_energy_kev: 70.0,
            window_center: 1000.0,
            window_width: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    #[serde(flatten)]
    pub spec: RoiSpec,
    /// Circle used as the CNR background.
    pub background: Option<String>,
}

impl Default for RoiSection {
    fn default() -> Self {
        Self {
            spec: RoiSpec::low_contrast(),
            background: Some("background".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "ScanGeometry::desk_scale")]
    pub geometry: ScanGeometry,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub materials: MaterialsSection,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub mle: MleConfig,
    #[serde(default)]
    pub mace: MaceConfig,
    #[serde(default)]
    pub recon: ReconSection,
    #[serde(default)]
    pub roi: RoiSection,
}

fn default_output() -> PathBuf {
    "out".into()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output(),
            seeds: Seeds::default(),
            geometry: ScanGeometry::desk_scale(),
            spectrum: SpectrumSection::default(),
            materials: MaterialsSection::default(),
            phantom: PhantomSection {
                preset: Some("low-contrast".into()),
                disks: vec![],
            },
            simulation: SimulationSection::default(),
            calibration: CalibrationSection::default(),
            mle: MleConfig::default(),
            mace: MaceConfig::default(),
            recon: ReconSection::default(),
            roi: RoiSection::default(),
        }
    }
}

/// Everything derived from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub materials: Vec<MaterialAttenuation>,
    pub reference_fractions: Vec<f64>,
    pub model: SpectralModel,
    pub phantom: Phantom,
    pub design: CalibrationDesign,
}

impl Setup {
    pub fn output_dir(&self) -> PathBuf {
        if self.config.output_dir.is_absolute() {
            self.config.output_dir.clone()
        } else {
            self.base_dir.join(&self.config.output_dir)
        }
    }

    /// Attenuation of the reference material (as a basis mix) at `energy_kev`.
    pub fn reference_mu(&self, energy_kev: f64) -> Result<f64> {
        crate::recon::mix_attenuation(&self.materials, &self.reference_fractions, energy_kev)
    }
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    })
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(origin, e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Validates every section and resolves materials, spectrum and phantom.
    /// Relative paths resolve against `base_dir`.
    pub fn resolve(self, base_dir: &Path) -> Result<Setup> {
        at("geometry", self.geometry.validate())?;
        at("recon.grid", self.recon.grid.validate())?;
        if self.materials.basis.is_empty() {
            return Err(Error::config(
                "materials.basis",
                "at least one basis material is required",
            ));
        }
        let materials = self
            .materials
            .basis
            .iter()
            .enumerate()
            .map(|(i, name)| {
                at(
                    &format!("materials.basis[{i}]"),
                    MaterialAttenuation::resolve(name, Some(base_dir)),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let l = materials.len();
        let reference = at(
            "materials.reference",
            MaterialAttenuation::resolve(&self.materials.reference, Some(base_dir)),
        )?;
        let edges = &self.spectrum.bin_edges;
        let spectrum = if self.spectrum.source == "w120" {
            at("spectrum.bin_edges", SourceSpectrum::bundled_120kvp(edges.clone()))?
        } else {
            let p = base_dir.join(&self.spectrum.source);
            if !p.is_file() {
                return Err(Error::config(
                    "spectrum.source",
                    format!("no spectrum file at {}", p.display()),
                ));
            }
            at("spectrum", SourceSpectrum::load(&p, edges.clone()))?
        };
        let model = at("spectrum", SpectralModel::new(&spectrum, &materials))?;
        let (lo, hi) = (edges[0], *edges.last().unwrap());
        let reference_fractions = at(
            "materials.reference",
            equivalent_fractions(&reference, &materials, lo, hi),
        )?;

        let mut disks = Vec::new();
        match self.phantom.preset.as_deref() {
            None => {}
            Some("low-contrast") => disks.extend(Phantom::low_contrast(&reference_fractions).disks),
            Some(other) => return Err(Error::config("phantom.preset", format!("unknown preset '{other}'"))),
        }
        for (i, d) in self.phantom.disks.iter().enumerate() {
            let path = format!("phantom.disks[{i}]");
            let fractions = match (&d.fractions, d.density) {
                (Some(f), None) => f.clone(),
                (None, Some(rho)) => reference_fractions.iter().map(|w| w * rho).collect(),
                _ => return Err(Error::config(path, "give exactly one of `fractions` or `density`")),
            };
            let mut disk = Disk::new(d.center, d.radius, fractions);
            disk.label = d.label.clone();
            disks.push(disk);
        }
        let phantom = Phantom::new(disks);
        at("phantom", phantom.validate(l))?;

        if !(self.simulation.dose > 0.0 && self.simulation.dose.is_finite()) {
            return Err(Error::config("simulation.dose", "must be positive"));
        }
        let c = &self.calibration;
        if !(c.dose > 0.0 && c.dose.is_finite()) {
            return Err(Error::config("calibration.dose", "must be positive"));
        }
        if c.order > crate::calibration::MAX_ORDER {
            return Err(Error::config(
                "calibration.order",
                format!("at most {}", crate::calibration::MAX_ORDER),
            ));
        }
        if c.grid_points.len() != l || c.lower.len() != l || c.upper.len() != l {
            return Err(Error::config(
                "calibration",
                format!("grid_points, lower and upper need {l} entries"),
            ));
        }
        let domain = at("calibration", CalibrationDomain::new(c.lower.clone(), c.upper.clone()))?;
        let design = at(
            "calibration",
            CalibrationDesign::grid(&domain, &c.grid_points, c.repeats),
        )?;
        at("mle", self.mle.validate(l))?;
        at("mace", self.mace.validate(l))?;
        if !(self.recon.window_width > 0.0) {
            return Err(Error::config("recon.window_width", "must be positive"));
        }
        for m in &materials {
            at("recon.mono_energy_kev", m.mu(self.recon.mono_energy_kev).map(|_| ()))?;
        }
        at("roi", self.roi.spec.validate(&self.recon.grid))?;
        if let Some(bg) = &self.roi.background {
            if self.roi.spec.get(bg).is_none() {
                return Err(Error::config("roi.background", format!("no circle labeled '{bg}'")));
            }
        }
        Ok(Setup {
            config: self,
            base_dir: base_dir.to_path_buf(),
            materials,
            reference_fractions,
            model,
            phantom,
            design,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let s = PipelineConfig::default().resolve(Path::new(".")).unwrap();
        assert_eq!(s.model.n_bins(), 8);
        assert_eq!(s.phantom.disks.len(), 4);
    }

    #[test]
    fn unknown_material_is_path_qualified() {
        let text = "[materials]\nbasis = [\"polyethylene\", \"unobtainium\"]\n";
        let e = PipelineConfig::from_toml_str(text, "t.toml")
            .unwrap()
            .resolve(Path::new("."))
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("materials.basis[1]"), "{msg}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = PipelineConfig::from_toml_str("[simulation]\ndose = 1.0\nnoize = false\n", "t.toml").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text, "x").unwrap(), c);
    }
}
