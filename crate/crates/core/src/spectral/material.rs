use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear attenuation coefficient table for one material, sampled at 1 keV
/// steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialAttenuation {
    name: String,
    energy_start_kev: f64,
    mu: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaterialFile {
    name: String,
    #[serde(default)]
    formula: Option<String>,
    #[serde(default)]
    density: Option<f64>,
    #[serde(default)]
    source: Option<String>,
    energy_start_kev: f64,
    energy_step_kev: f64,
    mu: Vec<f64>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("polyethylene", include_str!("../../data/materials/polyethylene.toml")),
    ("pvc", include_str!("../../data/materials/pvc.toml")),
    ("water", include_str!("../../data/materials/water.toml")),
    ("aluminum", include_str!("../../data/materials/aluminum.toml")),
    ("iodine", include_str!("../../data/materials/iodine.toml")),
    ("bone", include_str!("../../data/materials/bone.toml")),
];

impl MaterialAttenuation {
    pub fn new(name: impl Into<String>, energy_start_kev: f64, mu: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if mu.is_empty() {
            return Err(Error::InvalidArgument(format!("material `{name}` has an empty table")));
        }
        if !energy_start_kev.is_finite() || energy_start_kev.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "material `{name}`: table must start on an integer keV"
            )));
        }
        if let Some(i) = mu.iter().position(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "material `{name}`: mu at {} keV is not positive",
                energy_start_kev + i as f64
            )));
        }
        Ok(Self {
            name,
            energy_start_kev,
            mu,
        })
    }

    /// Material with the same attenuation at every tabulated energy.
    pub fn constant(name: impl Into<String>, lo_kev: f64, hi_kev: f64, mu: f64) -> Result<Self> {
        let n = (hi_kev - lo_kev).round() as usize + 1;
        Self::new(name, lo_kev, vec![mu; n])
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: MaterialFile = toml::from_str(text).map_err(|e| Error::config("material", e.to_string()))?;
        if file.energy_step_kev != 1.0 {
            return Err(Error::config(
                format!("material.{}.energy_step_kev", file.name),
                "only 1 keV tables are supported",
            ));
        }
        Self::new(file.name, file.energy_start_kev, file.mu)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// One of the tables shipped with the crate.
    pub fn bundled(name: &str) -> Result<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::UnknownMaterial(name.to_string()))
            .and_then(|(_, text)| Self::from_toml_str(text))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// Resolves a bundled name, falling back to a table file path.
    pub fn resolve(name_or_path: &str, base_dir: Option<&Path>) -> Result<Self> {
        if let Ok(m) = Self::bundled(name_or_path) {
            return Ok(m);
        }
        let p = Path::new(name_or_path);
        let p = match base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        };
        if p.is_file() {
            Self::load(&p)
        } else {
            Err(Error::UnknownMaterial(name_or_path.to_string()))
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn energy_range(&self) -> (f64, f64) {
        (
            self.energy_start_kev,
            self.energy_start_kev + (self.mu.len() - 1) as f64,
        )
    }

    pub fn table(&self) -> &[f64] {
        &self.mu
    }

    /// Attenuation at an exact 1 keV node, if tabulated.
    pub fn mu_at_node(&self, energy_kev: f64) -> Option<f64> {
        let i = energy_kev - self.energy_start_kev;
        if i < 0.0 || i.fract() != 0.0 {
            return None;
        }
        self.mu.get(i as usize).copied()
    }

    /// Attenuation at any energy inside the table, linearly interpolated
    /// between nodes.
    pub fn mu(&self, energy_kev: f64) -> Result<f64> {
        let (lo, hi) = self.energy_range();
        if !(energy_kev >= lo && energy_kev <= hi) {
            return Err(Error::EnergyOutOfRange {
                energy: energy_kev,
                lo,
                hi,
            });
        }
        let x = energy_kev - lo;
        let i = (x.floor() as usize).min(self.mu.len() - 1);
        if i + 1 == self.mu.len() {
            return Ok(self.mu[i]);
        }
        let w = x - i as f64;
        Ok(self.mu[i] * (1.0 - w) + self.mu[i + 1] * w)
    }
}

/// Least-squares volume fractions of `basis` materials whose combined
/// attenuation best matches `target` over the integer energies in
/// `[lo_kev, hi_kev]`.
pub fn equivalent_fractions(
    target: &MaterialAttenuation,
    basis: &[MaterialAttenuation],
    lo_kev: f64,
    hi_kev: f64,
) -> Result<Vec<f64>> {
    let l = basis.len();
    let mut normal = vec![0.0; l * l];
    let mut rhs = vec![0.0; l];
    let mut e = lo_kev.ceil();
    while e <= hi_kev {
        let t = target.mu(e)?;
        let row = basis.iter().map(|b| b.mu(e)).collect::<Result<Vec<_>>>()?;
        for i in 0..l {
            rhs[i] += row[i] * t;
            for j in 0..l {
                normal[i * l + j] += row[i] * row[j];
            }
        }
        e += 1.0;
    }
    crate::linalg::solve_spd(&mut normal, &mut rhs, l)
        .ok_or_else(|| Error::Singular("basis attenuation vectors are collinear".into()))?;
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_cover_20_to_150_kev() {
        for name in MaterialAttenuation::bundled_names() {
            let m = MaterialAttenuation::bundled(name).unwrap();
            assert_eq!(m.energy_range(), (20.0, 150.0), "{name}");
        }
    }

    #[test]
    fn interpolation_hits_nodes() {
        let m = MaterialAttenuation::bundled("water").unwrap();
        assert_eq!(m.mu(70.0).unwrap(), m.mu_at_node(70.0).unwrap());
        let mid = m.mu(70.5).unwrap();
        let (a, b) = (m.mu(70.0).unwrap(), m.mu(71.0).unwrap());
        assert!((mid - 0.5 * (a + b)).abs() < 1e-15);
        assert!(matches!(m.mu(10.0), Err(Error::EnergyOutOfRange { .. })));
        assert!(matches!(m.mu(151.0), Err(Error::EnergyOutOfRange { .. })));
    }

    #[test]
    fn rejects_nonpositive_mu() {
        assert!(MaterialAttenuation::new("bad", 20.0, vec![1.0, 0.0]).is_err());
        assert!(MaterialAttenuation::new("bad", 20.0, vec![]).is_err());
    }

    #[test]
    fn unknown_material() {
        assert!(matches!(
            MaterialAttenuation::resolve("unobtainium", None),
            Err(Error::UnknownMaterial(_))
        ));
    }

    #[test]
    fn water_is_close_to_a_pe_pvc_mix() {
        let basis = [
            MaterialAttenuation::bundled("polyethylene").unwrap(),
            MaterialAttenuation::bundled("pvc").unwrap(),
        ];
        let water = MaterialAttenuation::bundled("water").unwrap();
        let x = equivalent_fractions(&water, &basis, 30.0, 120.0).unwrap();
        for e in [40.0, 70.0, 100.0] {
            let mix = x[0] * basis[0].mu(e).unwrap() + x[1] * basis[1].mu(e).unwrap();
            let w = water.mu(e).unwrap();
            assert!((mix - w).abs() / w < 0.02, "{e} keV: {mix} vs {w}");
        }
    }
}
