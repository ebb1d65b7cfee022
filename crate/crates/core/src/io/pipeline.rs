//! Pipeline stages. Every stage reads and writes files in the output
//! directory and records a manifest with the SHA-256 of its config section,
//! inputs and outputs so unchanged stages can be skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3, Ix2, Ix3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibration_file::{read_calibration, write_calibration};
use super::config::Setup;
use super::container::{read_array_ndim, write_array};
use super::preview::write_png;
use crate::calibration::calibrate;
use crate::error::{Error, Result};
use crate::mace::{mle_decompose, run_mace};
use crate::metrics::{roi_stats, stats_csv};
use crate::recon::{reconstruct_materials, synthesize_mono, FbpOptions, MaterialImage};
use crate::sinogram::{PathlengthSinogram, TransmissionSinogram};
use crate::spectral::scan_phantom;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mle,
    Mace,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Mace => "mace",
        }
    }

    pub const ALL: [Method; 2] = [Method::Mle, Method::Mace];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Method::Mle),
            "mace" => Ok(Method::Mace),
            _ => Err(Error::config("--method", format!("expected mle or mace, got '{s}'"))),
        }
    }
}

pub const TRANSMISSION: &str = "transmission.pcmd";
pub const AIR_TOTAL: &str = "air_total.pcmd";
pub const TRUE_PATHLENGTHS: &str = "pathlengths_true.pcmd";
pub const CALIBRATION: &str = "calibration.toml";
pub const STATS: &str = "stats.csv";

pub fn pathlengths_file(m: Method) -> String {
    format!("pathlengths_{}.pcmd", m.name())
}

pub fn material_file(m: Method) -> String {
    format!("material_{}.pcmd", m.name())
}

pub fn mono_file(m: Method) -> String {
    format!("mono_{}.pcmd", m.name())
}

/// What a stage did.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: String,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    stage: String,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn config_digest(sections: &[(&str, toml::Value)]) -> String {
    let mut table = toml::Table::new();
    for (k, v) in sections {
        table.insert(k.to_string(), v.clone());
    }
    hex::encode(Sha256::digest(toml::to_string(&table).unwrap_or_default().as_bytes()))
}

fn value<T: Serialize>(v: &T) -> toml::Value {
    toml::Value::try_from(v).unwrap_or(toml::Value::String(String::new()))
}

struct Stage<'a> {
    name: String,
    dir: &'a Path,
    config_sha256: String,
    inputs: Vec<String>,
}

impl<'a> Stage<'a> {
    fn manifest_path(&self) -> PathBuf {
        self.dir.join(format!("{}.manifest.toml", self.name))
    }

    fn hash_inputs(&self) -> Result<BTreeMap<String, String>> {
        self.inputs
            .iter()
            .map(|f| Ok((f.clone(), sha256_file(&self.dir.join(f))?)))
            .collect()
    }

    /// True when a manifest exists whose config, inputs and outputs all
    /// still match the files on disk.
    fn is_current(&self) -> bool {
        let Ok(text) = std::fs::read_to_string(self.manifest_path()) else {
            return false;
        };
        let Ok(m) = toml::from_str::<Manifest>(&text) else {
            return false;
        };
        if m.config_sha256 != self.config_sha256 {
            return false;
        }
        match self.hash_inputs() {
            Ok(h) if h == m.inputs => {}
            _ => return false,
        }
        m.outputs
            .iter()
            .all(|(f, h)| sha256_file(&self.dir.join(f)).is_ok_and(|x| &x == h))
    }

    fn record(&self, outputs: &[String]) -> Result<Vec<PathBuf>> {
        let m = Manifest {
            stage: self.name.clone(),
            config_sha256: self.config_sha256.clone(),
            inputs: self.hash_inputs()?,
            outputs: outputs
                .iter()
                .map(|f| Ok((f.clone(), sha256_file(&self.dir.join(f))?)))
                .collect::<Result<_>>()?,
        };
        let path = self.manifest_path();
        let text = toml::to_string(&m).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(outputs.iter().map(|f| self.dir.join(f)).collect())
    }

    fn skipped(&self) -> StageReport {
        StageReport {
            stage: self.name.clone(),
            skipped: true,
            outputs: vec![],
            summary: format!("{}: up to date", self.name),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::io(
            &p,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "missing input; run the upstream stage first",
            ),
        ))
    }
}

fn simulate_stage<'a>(setup: &Setup, dir: &'a Path) -> Stage<'a> {
    let c = &setup.config;
    Stage {
        name: "simulate".into(),
        dir,
        config_sha256: config_digest(&[
            ("geometry", value(&c.geometry)),
            ("spectrum", value(&c.spectrum)),
            ("materials", value(&c.materials)),
            ("phantom", value(&c.phantom)),
            ("simulation", value(&c.simulation)),
            ("seed", value(&c.seeds.simulate)),
        ]),
        inputs: vec![],
    }
}

fn run_simulate(setup: &Setup, stage: &Stage) -> Result<StageReport> {
    let c = &setup.config;
    let scan = scan_phantom(
        &setup.phantom,
        &c.geometry,
        &setup.model,
        c.simulation.dose,
        c.simulation.noise,
        c.seeds.simulate,
    )?;
    let dir = stage.dir;
    write_array(
        &dir.join(TRANSMISSION),
        scan.transmission.t.view().into_dyn(),
        &["view", "channel", "bin"],
    )?;
    write_array(
        &dir.join(AIR_TOTAL),
        scan.counts.air_total.view().into_dyn(),
        &["view", "channel"],
    )?;
    write_array(
        &dir.join(TRUE_PATHLENGTHS),
        scan.pathlengths.0.view().into_dyn(),
        &["view", "channel", "material"],
    )?;
    let outputs = stage.record(&[TRANSMISSION.into(), AIR_TOTAL.into(), TRUE_PATHLENGTHS.into()])?;
    Ok(StageReport {
        stage: stage.name.clone(),
        skipped: false,
        outputs,
        summary: format!(
            "simulate: {} views × {} channels × {} bins, noise {}",
            c.geometry.n_views,
            c.geometry.n_channels,
            setup.model.n_bins(),
            if c.simulation.noise { "on" } else { "off" }
        ),
    })
}

pub fn cmd_simulate(setup: &Setup) -> Result<StageReport> {
    let dir = setup.output_dir();
    ensure_dir(&dir)?;
    run_simulate(setup, &simulate_stage(setup, &dir))
}

fn calibrate_stage<'a>(setup: &Setup, dir: &'a Path) -> Stage<'a> {
    let c = &setup.config;
    Stage {
        name: "calibrate".into(),
        dir,
        config_sha256: config_digest(&[
            ("geometry", value(&c.geometry)),
            ("spectrum", value(&c.spectrum)),
            ("materials", value(&c.materials)),
            ("calibration", value(&c.calibration)),
            ("seed", value(&c.seeds.calibrate)),
        ]),
        inputs: vec![],
    }
}

fn run_calibrate(setup: &Setup, stage: &Stage) -> Result<StageReport> {
    let c = &setup.config;
    let (cal, report) = calibrate(
        &setup.model,
        &setup.design,
        &c.geometry,
        c.calibration.order,
        c.calibration.dose,
        c.calibration.noise,
        c.seeds.calibrate,
    )?;
    write_calibration(&stage.dir.join(CALIBRATION), &cal)?;
    let coeff = Path::new(CALIBRATION).with_extension("pcmd").display().to_string();
    let outputs = stage.record(&[CALIBRATION.into(), coeff])?;
    Ok(StageReport {
        stage: stage.name.clone(),
        skipped: false,
        outputs,
        summary: format!(
            "calibrate: max fit residual {:.3e} (channel {})",
            report.max_residual, report.worst_channel
        ),
    })
}

pub fn cmd_calibrate(setup: &Setup) -> Result<StageReport> {
    let dir = setup.output_dir();
    ensure_dir(&dir)?;
    run_calibrate(setup, &calibrate_stage(setup, &dir))
}

/// Inputs for decomposition, shape-checked against each other.
pub fn load_decomposition_inputs(
    dir: &Path,
) -> Result<(TransmissionSinogram, Array2<f64>, crate::calibration::Calibration)> {
    let t = read_array_ndim(&require(dir, TRANSMISSION)?, 3)?.data;
    let air = read_array_ndim(&require(dir, AIR_TOTAL)?, 2)?.data;
    let cal = read_calibration(&require(dir, CALIBRATION)?)?;
    let t: Array3<f64> = t.into_dimensionality::<Ix3>().expect("rank checked");
    let air: Array2<f64> = air.into_dimensionality::<Ix2>().expect("rank checked");
    let (v, c, k) = t.dim();
    if air.dim() != (v, c) {
        return Err(Error::Shape(format!(
            "air totals are {:?}, transmission is ({v}, {c}, {k})",
            air.dim()
        )));
    }
    if k != cal.n_bins() {
        return Err(Error::Shape(format!(
            "transmission has {k} energy bins but the calibration was fitted for {}",
            cal.n_bins()
        )));
    }
    if c != cal.detectors.len() {
        return Err(Error::Shape(format!(
            "transmission has {c} channels but the calibration covers {}",
            cal.detectors.len()
        )));
    }
    Ok((TransmissionSinogram { t }, air, cal))
}

fn decompose_stage<'a>(setup: &Setup, dir: &'a Path, method: Method) -> Stage<'a> {
    let c = &setup.config;
    let section = match method {
        Method::Mle => value(&c.mle),
        Method::Mace => value(&c.mace),
    };
    Stage {
        name: format!("decompose_{}", method.name()),
        dir,
        config_sha256: config_digest(&[(method.name(), section)]),
        inputs: vec![
            TRANSMISSION.into(),
            AIR_TOTAL.into(),
            CALIBRATION.into(),
            Path::new(CALIBRATION).with_extension("pcmd").display().to_string(),
        ],
    }
}

fn run_decompose(setup: &Setup, stage: &Stage, method: Method) -> Result<StageReport> {
    let (t, air, cal) = load_decomposition_inputs(stage.dir)?;
    let (nv, nc, _) = t.t.dim();
    let start = Instant::now();
    let mut log = String::new();
    let _ = writeln!(log, "method = \"{}\"", method.name());
    let p: PathlengthSinogram = match method {
        Method::Mle => {
            let out = mle_decompose(&t, &air, &cal, &setup.config.mle)?;
            let _ = writeln!(log, "n_mle = {}", setup.config.mle.n_mle);
            let _ = writeln!(log, "divergent_rows = {}", out.divergent_rows.len());
            out.pathlengths
        }
        Method::Mace => {
            let out = run_mace(&t, &air, &cal, &setup.config.mace, None)?;
            let _ = writeln!(log, "n_mace = {}", setup.config.mace.n_mace);
            let _ = writeln!(log, "residuals = {:?}", out.residuals);
            out.estimate
        }
    };
    let wall = start.elapsed().as_secs_f64();
    // A 2D scan is a single detector row.
    let _ = writeln!(log, "projections = {}", nv * nc);
    let _ = writeln!(log, "wall_time_s = {wall:.6}");
    let _ = writeln!(log, "wall_time_per_row_s = {wall:.6}");
    let _ = writeln!(log, "projections_per_s = {:.1}", (nv * nc) as f64 / wall.max(1e-9));
    let out = pathlengths_file(method);
    write_array(
        &stage.dir.join(&out),
        p.0.view().into_dyn(),
        &["view", "channel", "material"],
    )?;
    let log_name = format!("decompose_{}.log", method.name());
    std::fs::write(stage.dir.join(&log_name), &log).map_err(|e| Error::io(stage.dir.join(&log_name), e))?;
    let outputs = stage.record(&[out])?;
    Ok(StageReport {
        stage: stage.name.clone(),
        skipped: false,
        outputs,
        summary: format!("decompose ({}): {} projections in {wall:.2} s", method.name(), nv * nc),
    })
}

pub fn cmd_decompose(setup: &Setup, method: Method) -> Result<StageReport> {
    let dir = setup.output_dir();
    run_decompose(setup, &decompose_stage(setup, &dir, method), method)
}

fn available(dir: &Path, f: fn(Method) -> String, methods: &[Method]) -> Vec<Method> {
    methods.iter().copied().filter(|m| dir.join(f(*m)).is_file()).collect()
}

fn reconstruct_stage<'a>(setup: &Setup, dir: &'a Path, methods: &[Method]) -> Stage<'a> {
    let c = &setup.config;
    Stage {
        name: "reconstruct".into(),
        dir,
        config_sha256: config_digest(&[
            ("geometry", value(&c.geometry)),
            ("materials", value(&c.materials)),
            ("spectrum", value(&c.spectrum)),
            ("recon", value(&c.recon)),
        ]),
        inputs: methods.iter().map(|m| pathlengths_file(*m)).collect(),
    }
}

fn run_reconstruct(setup: &Setup, stage: &Stage, methods: &[Method]) -> Result<StageReport> {
    let c = &setup.config;
    let e = c.recon.mono_energy_kev;
    let mu_ref = setup.reference_mu(e)?;
    let mut outputs = Vec::new();
    for &m in methods {
        let p = read_array_ndim(&stage.dir.join(pathlengths_file(m)), 3)?.data;
        let p = PathlengthSinogram(p.into_dimensionality::<Ix3>().expect("rank checked"));
        p.check_shape(c.geometry.n_views, c.geometry.n_channels, setup.materials.len())?;
        let x: MaterialImage =
            reconstruct_materials(&p, &c.geometry, &c.recon.grid, FbpOptions { hann: c.recon.hann })?;
        let mono = synthesize_mono(&x, &setup.materials, e)?.modified_hu(mu_ref)?;
        write_array(
            &stage.dir.join(material_file(m)),
            x.values.view().into_dyn(),
            &["y", "x", "material"],
        )?;
        write_array(
            &stage.dir.join(mono_file(m)),
            mono.values.view().into_dyn(),
            &["y", "x"],
        )?;
        let png = format!("mono_{}.png", m.name());
        write_png(
            &stage.dir.join(&png),
            mono.values.view(),
            c.recon.window_center,
            c.recon.window_width,
        )?;
        outputs.extend([material_file(m), mono_file(m), png]);
    }
    let outputs = stage.record(&outputs)?;
    Ok(StageReport {
        stage: stage.name.clone(),
        skipped: false,
        outputs,
        summary: format!(
            "reconstruct: {} at {e} keV",
            methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn no_inputs(dir: &Path, what: &str) -> Error {
    Error::io(
        dir,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {what} found; run the upstream stage first"),
        ),
    )
}

pub fn cmd_reconstruct(setup: &Setup) -> Result<StageReport> {
    let dir = setup.output_dir();
    let methods = available(&dir, pathlengths_file, &Method::ALL);
    if methods.is_empty() {
        return Err(no_inputs(&dir, "decomposed sinograms"));
    }
    run_reconstruct(setup, &reconstruct_stage(setup, &dir, &methods), &methods)
}

fn evaluate_stage<'a>(setup: &Setup, dir: &'a Path, methods: &[Method]) -> Stage<'a> {
    Stage {
        name: "evaluate".into(),
        dir,
        config_sha256: config_digest(&[
            ("roi", value(&setup.config.roi)),
            ("grid", value(&setup.config.recon.grid)),
        ]),
        inputs: methods.iter().map(|m| mono_file(*m)).collect(),
    }
}

fn run_evaluate(setup: &Setup, stage: &Stage, methods: &[Method]) -> Result<StageReport> {
    let c = &setup.config;
    let mut rows = Vec::new();
    for &m in methods {
        let img = read_array_ndim(&stage.dir.join(mono_file(m)), 2)?.data;
        let img = img.into_dimensionality::<Ix2>().expect("rank checked");
        if img.dim() != (c.recon.grid.ny, c.recon.grid.nx) {
            return Err(Error::Shape("mono image does not match recon.grid".into()));
        }
        rows.push((m.name().to_string(), roi_stats(img.view(), &c.recon.grid, &c.roi.spec)?));
    }
    let csv = stats_csv(&rows, c.roi.background.as_deref());
    let path = stage.dir.join(STATS);
    std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    let outputs = stage.record(&[STATS.into()])?;
    Ok(StageReport {
        stage: stage.name.clone(),
        skipped: false,
        outputs,
        summary: csv,
    })
}

pub fn cmd_evaluate(setup: &Setup) -> Result<StageReport> {
    let dir = setup.output_dir();
    let methods = available(&dir, mono_file, &Method::ALL);
    if methods.is_empty() {
        return Err(no_inputs(&dir, "mono images"));
    }
    run_evaluate(setup, &evaluate_stage(setup, &dir, &methods), &methods)
}

/// Runs every stage, skipping those whose manifest is current. Decomposes
/// with `methods` (both when empty).
pub fn cmd_pipeline(setup: &Setup, methods: &[Method]) -> Result<Vec<StageReport>> {
    let methods: Vec<Method> = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods.to_vec()
    };
    let dir = setup.output_dir();
    ensure_dir(&dir)?;
    let mut reports = Vec::new();
    let s = simulate_stage(setup, &dir);
    reports.push(if s.is_current() {
        s.skipped()
    } else {
        run_simulate(setup, &s)?
    });
    let s = calibrate_stage(setup, &dir);
    reports.push(if s.is_current() {
        s.skipped()
    } else {
        run_calibrate(setup, &s)?
    });
    for &m in &methods {
        let s = decompose_stage(setup, &dir, m);
        reports.push(if s.is_current() {
            s.skipped()
        } else {
            run_decompose(setup, &s, m)?
        });
    }
    let s = reconstruct_stage(setup, &dir, &methods);
    reports.push(if s.is_current() {
        s.skipped()
    } else {
        run_reconstruct(setup, &s, &methods)?
    });
    let s = evaluate_stage(setup, &dir, &methods);
    reports.push(if s.is_current() {
        s.skipped()
    } else {
        run_evaluate(setup, &s, &methods)?
    });
    Ok(reports)
}

/// Material image of a method's reconstruction, as written by
/// [`cmd_reconstruct`].
pub fn read_material_image(dir: &Path, method: Method, grid: crate::geometry::ImageGrid) -> Result<MaterialImage> {
    let a = read_array_ndim(&require(dir, &material_file(method))?, 3)?.data;
    MaterialImage::new(a.into_dimensionality::<Ix3>().expect("rank checked"), grid)
}
