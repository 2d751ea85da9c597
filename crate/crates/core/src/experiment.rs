//! Configuration-driven studies and their artifacts.
//!
//! A [`RunConfig`] is read from JSON (unknown fields are rejected), checked
//! with [`validate_config`], and executed by [`execute`] in one of three
//! modes. The `iml` binary is a thin wrapper over this module.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ImlError;
use crate::gpr::FitOptions;
use crate::ilc::{self, IlcConfig, IterationHistory, RhoFloor, DEFAULT_NOISE_FRACTION};
use crate::model::{FrequencyModel, DEFAULT_CI_FACTOR};
use crate::plant::{self, example_plant, NoiseModel, RngStream, TransferFunction};
use crate::spectrum::{
    desired_trajectory, forward_transform, inverse_transform, make_grid, ComplexSpectrum, FrequencyGrid,
    TimeSeries, TrajectorySpec,
};
use crate::{fmt_f64, sig4};

/// Failure of a study, split by the exit status it maps to.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] ImlError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Iml,
    BaselineModelless,
    PeComparison,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "iml" => Ok(Mode::Iml),
            "baseline_modelless" => Ok(Mode::BaselineModelless),
            "pe_comparison" => Ok(Mode::PeComparison),
            other => Err(format!(
                "unknown mode {other:?}, expected iml, baseline_modelless or pe_comparison"
            )),
        }
    }
}

/// Plant selection: the literal `"example"` or explicit coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Named(String),
    Coefficients {
        numerator: Vec<f64>,
        denominator: Vec<f64>,
    },
}

impl PlantSpec {
    pub fn build(&self) -> std::result::Result<TransferFunction, String> {
        match self {
            PlantSpec::Named(name) if name == "example" => Ok(example_plant()),
            PlantSpec::Named(name) => Err(format!("unknown plant {name:?}, expected \"example\"")),
            PlantSpec::Coefficients { numerator, denominator } => {
                TransferFunction::new(numerator.clone(), denominator.clone()).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub sample_time: f64,
    pub total_duration: f64,
}

/// One desired output; the record length comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub main_frequency_hz: f64,
    pub num_harmonics: u32,
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
}

impl TrajectoryEntry {
    pub fn spec(&self, total_duration: f64) -> TrajectorySpec {
        TrajectorySpec {
            main_frequency_hz: self.main_frequency_hz,
            num_harmonics: self.num_harmonics,
            t0: self.t0,
            t1: self.t1,
            t2: self.t2,
            total_duration,
        }
    }
}

fn default_rho_floor() -> RhoFloor {
    RhoFloor::Scalar(0.9)
}
fn default_total() -> usize {
    5
}
fn default_pe() -> usize {
    3
}
fn default_ci() -> f64 {
    DEFAULT_CI_FACTOR
}
fn default_fraction() -> f64 {
    DEFAULT_NOISE_FRACTION
}
fn default_alpha() -> f64 {
    1.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Iteration settings as written in a config file. Excitation thresholds
/// left out are derived from the trajectory's noise deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlcSettings {
    pub omega_c: f64,
    #[serde(default = "default_rho_floor")]
    pub rho_floor: RhoFloor,
    #[serde(default = "default_total")]
    pub total_iterations: usize,
    #[serde(default = "default_pe")]
    pub pe_iterations: usize,
    #[serde(default)]
    pub u_pe: Option<f64>,
    #[serde(default)]
    pub u_tilde: Option<f64>,
    #[serde(default)]
    pub u_ok: Option<f64>,
    #[serde(default = "default_ci")]
    pub ci_factor: f64,
    #[serde(default)]
    pub freeze_after_pe: bool,
    #[serde(default)]
    pub pe_on_warm_start: bool,
    #[serde(default)]
    pub fit_on_raw_samples: bool,
    #[serde(default)]
    pub gpr: FitOptions,
}

impl IlcSettings {
    /// Concrete settings for a trajectory with noise deviation `sigma`.
    pub fn resolve(&self, sigma: f64) -> IlcConfig {
        let u_pe = self.u_pe.unwrap_or(10.0 * sigma);
        IlcConfig {
            omega_c: self.omega_c,
            rho_floor: self.rho_floor.clone(),
            total_iterations: self.total_iterations,
            pe_iterations: self.pe_iterations,
            u_pe,
            u_tilde: self.u_tilde.unwrap_or(100.0 * sigma),
            u_ok: self.u_ok.unwrap_or(u_pe),
            ci_factor: self.ci_factor,
            freeze_after_pe: self.freeze_after_pe,
            pe_on_warm_start: self.pe_on_warm_start,
            fit_on_raw_samples: self.fit_on_raw_samples,
            gpr: self.gpr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSpec,
    pub grid: GridSpec,
    /// Trajectories run in order; each later one starts from the model
    /// learned on the one before it.
    pub trajectories: Vec<TrajectoryEntry>,
    pub ilc: IlcSettings,
    /// Explicit noise deviation; otherwise `noise_fraction * max |y_d|`.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default = "default_fraction")]
    pub noise_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    /// Scale of the first model-less input.
    #[serde(default = "default_alpha")]
    pub baseline_alpha: f64,
    /// Also write fitted hyperparameters as `hyperparams.json`.
    #[serde(default)]
    pub dump_hyperparams: bool,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub mode: Option<Mode>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            ExperimentError::Config(msg) => ExperimentError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(mode) = o.mode {
            self.mode = mode;
        }
    }
}

/// Every violated invariant, as human-readable diagnostics. Empty means valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    if let Err(e) = cfg.plant.build() {
        out.push(format!("plant: {e}"));
    } else if let Ok(tf) = cfg.plant.build() {
        if !tf.is_stable() {
            out.push("plant: denominator is not Hurwitz".into());
        }
    }

    let grid = match make_grid(cfg.grid.sample_time, cfg.grid.total_duration) {
        Ok(g) => Some(g),
        Err(e) => {
            out.push(format!("grid: {e}"));
            None
        }
    };

    let ilc = &cfg.ilc;
    if !(ilc.omega_c.is_finite() && ilc.omega_c > 0.0) {
        out.push(format!("ilc.omega_c must be positive, got {}", ilc.omega_c));
    } else if let Some(g) = grid {
        if ilc.omega_c > g.nyquist() * (1.0 + 1e-12) {
            out.push(format!("cutoff exceeds Nyquist ({} > {} rad/s)", ilc.omega_c, g.nyquist()));
        } else if let RhoFloor::PerBin(v) = &ilc.rho_floor {
            let active = g.bins_up_to(ilc.omega_c);
            if v.len() != active {
                out.push(format!("ilc.rho_floor table has {} entries, expected {active}", v.len()));
            }
        }
    }
    let floors: &[f64] = match &ilc.rho_floor {
        RhoFloor::Scalar(v) => std::slice::from_ref(v),
        RhoFloor::PerBin(v) => v,
    };
    if floors.is_empty() || floors.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        out.push("ilc.rho_floor must lie in (0, 1)".into());
    }
    if ilc.total_iterations == 0 {
        out.push("ilc.total_iterations must be at least 1".into());
    }
    if ilc.pe_iterations > ilc.total_iterations {
        out.push(format!(
            "ilc.pe_iterations ({}) exceeds ilc.total_iterations ({})",
            ilc.pe_iterations, ilc.total_iterations
        ));
    }
    for (name, v) in [("u_pe", ilc.u_pe), ("u_tilde", ilc.u_tilde), ("u_ok", ilc.u_ok)] {
        if let Some(v) = v {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("ilc.{name} must be finite and non-negative, got {v}"));
            }
        }
    }
    if !(ilc.ci_factor.is_finite() && ilc.ci_factor >= 0.0) {
        out.push(format!("ilc.ci_factor must be non-negative, got {}", ilc.ci_factor));
    }
    if let Some(s) = ilc.gpr.fixed_noise_variance {
        if !(s.is_finite() && s > 0.0) {
            out.push(format!("ilc.gpr.fixed_noise_variance must be positive, got {s}"));
        }
    }
    if ilc.gpr.max_evaluations == 0 {
        out.push("ilc.gpr.max_evaluations must be at least 1".into());
    }

    if cfg.trajectories.is_empty() {
        out.push("trajectories must not be empty".into());
    }
    for (j, t) in cfg.trajectories.iter().enumerate() {
        if let Err(e) = t.spec(cfg.grid.total_duration).validate() {
            out.push(format!("trajectories[{j}]: {e}"));
        }
    }
    match cfg.noise_sigma {
        Some(s) if !(s.is_finite() && s >= 0.0) => out.push(format!("noise_sigma must be non-negative, got {s}")),
        _ => {}
    }
    if !(cfg.noise_fraction.is_finite() && cfg.noise_fraction >= 0.0) {
        out.push(format!("noise_fraction must be non-negative, got {}", cfg.noise_fraction));
    }
    if !(cfg.baseline_alpha.is_finite() && cfg.baseline_alpha != 0.0) {
        out.push(format!("baseline_alpha must be finite and non-zero, got {}", cfg.baseline_alpha));
    }
    out
}

/// A trajectory with its spectrum, noise level and concrete settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrajectory {
    pub spec: TrajectorySpec,
    pub y_d_time: TimeSeries,
    pub y_d: ComplexSpectrum,
    pub sigma: f64,
    pub noise: NoiseModel,
    pub ilc: IlcConfig,
}

/// Builds the plant and every trajectory of a validated config.
pub fn prepare(cfg: &RunConfig) -> Result<(TransferFunction, Vec<PreparedTrajectory>), ExperimentError> {
    let diagnostics = validate_config(cfg);
    if !diagnostics.is_empty() {
        return Err(ExperimentError::Config(diagnostics.join("; ")));
    }
    let tf = cfg.plant.build().map_err(ExperimentError::Config)?;
    let grid = make_grid(cfg.grid.sample_time, cfg.grid.total_duration)?;
    let prepared = cfg
        .trajectories
        .iter()
        .map(|t| prepare_trajectory(t, cfg, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tf, prepared))
}

fn prepare_trajectory(
    t: &TrajectoryEntry,
    cfg: &RunConfig,
    grid: &FrequencyGrid,
) -> Result<PreparedTrajectory, ExperimentError> {
    let spec = t.spec(cfg.grid.total_duration);
    let y_d_time = desired_trajectory(&spec, grid)?;
    let y_d = forward_transform(&y_d_time)?;
    let sigma = match cfg.noise_sigma {
        Some(s) => s,
        None => cfg.noise_fraction * y_d.max_abs_up_to(cfg.ilc.omega_c),
    };
    Ok(PreparedTrajectory {
        spec,
        y_d_time,
        y_d,
        sigma,
        noise: NoiseModel::uniform(sigma)?,
        ilc: cfg.ilc.resolve(sigma),
    })
}

/// Seed for trajectory `j` of a chained run; trajectory 0 uses `seed` itself.
pub fn chained_seed(seed: u64, j: usize) -> u64 {
    if j == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the trajectories in order, seeding each one's first input with the
/// previous run's final model.
pub fn run_chain(
    tf: &TransferFunction,
    prepared: &[PreparedTrajectory],
    seed: u64,
) -> crate::Result<Vec<IterationHistory>> {
    let mut out: Vec<IterationHistory> = Vec::with_capacity(prepared.len());
    for (j, p) in prepared.iter().enumerate() {
        let prior = out.last().and_then(|h| h.final_model.as_ref());
        out.push(ilc::run_iml(tf, &p.y_d, &p.ilc, &p.noise, prior, chained_seed(seed, j))?);
    }
    Ok(out)
}

/// Worst-case model-data component errors with and without excitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeComparisonReport {
    pub e_a_max: f64,
    pub e_b_max: f64,
    pub e_a_max_tilde: f64,
    pub e_b_max_tilde: f64,
}

/// Component errors at one bin (`NaN` where the input was zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeBinErrors {
    pub omega: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub e_a_tilde: f64,
    pub e_b_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeComparison {
    pub report: PeComparisonReport,
    pub bins: Vec<PeBinErrors>,
}

/// Measures the exact inverse input with and without excitation under one
/// shared noise draw and compares the resulting model data with the truth.
///
/// Every bin up to the cutoff with a non-zero input contributes, so the
/// plain arm shows how badly noise corrupts the data where `u_d` is small.
pub fn pe_comparison(
    tf: &TransferFunction,
    y_d: &ComplexSpectrum,
    cfg: &IlcConfig,
    noise: &NoiseModel,
    seed: u64,
) -> crate::Result<PeComparison> {
    let grid = *y_d.grid();
    let u_d = plant::exact_inverse_input(tf, y_d, cfg.omega_c)?;
    let pe_cfg = IlcConfig {
        pe_iterations: cfg.pe_iterations.max(1),
        ..cfg.clone()
    };
    let mut excitation = ilc::pe_augmentation(&u_d, &pe_cfg, 1, &mut RngStream::with_stream(seed, 1));
    excitation.truncate_above(cfg.omega_c);
    let u_aug = u_d.zip_with(&excitation, |a, b| a + b)?;

    let n = plant::draw_noise(&grid, noise, &mut RngStream::with_stream(seed, 0));
    let response = tf.response_on(&grid)?;
    let plain = plant::measure(&response, &u_d, n.clone())?;
    let augmented = plant::measure(&response, &u_aug, n)?;

    let active = grid.bins_up_to(cfg.omega_c);
    let mut bins = Vec::with_capacity(active);
    let mut report = PeComparisonReport {
        e_a_max: 0.0,
        e_b_max: 0.0,
        e_a_max_tilde: 0.0,
        e_b_max_tilde: 0.0,
    };
    let errors = |u: num_complex::Complex64, y: num_complex::Complex64, g: num_complex::Complex64| {
        if u.norm() > 0.0 {
            let m = y / u;
            ((m.re - g.re).abs(), (m.im - g.im).abs())
        } else {
            (f64::NAN, f64::NAN)
        }
    };
    for i in 0..active {
        let g = response.values()[i];
        let (e_a, e_b) = errors(u_d.values()[i], plain.measured.values()[i], g);
        let (e_a_tilde, e_b_tilde) = errors(u_aug.values()[i], augmented.measured.values()[i], g);
        // f64::max ignores NaN, so untouched bins drop out of the maxima.
        report.e_a_max = report.e_a_max.max(e_a);
        report.e_b_max = report.e_b_max.max(e_b);
        report.e_a_max_tilde = report.e_a_max_tilde.max(e_a_tilde);
        report.e_b_max_tilde = report.e_b_max_tilde.max(e_b_tilde);
        bins.push(PeBinErrors {
            omega: grid.frequency(i),
            e_a,
            e_b,
            e_a_tilde,
            e_b_tilde,
        });
    }
    Ok(PeComparison { report, bins })
}

/// Terminal metrics of one trajectory run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub seed: u64,
    pub sigma: f64,
    pub first_e_y: f64,
    pub first_noise_level: f64,
    pub terminal_e_y: f64,
    pub terminal_e_g: Option<f64>,
    pub terminal_noise_level: f64,
}

impl TrajectoryMetrics {
    pub fn from_history(h: &IterationHistory, sigma: f64) -> Self {
        let first = &h.records[0];
        let last = h.last();
        Self {
            seed: h.seed,
            sigma,
            first_e_y: first.e_y,
            first_noise_level: first.noise_level,
            terminal_e_y: last.e_y,
            terminal_e_g: last.e_g,
            terminal_noise_level: last.noise_level,
        }
    }
}

/// Outcome of one executed config, also written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub resolved: Vec<IlcConfig>,
    pub trajectories: Vec<TrajectoryMetrics>,
    pub pe_comparison: Vec<PeComparisonReport>,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<String>,
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

struct ArtifactWriter {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactWriter {
    fn new(root: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(
        &mut self,
        rel: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<(), ExperimentError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut w = create(&path)?;
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        self.written.push(rel.to_string());
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes the history, per-iteration and model CSVs of one run under `prefix`.
fn write_history(
    out: &mut ArtifactWriter,
    prefix: &str,
    h: &IterationHistory,
    y_d_time: &TimeSeries,
    dump_hyperparams: bool,
) -> Result<(), ExperimentError> {
    out.write(&format!("{prefix}history.csv"), |w| {
        writeln!(w, "iteration,e_y_percent,e_g_percent,max_rho,max_rho_star")?;
        for r in &h.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.e_y),
                opt(r.e_g),
                fmt_f64(r.max_rho()),
                fmt_f64(r.max_rho_star())
            )?;
        }
        Ok(())
    })?;

    let omega_c = h.config.omega_c;
    for r in &h.records {
        let k = r.iteration;
        let y_k = inverse_transform(&r.y)?;
        let y_m = inverse_transform(&r.y_m)?;
        let u = inverse_transform(&r.u)?;
        out.write(&format!("{prefix}iter_{k}_time.csv"), |w| {
            writeln!(w, "t,y_d,y_k,y_m,u_time")?;
            let dt = y_d_time.sample_time;
            for i in 0..y_d_time.len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(i as f64 * dt),
                    fmt_f64(y_d_time.samples[i]),
                    fmt_f64(y_k.samples[i]),
                    fmt_f64(y_m.samples[i]),
                    fmt_f64(u.samples[i])
                )?;
            }
            Ok(())
        })?;
        out.write(&format!("{prefix}iter_{k}_freq.csv"), |w| {
            writeln!(w, "omega_rad_s,u_abs,u_hat_abs,u_tilde_abs,y_m_abs,rho,rho_star")?;
            let grid = r.u.grid();
            for i in 0..grid.bins_up_to(omega_c) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    fmt_f64(grid.frequency(i)),
                    fmt_f64(r.u.values()[i].norm()),
                    fmt_f64(r.u_hat.values()[i].norm()),
                    fmt_f64(r.u_tilde.values()[i].norm()),
                    fmt_f64(r.y_m.values()[i].norm()),
                    fmt_f64(r.rho[i]),
                    fmt_f64(r.rho_star[i])
                )?;
            }
            Ok(())
        })?;
        if let Some(fm) = &r.model {
            out.write(&format!("{prefix}model_{k}.csv"), |w| fm.write_csv(w))?;
        }
    }

    if dump_hyperparams {
        let all: Vec<_> = h.records.iter().flat_map(|r| r.hyperparams.iter().cloned()).collect();
        out.write(&format!("{prefix}hyperparams.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &all)?;
            writeln!(w)
        })?;
    }
    Ok(())
}

fn log_history(log: &mut dyn Write, label: &str, h: &IterationHistory) -> io::Result<()> {
    for r in &h.records {
        let e_g = r.e_g.map(sig4).unwrap_or_else(|| "-".into());
        writeln!(
            log,
            "{label}k={} e_y={}% e_g={}% noise={}%",
            r.iteration,
            sig4(r.e_y),
            e_g,
            sig4(r.noise_level)
        )?;
    }
    Ok(())
}

fn prefix_for(j: usize, count: usize) -> String {
    if count > 1 {
        format!("trajectory_{}/", j + 1)
    } else {
        String::new()
    }
}

/// Executes `cfg` in its mode, writing artifacts under `cfg.output_dir` and
/// one summary line per iteration to `log`.
pub fn execute(cfg: &RunConfig, log: &mut dyn Write) -> Result<RunSummary, ExperimentError> {
    let (tf, prepared) = prepare(cfg)?;
    let mut out = ArtifactWriter::new(&cfg.output_dir)?;
    let count = prepared.len();
    let mut trajectories = Vec::new();
    let mut reports = Vec::new();
    let stdout_err = |e: io::Error| ExperimentError::Io {
        path: PathBuf::from("<log>"),
        source: e,
    };

    match cfg.mode {
        Mode::Iml => {
            let histories = run_chain(&tf, &prepared, cfg.seed)?;
            for (j, (h, p)) in histories.iter().zip(&prepared).enumerate() {
                let prefix = prefix_for(j, count);
                let label = if count > 1 { format!("trajectory {} ", j + 1) } else { String::new() };
                log_history(log, &label, h).map_err(stdout_err)?;
                write_history(&mut out, &prefix, h, &p.y_d_time, cfg.dump_hyperparams)?;
                trajectories.push(TrajectoryMetrics::from_history(h, p.sigma));
            }
        }
        Mode::BaselineModelless => {
            for (j, p) in prepared.iter().enumerate() {
                let seed = chained_seed(cfg.seed, j);
                let h = ilc::run_baseline_modelless(&tf, &p.y_d, &p.ilc, &p.noise, cfg.baseline_alpha, seed)?;
                let label = if count > 1 { format!("trajectory {} ", j + 1) } else { String::new() };
                log_history(log, &label, &h).map_err(stdout_err)?;
                write_history(&mut out, &prefix_for(j, count), &h, &p.y_d_time, false)?;
                trajectories.push(TrajectoryMetrics::from_history(&h, p.sigma));
            }
        }
        Mode::PeComparison => {
            for (j, p) in prepared.iter().enumerate() {
                let cmp = pe_comparison(&tf, &p.y_d, &p.ilc, &p.noise, chained_seed(cfg.seed, j))?;
                let r = cmp.report;
                writeln!(
                    log,
                    "{}e_a_max={} e_b_max={} e_a_max_tilde={} e_b_max_tilde={}",
                    if count > 1 { format!("trajectory {} ", j + 1) } else { String::new() },
                    sig4(r.e_a_max),
                    sig4(r.e_b_max),
                    sig4(r.e_a_max_tilde),
                    sig4(r.e_b_max_tilde)
                )
                .map_err(stdout_err)?;
                let prefix = prefix_for(j, count);
                out.write(&format!("{prefix}pe_comparison.csv"), |w| {
                    writeln!(w, "omega_rad_s,e_a,e_b,e_a_tilde,e_b_tilde")?;
                    for b in &cmp.bins {
                        writeln!(
                            w,
                            "{},{},{},{},{}",
                            fmt_f64(b.omega),
                            fmt_f64(b.e_a),
                            fmt_f64(b.e_b),
                            fmt_f64(b.e_a_tilde),
                            fmt_f64(b.e_b_tilde)
                        )?;
                    }
                    Ok(())
                })?;
                out.write(&format!("{prefix}pe_comparison.json"), |w| {
                    serde_json::to_writer_pretty(&mut *w, &r)?;
                    writeln!(w)
                })?;
                reports.push(r);
            }
        }
    }

    let mut artifacts = out.written.clone();
    artifacts.push("run.json".into());
    let summary = RunSummary {
        config: cfg.clone(),
        resolved: prepared.iter().map(|p| p.ilc.clone()).collect(),
        trajectories,
        pe_comparison: reports,
        artifacts,
    };
    out.write("run.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    Ok(summary)
}

/// Mean and sample standard deviation of one metric across repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    /// Metric name to aggregate, one map per trajectory (or comparison).
    pub metrics: Vec<Vec<(String, Aggregate)>>,
}

/// Runs `repeats` consecutive seeds starting at `cfg.seed` in parallel, each
/// into `seed_<s>/`, and writes `summary.json` with mean/std of the
/// terminal metrics.
pub fn execute_repeats(cfg: &RunConfig, repeats: usize, log: &mut dyn Write) -> Result<RepeatSummary, ExperimentError> {
    if repeats == 0 {
        return Err(ExperimentError::Config("--repeats must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..repeats as u64).map(|r| cfg.seed.wrapping_add(r)).collect();
    let results: Vec<(Result<RunSummary, ExperimentError>, Vec<u8>)> = seeds
        .par_iter()
        .map(|&seed| {
            let local = RunConfig {
                seed,
                output_dir: cfg.output_dir.join(format!("seed_{seed}")),
                ..cfg.clone()
            };
            let mut buf = Vec::new();
            let r = execute(&local, &mut buf);
            (r, buf)
        })
        .collect();

    let mut summaries = Vec::with_capacity(repeats);
    for (seed, (r, buf)) in seeds.iter().zip(results) {
        let text = String::from_utf8_lossy(&buf);
        for line in text.lines() {
            writeln!(log, "seed {seed}: {line}").ok();
        }
        summaries.push(r?);
    }

    let mut metrics = Vec::new();
    let groups = summaries[0].trajectories.len().max(summaries[0].pe_comparison.len());
    for j in 0..groups {
        let mut group: Vec<(String, Aggregate)> = Vec::new();
        let mut push = |name: &str, f: &dyn Fn(&RunSummary) -> Option<f64>| {
            let vals: Vec<f64> = summaries.iter().filter_map(f).collect();
            if !vals.is_empty() {
                group.push((name.to_string(), Aggregate::of(&vals)));
            }
        };
        if cfg.mode == Mode::PeComparison {
            push("e_a_max", &|s| Some(s.pe_comparison[j].e_a_max));
            push("e_b_max", &|s| Some(s.pe_comparison[j].e_b_max));
            push("e_a_max_tilde", &|s| Some(s.pe_comparison[j].e_a_max_tilde));
            push("e_b_max_tilde", &|s| Some(s.pe_comparison[j].e_b_max_tilde));
        } else {
            push("first_e_y", &|s| Some(s.trajectories[j].first_e_y));
            push("terminal_e_y", &|s| Some(s.trajectories[j].terminal_e_y));
            push("terminal_e_g", &|s| s.trajectories[j].terminal_e_g);
            push("terminal_noise_level", &|s| Some(s.trajectories[j].terminal_noise_level));
        }
        metrics.push(group);
    }

    let summary = RepeatSummary { seeds, metrics };
    for (j, group) in summary.metrics.iter().enumerate() {
        let mut line = String::new();
        if groups > 1 {
            let _ = write!(line, "trajectory {} ", j + 1);
        }
        for (name, a) in group {
            let _ = write!(line, "{name}={}±{} ", sig4(a.mean), sig4(a.std));
        }
        writeln!(log, "{}", line.trim_end()).ok();
    }
    let path = cfg.output_dir.join("summary.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &summary)
        .map_err(io::Error::other)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(io_err(&path))?;
    Ok(summary)
}

/// Exact frequency model of the configured plant, for warm-start studies that
/// want a known-good prior.
pub fn exact_prior(tf: &TransferFunction, p: &PreparedTrajectory) -> crate::Result<FrequencyModel> {
    FrequencyModel::exact(tf, *p.y_d.grid(), p.ilc.omega_c)
}
