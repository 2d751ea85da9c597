//! Uncertainty-bounded iterative input learning.
//!
//! Per frequency, the input is corrected with the inverted learned model,
//! scaled by a gain that the model's confidence bounds certify to shrink the
//! tracking error:
//!
//! ```text
//! u_hat_k = (u_{k-1} - u_tilde_{k-1})
//!         + rho_k / g_hat_k * [y_d - (y_m,{k-1} - g_hat_k u_tilde_{k-1})]
//! u_k     = u_hat_k + u_tilde_k
//! ```
//!
//! where `u_tilde` is random-phase excitation injected during the first
//! iterations at bins where `u_hat` is small.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};
use crate::gpr::{FitOptions, HyperparamRecord};
use crate::model::{self, FrequencyModel, ModelDataStore, DEFAULT_CI_FACTOR};
use crate::plant::{self, NoiseModel, RngStream, TransferFunction, RESPONSE_FLOOR};
use crate::spectrum::{inverse_transform, ComplexSpectrum, TimeSeries};

/// Guard on `|y_m|` in the model-less update.
const MODELLESS_FLOOR: f64 = 1e-15;

/// Noise fraction of `max |y_d(omega)|` used by the reference experiments.
pub const DEFAULT_NOISE_FRACTION: f64 = 1e-4;

/// Lower gain factor, either one value or one per bin up to the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoFloor {
    Scalar(f64),
    PerBin(Vec<f64>),
}

impl RhoFloor {
    pub fn at(&self, bin: usize) -> f64 {
        match self {
            RhoFloor::Scalar(v) => *v,
            RhoFloor::PerBin(v) => v[bin],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RhoFloor::Scalar(v) => std::slice::from_ref(v),
            RhoFloor::PerBin(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlcConfig {
    /// Cutoff in rad/s; inputs and updates are zero above it.
    pub omega_c: f64,
    pub rho_floor: RhoFloor,
    pub total_iterations: usize,
    /// Iterations `1..=pe_iterations` may carry excitation.
    pub pe_iterations: usize,
    /// `|u_hat|` below this gets excitation.
    pub u_pe: f64,
    /// Excitation magnitude.
    pub u_tilde: f64,
    /// Minimum `|u|` for a bin to yield model data.
    pub u_ok: f64,
    pub ci_factor: f64,
    /// Stop refitting (and so freeze gains) after `pe_iterations`.
    pub freeze_after_pe: bool,
    /// Excite the first input even when it comes from a prior model.
    pub pe_on_warm_start: bool,
    /// Fit on every stored sample instead of per-bin averages.
    pub fit_on_raw_samples: bool,
    pub gpr: FitOptions,
}

impl IlcConfig {
    /// Reference settings scaled by the measurement-noise deviation `sigma`:
    /// `u_tilde = 100 sigma`, `u_pe = u_ok = 10 sigma`, five iterations with
    /// excitation in the first three, `rho_floor = 0.9`.
    pub fn with_noise_scale(omega_c: f64, sigma: f64) -> Self {
        Self {
            omega_c,
            rho_floor: RhoFloor::Scalar(0.9),
            total_iterations: 5,
            pe_iterations: 3,
            u_pe: 10.0 * sigma,
            u_tilde: 100.0 * sigma,
            u_ok: 10.0 * sigma,
            ci_factor: DEFAULT_CI_FACTOR,
            freeze_after_pe: false,
            pe_on_warm_start: false,
            fit_on_raw_samples: false,
            gpr: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ImlError::InvalidArgument(msg));
        if !(self.omega_c.is_finite() && self.omega_c > 0.0) {
            return bad(format!("cutoff must be positive, got {}", self.omega_c));
        }
        if self.rho_floor.values().is_empty()
            || self.rho_floor.values().iter().any(|r| !(*r > 0.0 && *r < 1.0))
        {
            return bad("rho_floor must lie in (0, 1)".into());
        }
        if self.total_iterations == 0 {
            return bad("total_iterations must be at least 1".into());
        }
        if self.pe_iterations > self.total_iterations {
            return bad(format!(
                "pe_iterations {} exceeds total_iterations {}",
                self.pe_iterations, self.total_iterations
            ));
        }
        for (name, v) in [("u_pe", self.u_pe), ("u_tilde", self.u_tilde), ("u_ok", self.u_ok), ("ci_factor", self.ci_factor)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    fn check_bins(&self, active: usize) -> Result<()> {
        if let RhoFloor::PerBin(v) = &self.rho_floor {
            if v.len() < active {
                return Err(ImlError::InvalidArgument(format!(
                    "rho_floor table has {} entries, {active} bins are active",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Largest gain that certifies error contraction for every plant inside
/// the box `|a - a_hat| <= delta_a`, `|b - b_hat| <= delta_b`.
pub fn gain_upper_bound(a_hat: f64, b_hat: f64, delta_a: f64, delta_b: f64) -> Result<f64> {
    check_bounds(a_hat, b_hat, delta_a, delta_b)?;
    let (aa, ab) = (a_hat.abs(), b_hat.abs());
    let g2 = a_hat * a_hat + b_hat * b_hat;
    let dot = aa * delta_a + ab * delta_b;
    let den = (aa + delta_a).powi(2) + (ab + delta_b).powi(2);
    Ok((2.0 * (g2 - dot) / den).max(0.0))
}

fn check_bounds(a_hat: f64, b_hat: f64, delta_a: f64, delta_b: f64) -> Result<()> {
    if !(delta_a >= 0.0 && delta_b >= 0.0) {
        return Err(ImlError::InvalidArgument(format!(
            "uncertainty bounds must be non-negative, got ({delta_a}, {delta_b})"
        )));
    }
    if a_hat.hypot(b_hat) < RESPONSE_FLOOR {
        return Err(ImlError::ZeroModel);
    }
    Ok(())
}

/// Worst-case magnitude ratio `|g / g_hat|` and lower bound on the cosine
/// of the phase error over the uncertainty box.
pub fn uncertainty_envelope(a_hat: f64, b_hat: f64, delta_a: f64, delta_b: f64) -> Result<(f64, f64)> {
    check_bounds(a_hat, b_hat, delta_a, delta_b)?;
    let (aa, ab) = (a_hat.abs(), b_hat.abs());
    let g = a_hat.hypot(b_hat);
    let corner = (aa + delta_a).hypot(ab + delta_b);
    let g2 = a_hat * a_hat + b_hat * b_hat;
    let dot = aa * delta_a + ab * delta_b;
    Ok((corner / g, (g2 - dot) / (g * corner)))
}

/// `rho_floor * min(rho_star, 1)`.
pub fn select_gain(rho_star: f64, rho_floor: f64) -> f64 {
    rho_floor * rho_star.min(1.0)
}

/// `|1 - rho g / g_hat|`, the per-iteration error ratio at one frequency.
pub fn contraction_factor(rho: f64, g: Complex64, g_hat: Complex64) -> Result<f64> {
    if g_hat.norm() < RESPONSE_FLOOR {
        return Err(ImlError::ZeroModel);
    }
    Ok((1.0 - rho * g / g_hat).norm())
}

/// Random-phase excitation for iteration `k`.
///
/// Phases are drawn as `pi * N(0, 1)` for every bin up to the cutoff while
/// `k <= pe_iterations`; the excitation is applied where `|u_hat| < u_pe`.
/// The DC and Nyquist bins take the sign of `cos(phi)`.
pub fn pe_augmentation(u_hat: &ComplexSpectrum, cfg: &IlcConfig, k: usize, rng: &mut RngStream) -> ComplexSpectrum {
    let grid = *u_hat.grid();
    let mut out = ComplexSpectrum::zeros(grid);
    if k == 0 || k > cfg.pe_iterations {
        return out;
    }
    let active = grid.bins_up_to(cfg.omega_c);
    let last = grid.num_bins() - 1;
    for i in 0..active {
        let phi = PI * rng.standard_normal();
        if u_hat.values()[i].norm() >= cfg.u_pe {
            continue;
        }
        out.values_mut()[i] = if i == 0 || i == last {
            Complex64::new(cfg.u_tilde * phi.cos().signum(), 0.0)
        } else {
            Complex64::from_polar(cfg.u_tilde, phi)
        };
    }
    out
}

/// Inputs and gains produced for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct InputUpdate {
    pub u_hat: ComplexSpectrum,
    pub u_tilde: ComplexSpectrum,
    pub u: ComplexSpectrum,
    /// Gains on bins up to the cutoff.
    pub rho: Vec<f64>,
    pub rho_star: Vec<f64>,
}

fn finish_update(
    mut u_hat: ComplexSpectrum,
    u_tilde: ComplexSpectrum,
    cfg: &IlcConfig,
    rho: Vec<f64>,
    rho_star: Vec<f64>,
) -> Result<InputUpdate> {
    u_hat.truncate_above(cfg.omega_c);
    let mut u = u_hat.zip_with(&u_tilde, |a, b| a + b)?;
    u.truncate_above(cfg.omega_c);
    Ok(InputUpdate {
        u_hat,
        u_tilde,
        u,
        rho,
        rho_star,
    })
}

fn check_model(fm: &FrequencyModel, y_d: &ComplexSpectrum, active: usize) -> Result<()> {
    fm.grid().check_same(y_d.grid())?;
    if fm.points().len() < active {
        return Err(ImlError::GridMismatch(format!(
            "model covers {} bins, {active} are active",
            fm.points().len()
        )));
    }
    Ok(())
}

/// First input: model inversion where a prior model exists, then excitation.
pub fn initial_input(
    y_d: &ComplexSpectrum,
    prior: Option<&FrequencyModel>,
    cfg: &IlcConfig,
    rng: &mut RngStream,
) -> Result<InputUpdate> {
    let grid = *y_d.grid();
    let active = grid.bins_up_to(cfg.omega_c);
    let mut u_hat = ComplexSpectrum::zeros(grid);
    if let Some(fm) = prior {
        check_model(fm, y_d, active)?;
        for i in 0..active {
            let g_hat = fm.points()[i].g_hat();
            if g_hat.norm() >= RESPONSE_FLOOR {
                u_hat.values_mut()[i] = y_d.values()[i] / g_hat;
            }
        }
        u_hat.force_real_endpoints();
    }
    let u_tilde = if prior.is_some() && !cfg.pe_on_warm_start {
        ComplexSpectrum::zeros(grid)
    } else {
        pe_augmentation(&u_hat, cfg, 1, rng)
    };
    finish_update(u_hat, u_tilde, cfg, vec![0.0; active], vec![0.0; active])
}

/// Augmented update for iteration `k >= 2` from the previous record.
pub fn update_input(
    prev: &IterationRecord,
    y_d: &ComplexSpectrum,
    fm: Option<&FrequencyModel>,
    cfg: &IlcConfig,
    k: usize,
    rng: &mut RngStream,
) -> Result<InputUpdate> {
    let grid = *y_d.grid();
    for s in [&prev.u, &prev.u_tilde, &prev.y_m] {
        s.grid().check_same(&grid)?;
    }
    let active = grid.bins_up_to(cfg.omega_c);
    cfg.check_bins(active)?;
    if let Some(fm) = fm {
        check_model(fm, y_d, active)?;
    }
    let mut rho = vec![0.0; active];
    let mut rho_star = vec![0.0; active];
    let mut u_hat = ComplexSpectrum::zeros(grid);
    for i in 0..active {
        let u_prev = prev.u.values()[i];
        let u_tilde_prev = prev.u_tilde.values()[i];
        let mut next = u_prev - u_tilde_prev;
        if let Some(p) = fm.map(|m| m.points()[i]) {
            let g_hat = p.g_hat();
            if g_hat.norm() >= RESPONSE_FLOOR {
                rho_star[i] = gain_upper_bound(p.a_hat, p.b_hat, p.delta_a, p.delta_b)?;
                rho[i] = select_gain(rho_star[i], cfg.rho_floor.at(i));
                if rho[i] > 0.0 {
                    let y_tilde = g_hat * u_tilde_prev;
                    let error = y_d.values()[i] - (prev.y_m.values()[i] - y_tilde);
                    next += rho[i] * error / g_hat;
                }
            }
        }
        u_hat.values_mut()[i] = next;
    }
    u_hat.force_real_endpoints();
    let u_tilde = pe_augmentation(&u_hat, cfg, k, rng);
    finish_update(u_hat, u_tilde, cfg, rho, rho_star)
}

/// Data-based update without a learned model: `u_1 = alpha y_d`, then
/// `u_k = (u_{k-1} / y_m,{k-1}) y_d` wherever the measurement is non-zero.
/// The previous spectra are ignored for `k = 1`.
pub fn baseline_modelless_update(
    u_prev: &ComplexSpectrum,
    y_m_prev: &ComplexSpectrum,
    y_d: &ComplexSpectrum,
    alpha: f64,
    k: usize,
    omega_c: f64,
) -> Result<ComplexSpectrum> {
    let grid = *y_d.grid();
    let active = grid.bins_up_to(omega_c);
    let mut u = ComplexSpectrum::zeros(grid);
    if k <= 1 {
        for i in 0..active {
            u.values_mut()[i] = alpha * y_d.values()[i];
        }
        return Ok(u);
    }
    u_prev.grid().check_same(&grid)?;
    y_m_prev.grid().check_same(&grid)?;
    for i in 0..active {
        let y = y_m_prev.values()[i];
        if y.norm() >= MODELLESS_FLOOR {
            u.values_mut()[i] = u_prev.values()[i] / y * y_d.values()[i];
        }
    }
    u.force_real_endpoints();
    Ok(u)
}

/// `100 max_t |y_k - y_d| / max_t |y_d|`, in percent.
pub fn tracking_error(y_k: &TimeSeries, y_d: &TimeSeries) -> Result<f64> {
    if y_k.len() != y_d.len() {
        return Err(ImlError::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            y_k.len(),
            y_d.len()
        )));
    }
    let reference = y_d.max_abs();
    if reference == 0.0 {
        return Err(ImlError::ZeroReference);
    }
    let worst = y_k
        .samples
        .iter()
        .zip(&y_d.samples)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(100.0 * worst / reference)
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub u_hat: ComplexSpectrum,
    pub u_tilde: ComplexSpectrum,
    pub u: ComplexSpectrum,
    /// Noise-free plant output `g u`.
    pub y: ComplexSpectrum,
    pub y_m: ComplexSpectrum,
    /// Model in effect after this trial's data was absorbed.
    pub model: Option<FrequencyModel>,
    pub refit: bool,
    pub rho: Vec<f64>,
    pub rho_star: Vec<f64>,
    /// Tracking error of the noise-free output, percent.
    pub e_y: f64,
    /// Model error of `model`, percent.
    pub e_g: Option<f64>,
    /// `100 max_t |n(t)| / max_t |y_d(t)|` for this trial's noise draw.
    pub noise_level: f64,
    pub hyperparams: Vec<HyperparamRecord>,
}

impl IterationRecord {
    pub fn max_rho(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_rho_star(&self) -> f64 {
        self.rho_star.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationHistory {
    pub records: Vec<IterationRecord>,
    pub final_model: Option<FrequencyModel>,
    pub config: IlcConfig,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl IterationHistory {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("histories hold at least one record")
    }
}

/// Shared per-run state of the drivers.
struct Trial<'a> {
    response: ComplexSpectrum,
    y_d_time: TimeSeries,
    reference: f64,
    noise: &'a NoiseModel,
    noise_rng: RngStream,
}

impl<'a> Trial<'a> {
    fn new(plant: &TransferFunction, y_d: &ComplexSpectrum, noise: &'a NoiseModel, seed: u64) -> Result<Self> {
        let response = plant.response_on(y_d.grid())?;
        let y_d_time = inverse_transform(y_d)?;
        let reference = y_d_time.max_abs();
        if reference == 0.0 {
            return Err(ImlError::ZeroReference);
        }
        Ok(Self {
            response,
            y_d_time,
            reference,
            noise,
            noise_rng: RngStream::with_stream(seed, 0),
        })
    }

    fn run(&mut self, u: &ComplexSpectrum) -> Result<(plant::Measurement, f64, f64)> {
        let n = plant::draw_noise(u.grid(), self.noise, &mut self.noise_rng);
        let meas = plant::measure(&self.response, u, n)?;
        let y_time = inverse_transform(&meas.output)?;
        let e_y = tracking_error(&y_time, &self.y_d_time)?;
        let noise_level = 100.0 * inverse_transform(&meas.noise)?.max_abs() / self.reference;
        Ok((meas, e_y, noise_level))
    }
}

/// Runs the full learning loop for `cfg.total_iterations` trials.
///
/// Each trial forms `u_k`, measures `y_m,k`, harvests model data, averages
/// it per bin and refits the model (unless frozen). Noise and excitation
/// phases come from independent streams of `seed`, so the noise sequence
/// is the same whatever the excitation settings.
pub fn run_iml(
    plant: &TransferFunction,
    y_d: &ComplexSpectrum,
    cfg: &IlcConfig,
    noise: &NoiseModel,
    prior: Option<&FrequencyModel>,
    seed: u64,
) -> Result<IterationHistory> {
    cfg.validate()?;
    let grid = *y_d.grid();
    cfg.check_bins(grid.bins_up_to(cfg.omega_c))?;
    let mut trial = Trial::new(plant, y_d, noise, seed)?;
    let mut pe_rng = RngStream::with_stream(seed, 1);
    let mut store = ModelDataStore::new(grid);
    let mut current = prior.cloned();
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.total_iterations);

    for k in 1..=cfg.total_iterations {
        let step = (|| -> Result<IterationRecord> {
            let update = match records.last() {
                None => initial_input(y_d, current.as_ref(), cfg, &mut pe_rng)?,
                Some(prev) => update_input(prev, y_d, current.as_ref(), cfg, k, &mut pe_rng)?,
            };
            let (meas, e_y, noise_level) = trial.run(&update.u)?;
            store.insert(&model::harvest(&update.u, &meas.measured, cfg.u_ok, cfg.omega_c, k)?)?;

            let mut refit = false;
            let mut hyperparams = Vec::new();
            if !(cfg.freeze_after_pe && k > cfg.pe_iterations) {
                let points = if cfg.fit_on_raw_samples {
                    store.raw_points()
                } else {
                    model::average(&store)
                };
                match model::refit(&points, &grid, cfg.omega_c, cfg.ci_factor, &cfg.gpr) {
                    Ok(fm) => {
                        if let Some((ga, gb)) = fm.gpr_components() {
                            hyperparams.push(HyperparamRecord::from_model("real", k, ga));
                            hyperparams.push(HyperparamRecord::from_model("imag", k, gb));
                        }
                        current = Some(fm);
                        refit = true;
                    }
                    Err(ImlError::NoModel) => {}
                    Err(e) => return Err(e),
                }
            }
            let e_g = current
                .as_ref()
                .map(|fm| model::model_error(fm, plant, cfg.omega_c))
                .transpose()?;
            Ok(IterationRecord {
                iteration: k,
                u_hat: update.u_hat,
                u_tilde: update.u_tilde,
                u: update.u,
                y: meas.output,
                y_m: meas.measured,
                model: current.clone(),
                refit,
                rho: update.rho,
                rho_star: update.rho_star,
                e_y,
                e_g,
                noise_level,
                hyperparams,
            })
        })();
        records.push(step.map_err(|e| e.at(k))?);
    }

    Ok(IterationHistory {
        records,
        final_model: current,
        config: cfg.clone(),
        noise: *noise,
        seed,
    })
}

/// Runs the model-less data-based iteration for comparison.
pub fn run_baseline_modelless(
    plant: &TransferFunction,
    y_d: &ComplexSpectrum,
    cfg: &IlcConfig,
    noise: &NoiseModel,
    alpha: f64,
    seed: u64,
) -> Result<IterationHistory> {
    cfg.validate()?;
    let grid = *y_d.grid();
    let active = grid.bins_up_to(cfg.omega_c);
    let mut trial = Trial::new(plant, y_d, noise, seed)?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.total_iterations);
    let zeros = ComplexSpectrum::zeros(grid);
    for k in 1..=cfg.total_iterations {
        let step = (|| -> Result<IterationRecord> {
            let (u_prev, y_prev) = records.last().map_or((&zeros, &zeros), |r| (&r.u, &r.y_m));
            let u = baseline_modelless_update(u_prev, y_prev, y_d, alpha, k, cfg.omega_c)?;
            let (meas, e_y, noise_level) = trial.run(&u)?;
            let gain = if k == 1 { 0.0 } else { 1.0 };
            Ok(IterationRecord {
                iteration: k,
                u_hat: u.clone(),
                u_tilde: zeros.clone(),
                u,
                y: meas.output,
                y_m: meas.measured,
                model: None,
                refit: false,
                rho: vec![gain; active],
                rho_star: vec![0.0; active],
                e_y,
                e_g: None,
                noise_level,
                hyperparams: Vec::new(),
            })
        })();
        records.push(step.map_err(|e| e.at(k))?);
    }
    Ok(IterationHistory {
        records,
        final_model: None,
        config: cfg.clone(),
        noise: *noise,
        seed,
    })
}
