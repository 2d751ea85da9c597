//! Scalar Gaussian process regression over frequency.
//!
//! A zero-mean GP with squared-exponential covariance
//! `k(w, w') = s2 * exp(-(w - w')^2 / (2 l^2))` and i.i.d. Gaussian
//! observation noise of variance `sn2`. Inputs are frequencies in rad/s.
//!
//! [`fit`] maximizes the log marginal likelihood over
//! `(ln s2, ln l, ln sn2)` with Nelder-Mead restarted from a fixed 3x3x3
//! grid scaled by the data, so identical data always yields identical
//! hyperparameters.

mod linalg;
mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};
use linalg::Cholesky;
use optim::NelderMead;

/// Floor on the diagonal noise term, relative to the signal variance. Noise
/// variances above it enter the covariance unchanged.
pub const JITTER: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let h = Self {
            signal_variance,
            length_scale,
            noise_variance,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.signal_variance.is_finite()
            && self.length_scale.is_finite()
            && self.noise_variance.is_finite();
        if finite && self.signal_variance > 0.0 && self.length_scale > 0.0 && self.noise_variance >= 0.0 {
            Ok(())
        } else {
            Err(ImlError::InvalidArgument(format!(
                "kernel hyperparameters out of range: {self:?}"
            )))
        }
    }
}

/// Squared-exponential covariance between two frequencies.
pub fn se_kernel(omega1: f64, omega2: f64, h: &KernelHyperparams) -> f64 {
    let d = omega1 - omega2;
    h.signal_variance * (-d * d / (2.0 * h.length_scale * h.length_scale)).exp()
}

/// Training frequencies and real-valued targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprDataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl GprDataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(ImlError::InvalidArgument(format!(
                "dataset needs equal, non-zero input/target counts (got {} and {})",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(ImlError::InvalidArgument("dataset values must be finite".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn has_duplicates(&self) -> bool {
        let mut sorted = self.inputs.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).any(|w| w[0] == w[1])
    }

    fn span(&self) -> f64 {
        let (lo, hi) = self
            .inputs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        hi - lo
    }

    fn second_moment(&self) -> f64 {
        self.targets.iter().map(|t| t * t).sum::<f64>() / self.len() as f64
    }
}

/// Squared pairwise input distances, deduplicated so that each distinct
/// distance costs one `exp` per kernel evaluation.
struct DistanceTable {
    n: usize,
    unique: Vec<f64>,
    index: Vec<usize>,
}

impl DistanceTable {
    fn new(inputs: &[f64]) -> Self {
        let n = inputs.len();
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                let d = inputs[i] - inputs[j];
                pairs.push((d * d, i * n + j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut unique = Vec::new();
        let mut index = vec![0usize; n * n];
        for (d2, slot) in pairs {
            if unique.last().is_none_or(|last: &f64| (d2 - last).abs() > 1e-12 * last.max(1e-300)) {
                unique.push(d2);
            }
            index[slot] = unique.len() - 1;
        }
        Self { n, unique, index }
    }

    /// `K(X, X) + (sn2 + jitter) I`, lower triangle filled.
    fn covariance(&self, h: &KernelHyperparams) -> Vec<f64> {
        let scale = -1.0 / (2.0 * h.length_scale * h.length_scale);
        let values: Vec<f64> = self
            .unique
            .iter()
            .map(|d2| h.signal_variance * (d2 * scale).exp())
            .collect();
        let n = self.n;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                k[i * n + j] = values[self.index[i * n + j]];
            }
            k[i * n + i] += diagonal_noise(h);
        }
        k
    }
}

/// Noise added to the covariance diagonal.
pub fn diagonal_noise(h: &KernelHyperparams) -> f64 {
    h.noise_variance.max(JITTER * h.signal_variance)
}

fn lml_from(chol: &Cholesky, targets: &[f64]) -> (f64, Vec<f64>) {
    let alpha = chol.solve(targets);
    let fit: f64 = targets.iter().zip(&alpha).map(|(m, a)| m * a).sum();
    let n = targets.len() as f64;
    (-0.5 * fit - 0.5 * chol.log_det() - 0.5 * n * LN_2PI, alpha)
}

/// `-1/2 m^T (K + sn2 I)^-1 m - 1/2 log det(K + sn2 I) - n/2 log 2 pi`.
pub fn log_marginal_likelihood(d: &GprDataset, h: &KernelHyperparams) -> Result<f64> {
    h.validate()?;
    let table = DistanceTable::new(&d.inputs);
    let chol = Cholesky::factor(table.covariance(h), d.len())?;
    Ok(lml_from(&chol, &d.targets).0)
}

/// Trained regression model with a cached factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    hyperparams: KernelHyperparams,
    dataset: GprDataset,
    chol: Cholesky,
    alpha: Vec<f64>,
    lml: f64,
}

/// Predictive mean and (latent) variance at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl GprModel {
    /// Conditions the GP with fixed hyperparameters on `dataset`.
    pub fn new(dataset: GprDataset, hyperparams: KernelHyperparams) -> Result<Self> {
        hyperparams.validate()?;
        if hyperparams.noise_variance == 0.0 && dataset.has_duplicates() {
            return Err(ImlError::InvalidArgument(
                "duplicate inputs require a positive noise variance".into(),
            ));
        }
        let table = DistanceTable::new(&dataset.inputs);
        let chol = Cholesky::factor(table.covariance(&hyperparams), dataset.len())?;
        let (lml, alpha) = lml_from(&chol, &dataset.targets);
        Ok(Self {
            hyperparams,
            dataset,
            chol,
            alpha,
            lml,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyperparams
    }

    pub fn dataset(&self) -> &GprDataset {
        &self.dataset
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn predict(&self, omega: f64) -> Prediction {
        let k_star: Vec<f64> = self
            .dataset
            .inputs
            .iter()
            .map(|x| se_kernel(omega, *x, &self.hyperparams))
            .collect();
        let mean = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = self.chol.forward(&k_star);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        let variance = (self.hyperparams.signal_variance - explained).max(0.0);
        Prediction { mean, variance }
    }
}

/// `(mean, variance)` at `omega`.
pub fn predict(model: &GprModel, omega: f64) -> (f64, f64) {
    let p = model.predict(omega);
    (p.mean, p.variance)
}

/// Controls for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Holds the noise variance fixed instead of optimizing it.
    pub fixed_noise_variance: Option<f64>,
    /// Nelder-Mead evaluation budget per start.
    pub max_evaluations: usize,
    /// Input span used for the single-point fallback length scale.
    pub fallback_span: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_noise_variance: None,
            max_evaluations: 200,
            fallback_span: None,
        }
    }
}

struct SearchBox {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl SearchBox {
    fn clamp(&self, x: &[f64]) -> [f64; 3] {
        [0, 1, 2].map(|i| x[i].clamp(self.lo[i], self.hi[i]))
    }
}

fn single_point_fallback(d: &GprDataset, opts: &FitOptions) -> Result<GprModel> {
    let t2 = d.targets[0] * d.targets[0];
    let scale = if t2 > 0.0 { t2 } else { 1.0 };
    let span = opts.fallback_span.filter(|s| *s > 0.0).unwrap_or(1.0);
    let noise = opts.fixed_noise_variance.unwrap_or(1e-6 * scale);
    GprModel::new(d.clone(), KernelHyperparams::new(scale, span / 10.0, noise)?)
}

/// Fits hyperparameters by maximizing the log marginal likelihood.
pub fn fit(d: &GprDataset, opts: &FitOptions) -> Result<GprModel> {
    if let Some(v) = opts.fixed_noise_variance {
        if !(v.is_finite() && v >= 0.0) {
            return Err(ImlError::InvalidArgument(format!("fixed noise variance {v}")));
        }
    }
    if d.len() == 1 {
        return single_point_fallback(d, opts);
    }

    let m2 = match d.second_moment() {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let span = match d.span() {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let (ln_m2, ln_span) = (m2.ln(), span.ln());
    let ln10 = std::f64::consts::LN_10;
    let bounds = SearchBox {
        lo: [ln_m2 - 6.0 * ln10, ln_span - 3.0 * ln10, ln_m2 - 12.0 * ln10],
        hi: [ln_m2 + 6.0 * ln10, ln_span + 2.0 * ln10, ln_m2 + ln10],
    };

    let table = DistanceTable::new(&d.inputs);
    let fixed_noise = opts.fixed_noise_variance;
    let to_params = |x: &[f64]| {
        let c = bounds.clamp(x);
        KernelHyperparams {
            signal_variance: c[0].exp(),
            length_scale: c[1].exp(),
            noise_variance: fixed_noise.unwrap_or_else(|| c[2].exp()),
        }
    };
    let objective = |x: &[f64]| -> f64 {
        let h = to_params(x);
        match Cholesky::factor(table.covariance(&h), d.len()) {
            Ok(chol) => -lml_from(&chol, &d.targets).0,
            Err(_) => f64::INFINITY,
        }
    };

    let nm = NelderMead {
        max_evaluations: opts.max_evaluations.max(10),
        ..NelderMead::default()
    };
    let signal_starts = [0.1, 1.0, 10.0];
    let length_starts = [0.05, 0.2, 0.8];
    let noise_starts = [1e-6, 1e-4, 1e-2];

    let mut best: Option<([f64; 3], f64)> = None;
    for s in signal_starts {
        for l in length_starts {
            for (idx, sn) in noise_starts.iter().enumerate() {
                if fixed_noise.is_some() && idx > 0 {
                    continue;
                }
                let start = [ln_m2 + f64::ln(s), ln_span + f64::ln(l), ln_m2 + f64::ln(*sn)];
                let (x, v) = if fixed_noise.is_some() {
                    let (x2, v) = nm.minimize(&start[..2], |x2| objective(&[x2[0], x2[1], start[2]]));
                    ([x2[0], x2[1], start[2]], v)
                } else {
                    let (x, v) = nm.minimize(&start, objective);
                    ([x[0], x[1], x[2]], v)
                };
                if v.is_finite() && best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((bounds.clamp(&x), v));
                }
            }
        }
    }
    let (x, _) = best.ok_or_else(|| {
        ImlError::DegenerateDataset("no hyperparameter start yields a positive definite covariance".into())
    })?;
    GprModel::new(d.clone(), to_params(&x))
}

/// Fitted hyperparameters of one component at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamRecord {
    pub component: String,
    pub iteration: usize,
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
    pub lml: f64,
}

impl HyperparamRecord {
    pub fn from_model(component: &str, iteration: usize, model: &GprModel) -> Self {
        let h = model.hyperparams();
        Self {
            component: component.to_string(),
            iteration,
            signal_variance: h.signal_variance,
            length_scale: h.length_scale,
            noise_variance: h.noise_variance,
            lml: model.log_marginal_likelihood(),
        }
    }
}
