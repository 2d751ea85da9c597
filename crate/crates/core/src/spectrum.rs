//! Time and frequency representation of sampled signals.
//!
//! Spectra are one-sided: bin `i` of an `n`-sample record holds the
//! unnormalized DFT coefficient at `omega_i = 2*pi*i / (n * dt)` for
//! `i = 0..=n/2`. The negative-frequency half is implied by Hermitian
//! symmetry, so only real time signals are representable. The inverse
//! transform divides by `n`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};
use crate::fmt_f64;

/// Relative tolerance used when deciding whether a frequency lies on or
/// below a cutoff.
const CUTOFF_RTOL: f64 = 1e-9;

/// Uniform frequency grid of an even-length sampled record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    sample_time: f64,
    num_samples: usize,
}

impl FrequencyGrid {
    /// Grid for `num_samples` samples spaced `sample_time` seconds apart.
    pub fn from_samples(sample_time: f64, num_samples: usize) -> Result<Self> {
        if !(sample_time.is_finite() && sample_time > 0.0) {
            return Err(ImlError::InvalidArgument(format!(
                "sample time must be positive, got {sample_time}"
            )));
        }
        if num_samples < 2 || !num_samples.is_multiple_of(2) {
            return Err(ImlError::OddLength(num_samples));
        }
        Ok(Self {
            sample_time,
            num_samples,
        })
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Number of one-sided bins, `num_samples / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.num_samples / 2 + 1
    }

    pub fn duration(&self) -> f64 {
        self.num_samples as f64 * self.sample_time
    }

    /// Bin spacing in rad/s.
    pub fn resolution(&self) -> f64 {
        2.0 * PI / self.duration()
    }

    /// Nyquist frequency in rad/s.
    pub fn nyquist(&self) -> f64 {
        PI / self.sample_time
    }

    /// Frequency of bin `i` in rad/s.
    pub fn frequency(&self, i: usize) -> f64 {
        i as f64 * self.resolution()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.num_bins()).map(|i| self.frequency(i)).collect()
    }

    /// Number of leading bins whose frequency is at most `omega_c`.
    pub fn bins_up_to(&self, omega_c: f64) -> usize {
        if omega_c < 0.0 {
            return 0;
        }
        let limit = omega_c * (1.0 + CUTOFF_RTOL) / self.resolution();
        ((limit.floor() as usize) + 1).min(self.num_bins())
    }

    /// Sample instants `t_i = i * dt`.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_samples).map(move |i| i as f64 * self.sample_time)
    }

    pub(crate) fn check_same(&self, other: &FrequencyGrid) -> Result<()> {
        if self.num_samples != other.num_samples
            || (self.sample_time - other.sample_time).abs() > 1e-12 * self.sample_time
        {
            return Err(ImlError::GridMismatch(format!(
                "({} samples, dt={}) vs ({} samples, dt={})",
                self.num_samples, self.sample_time, other.num_samples, other.sample_time
            )));
        }
        Ok(())
    }
}

/// Builds the grid for a record of `total_duration` seconds.
pub fn make_grid(sample_time: f64, total_duration: f64) -> Result<FrequencyGrid> {
    if !(sample_time.is_finite() && sample_time > 0.0) {
        return Err(ImlError::InvalidArgument(format!(
            "sample time must be positive, got {sample_time}"
        )));
    }
    if !(total_duration.is_finite() && total_duration > 0.0) {
        return Err(ImlError::InvalidArgument(format!(
            "total duration must be positive, got {total_duration}"
        )));
    }
    let n = (total_duration / sample_time).round();
    if n < 4.0 {
        return Err(ImlError::InvalidArgument(format!(
            "record holds {n} samples, at least 4 are required"
        )));
    }
    FrequencyGrid::from_samples(sample_time, n as usize)
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_time: f64,
    pub samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_time: f64, samples: Vec<f64>) -> Self {
        Self {
            sample_time,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Writes `t,value` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,value")?;
        for (i, x) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(i as f64 * self.sample_time), fmt_f64(*x))?;
        }
        Ok(())
    }
}

/// One-sided spectrum of a real signal on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.num_bins()],
        }
    }

    pub fn from_values(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.num_bins() {
            return Err(ImlError::GridMismatch(format!(
                "{} values for a grid with {} bins",
                values.len(),
                grid.num_bins()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Spectrum whose bin `i` is `f(i, omega_i)`.
    pub fn from_fn(grid: FrequencyGrid, mut f: impl FnMut(usize, f64) -> Complex64) -> Self {
        let values = (0..grid.num_bins())
            .map(|i| f(i, grid.frequency(i)))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bin-wise combination of two spectra on the same grid.
    pub fn zip_with(
        &self,
        other: &ComplexSpectrum,
        mut f: impl FnMut(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexSpectrum> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    pub fn scaled(&self, factor: f64) -> ComplexSpectrum {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Zeroes every bin above `omega_c`.
    pub fn truncate_above(&mut self, omega_c: f64) {
        let keep = self.grid.bins_up_to(omega_c);
        for v in &mut self.values[keep..] {
            *v = Complex64::new(0.0, 0.0);
        }
    }

    /// Drops the imaginary part of the DC and Nyquist bins.
    pub fn force_real_endpoints(&mut self) {
        let last = self.values.len() - 1;
        self.values[0].im = 0.0;
        self.values[last].im = 0.0;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Largest magnitude over bins at or below `omega_c`.
    pub fn max_abs_up_to(&self, omega_c: f64) -> f64 {
        let n = self.grid.bins_up_to(omega_c);
        self.values[..n].iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Writes `omega_rad_s,re,im` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "omega_rad_s,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(self.grid.frequency(i)),
                fmt_f64(v.re),
                fmt_f64(v.im)
            )?;
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized one-sided DFT of an even-length real series.
pub fn forward_transform(ts: &TimeSeries) -> Result<ComplexSpectrum> {
    let grid = FrequencyGrid::from_samples(ts.sample_time, ts.len())?;
    let n = ts.len();
    let mut buf: Vec<Complex64> = ts.samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan(n, false).process(&mut buf);
    buf.truncate(grid.num_bins());
    // Symmetric bins of a real signal are real up to round-off.
    buf[0].im = 0.0;
    buf[n / 2].im = 0.0;
    Ok(ComplexSpectrum { grid, values: buf })
}

/// Inverse of [`forward_transform`] using the implied Hermitian extension.
pub fn inverse_transform(spec: &ComplexSpectrum) -> Result<TimeSeries> {
    let grid = spec.grid;
    let n = grid.num_samples();
    let half = n / 2;
    let tol = 1e-9 * spec.max_abs().max(f64::MIN_POSITIVE);
    let dc = spec.values[0].im;
    if dc.abs() > tol {
        return Err(ImlError::NotHermitian { bin: "DC", im: dc });
    }
    let nyq = spec.values[half].im;
    if nyq.abs() > tol {
        return Err(ImlError::NotHermitian {
            bin: "Nyquist",
            im: nyq,
        });
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(spec.values[0].re, 0.0);
    buf[half] = Complex64::new(spec.values[half].re, 0.0);
    for k in 1..half {
        buf[k] = spec.values[k];
        buf[n - k] = spec.values[k].conj();
    }
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(TimeSeries {
        sample_time: grid.sample_time(),
        samples: buf.iter().map(|c| c.re * scale).collect(),
    })
}

/// Rest-to-rest reference whose acceleration is a sum of harmonics over
/// `[t0, t1]`, repeated with opposite sign (restarted phase) over
/// `[t1, t2]`, and zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub main_frequency_hz: f64,
    pub num_harmonics: u32,
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub total_duration: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.main_frequency_hz.is_finite()
            && self.main_frequency_hz > 0.0
            && self.num_harmonics >= 1
            && 0.0 < self.t0
            && self.t0 < self.t1
            && self.t1 < self.t2
            && self.t2 < self.total_duration;
        if ok {
            Ok(())
        } else {
            Err(ImlError::InvalidArgument(format!(
                "trajectory requires f* > 0, N >= 1 and 0 < t0 < t1 < t2 < T, got {self:?}"
            )))
        }
    }

    fn main_omega(&self) -> f64 {
        2.0 * PI * self.main_frequency_hz
    }

    /// Prescribed acceleration at time `t`.
    pub fn acceleration(&self, t: f64) -> f64 {
        let w = self.main_omega();
        let harmonics = |tau: f64| {
            (1..=self.num_harmonics)
                .map(|n| (n as f64 * w * tau).sin())
                .sum::<f64>()
        };
        if self.t0 < t && t < self.t1 {
            harmonics(t - self.t0)
        } else if self.t1 < t && t < self.t2 {
            -harmonics(t - self.t1)
        } else {
            0.0
        }
    }

    /// Closed-form position and velocity change over `tau` seconds of a
    /// segment with acceleration `sign * sum sin(n w tau)` starting at rest.
    fn segment(&self, sign: f64, tau: f64) -> (f64, f64) {
        let w = self.main_omega();
        let (mut dp, mut dv) = (0.0, 0.0);
        for n in 1..=self.num_harmonics {
            let nw = n as f64 * w;
            dv += (1.0 - (nw * tau).cos()) / nw;
            dp += tau / nw - (nw * tau).sin() / (nw * nw);
        }
        (sign * dp, sign * dv)
    }

    /// Position and velocity at time `t`, starting from rest at the origin.
    pub fn state_at(&self, t: f64) -> (f64, f64) {
        if t <= self.t0 {
            return (0.0, 0.0);
        }
        let (p1, v1) = self.segment(1.0, t.min(self.t1) - self.t0);
        if t <= self.t1 {
            return (p1, v1);
        }
        let tau = t.min(self.t2) - self.t1;
        let (dp, dv) = self.segment(-1.0, tau);
        let (p2, v2) = (p1 + v1 * tau + dp, v1 + dv);
        if t <= self.t2 {
            return (p2, v2);
        }
        (p2 + v2 * (t - self.t2), v2)
    }
}

/// Samples the reference position on the grid's time axis.
pub fn desired_trajectory(spec: &TrajectorySpec, grid: &FrequencyGrid) -> Result<TimeSeries> {
    spec.validate()?;
    let duration = grid.duration();
    if (spec.total_duration - duration).abs() > 1e-6 * duration {
        return Err(ImlError::InvalidArgument(format!(
            "trajectory duration {} does not match grid duration {}",
            spec.total_duration, duration
        )));
    }
    let samples = grid.times().map(|t| spec.state_at(t).0).collect();
    Ok(TimeSeries::new(grid.sample_time(), samples))
}
