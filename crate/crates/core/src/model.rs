//! Frequency-response learning from iteration data.
//!
//! Raw samples `y_m / u` are collected per grid bin, averaged, and regressed
//! with two independent GPs (real and imaginary parts). Confidence
//! intervals of the GP posterior become the per-bin uncertainty bounds.

use std::io::{self, Write};

use num_complex::Complex64;

use crate::error::{ImlError, Result};
use crate::fmt_f64;
use crate::gpr::{self, FitOptions, GprDataset, GprModel};
use crate::plant::TransferFunction;
use crate::spectrum::{ComplexSpectrum, FrequencyGrid};

/// Two-sided 95% normal quantile.
pub const DEFAULT_CI_FACTOR: f64 = 1.96;

/// One pointwise frequency-response sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSample {
    pub omega: f64,
    pub value: Complex64,
    pub iteration: usize,
}

/// Model data `y_m / u` at every bin up to `omega_c` where `|u| >= u_ok`.
pub fn harvest(
    u_prev: &ComplexSpectrum,
    y_m_prev: &ComplexSpectrum,
    u_ok: f64,
    omega_c: f64,
    k: usize,
) -> Result<Vec<ModelSample>> {
    u_prev.grid().check_same(y_m_prev.grid())?;
    let grid = u_prev.grid();
    let active = grid.bins_up_to(omega_c);
    Ok((0..active)
        .filter_map(|i| {
            let u = u_prev.values()[i];
            let mag = u.norm();
            (mag >= u_ok && mag > 0.0).then(|| ModelSample {
                omega: grid.frequency(i),
                value: y_m_prev.values()[i] / u,
                iteration: k,
            })
        })
        .collect())
}

/// Mean model value at one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedPoint {
    pub omega: f64,
    pub mean: Complex64,
    pub count: usize,
}

/// Per-bin sample lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDataStore {
    grid: FrequencyGrid,
    bins: Vec<Vec<ModelSample>>,
}

impl ModelDataStore {
    pub fn new(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            bins: vec![Vec::new(); grid.num_bins()],
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    fn bin_of(&self, omega: f64) -> Result<usize> {
        let pos = omega / self.grid.resolution();
        let idx = pos.round();
        if !(idx >= 0.0 && (pos - idx).abs() < 1e-6 && (idx as usize) < self.grid.num_bins()) {
            return Err(ImlError::GridMismatch(format!(
                "sample frequency {omega} rad/s is not on the grid"
            )));
        }
        Ok(idx as usize)
    }

    /// Adds samples, keeping each bin ordered by iteration.
    pub fn insert(&mut self, samples: &[ModelSample]) -> Result<()> {
        for s in samples {
            if !(s.value.re.is_finite() && s.value.im.is_finite()) {
                return Err(ImlError::InvalidArgument(format!(
                    "non-finite model sample at {} rad/s",
                    s.omega
                )));
            }
            let i = self.bin_of(s.omega)?;
            let bin = &mut self.bins[i];
            let pos = bin.partition_point(|x| x.iteration <= s.iteration);
            bin.insert(pos, *s);
        }
        Ok(())
    }

    /// `N_omega`, the number of samples stored at bin `i`.
    pub fn count(&self, i: usize) -> usize {
        self.bins.get(i).map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &ModelSample> {
        self.bins.iter().flatten()
    }

    /// Every stored sample as its own point, for fitting on raw data.
    pub fn raw_points(&self) -> Vec<AveragedPoint> {
        self.samples()
            .map(|s| AveragedPoint {
                omega: s.omega,
                mean: s.value,
                count: 1,
            })
            .collect()
    }
}

/// Arithmetic mean of the samples at every populated bin.
pub fn average(store: &ModelDataStore) -> Vec<AveragedPoint> {
    store
        .bins
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            let sum: Complex64 = b.iter().map(|s| s.value).sum();
            AveragedPoint {
                omega: b[0].omega,
                mean: sum / b.len() as f64,
                count: b.len(),
            }
        })
        .collect()
}

/// Learned model value and uncertainty bound at one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPoint {
    pub omega: f64,
    pub a_hat: f64,
    pub b_hat: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub n_samples: usize,
}

impl ModelPoint {
    pub fn g_hat(&self) -> Complex64 {
        Complex64::new(self.a_hat, self.b_hat)
    }
}

/// Per-bin model `a_hat + j b_hat` with bounds `delta_a`, `delta_b` on
/// every grid bin up to the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyModel {
    grid: FrequencyGrid,
    omega_c: f64,
    points: Vec<ModelPoint>,
    gpr_a: Option<GprModel>,
    gpr_b: Option<GprModel>,
    ci_factor: f64,
}

impl FrequencyModel {
    /// Model with explicit per-bin values and bounds (no regression behind it).
    pub fn from_parts(
        grid: FrequencyGrid,
        omega_c: f64,
        values: &[Complex64],
        deltas: &[(f64, f64)],
    ) -> Result<Self> {
        let n = grid.bins_up_to(omega_c);
        if values.len() != n || deltas.len() != n {
            return Err(ImlError::GridMismatch(format!(
                "model needs {n} bins up to the cutoff, got {} values and {} bounds",
                values.len(),
                deltas.len()
            )));
        }
        if deltas.iter().any(|(a, b)| !(*a >= 0.0 && *b >= 0.0)) {
            return Err(ImlError::InvalidArgument("uncertainty bounds must be non-negative".into()));
        }
        let points = (0..n)
            .map(|i| ModelPoint {
                omega: grid.frequency(i),
                a_hat: values[i].re,
                b_hat: values[i].im,
                delta_a: deltas[i].0,
                delta_b: deltas[i].1,
                n_samples: 0,
            })
            .collect();
        Ok(Self {
            grid,
            omega_c,
            points,
            gpr_a: None,
            gpr_b: None,
            ci_factor: 0.0,
        })
    }

    /// Exact model of `tf` with zero uncertainty.
    pub fn exact(tf: &TransferFunction, grid: FrequencyGrid, omega_c: f64) -> Result<Self> {
        let n = grid.bins_up_to(omega_c);
        let values = (0..n)
            .map(|i| tf.freq_response(grid.frequency(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(grid, omega_c, &values, &vec![(0.0, 0.0); n])
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    pub fn points(&self) -> &[ModelPoint] {
        &self.points
    }

    pub fn g_hat(&self, bin: usize) -> Option<Complex64> {
        self.points.get(bin).map(ModelPoint::g_hat)
    }

    pub fn gpr_components(&self) -> Option<(&GprModel, &GprModel)> {
        Some((self.gpr_a.as_ref()?, self.gpr_b.as_ref()?))
    }

    /// Evaluates the regression at an arbitrary frequency, off-grid or above
    /// the cutoff included. Returns `None` for models without regression.
    pub fn predict_at(&self, omega: f64) -> Option<ModelPoint> {
        let (ga, gb) = self.gpr_components()?;
        let (pa, pb) = (ga.predict(omega), gb.predict(omega));
        Some(ModelPoint {
            omega,
            a_hat: pa.mean,
            b_hat: pb.mean,
            delta_a: self.ci_factor * pa.variance.sqrt(),
            delta_b: self.ci_factor * pb.variance.sqrt(),
            n_samples: 0,
        })
    }

    /// Writes `omega_rad_s,a_hat,b_hat,delta_a,delta_b,n_samples` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "omega_rad_s,a_hat,b_hat,delta_a,delta_b,n_samples")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(p.omega),
                fmt_f64(p.a_hat),
                fmt_f64(p.b_hat),
                fmt_f64(p.delta_a),
                fmt_f64(p.delta_b),
                p.n_samples
            )?;
        }
        Ok(())
    }
}

/// Fits the real and imaginary GPs on `averaged` and evaluates them on
/// every grid bin up to `omega_c`.
pub fn refit(
    averaged: &[AveragedPoint],
    grid: &FrequencyGrid,
    omega_c: f64,
    ci_factor: f64,
    opts: &FitOptions,
) -> Result<FrequencyModel> {
    if averaged.is_empty() {
        return Err(ImlError::NoModel);
    }
    if !(ci_factor >= 0.0 && ci_factor.is_finite()) {
        return Err(ImlError::InvalidArgument(format!("ci factor {ci_factor}")));
    }
    let omegas: Vec<f64> = averaged.iter().map(|p| p.omega).collect();
    let re = GprDataset::new(omegas.clone(), averaged.iter().map(|p| p.mean.re).collect())?;
    let im = GprDataset::new(omegas, averaged.iter().map(|p| p.mean.im).collect())?;
    let opts = FitOptions {
        fallback_span: opts.fallback_span.or(Some(omega_c)),
        ..*opts
    };
    let (ga, gb) = rayon::join(|| gpr::fit(&re, &opts), || gpr::fit(&im, &opts));
    let (ga, gb) = (ga?, gb?);

    let n = grid.bins_up_to(omega_c);
    let mut counts = vec![0usize; n];
    for p in averaged {
        let i = (p.omega / grid.resolution()).round() as usize;
        if i < n {
            counts[i] += p.count;
        }
    }
    let points = (0..n)
        .map(|i| {
            let omega = grid.frequency(i);
            let (pa, pb) = (ga.predict(omega), gb.predict(omega));
            ModelPoint {
                omega,
                a_hat: pa.mean,
                b_hat: pb.mean,
                delta_a: ci_factor * pa.variance.sqrt(),
                delta_b: ci_factor * pb.variance.sqrt(),
                n_samples: counts[i],
            }
        })
        .collect();
    Ok(FrequencyModel {
        grid: *grid,
        omega_c,
        points,
        gpr_a: Some(ga),
        gpr_b: Some(gb),
        ci_factor,
    })
}

/// `100 max|g_hat - g| / max|g|` over bins up to `omega_c`, in percent.
pub fn model_error(fm: &FrequencyModel, truth: &TransferFunction, omega_c: f64) -> Result<f64> {
    let n = fm.grid.bins_up_to(omega_c);
    if n > fm.points.len() {
        return Err(ImlError::GridMismatch(format!(
            "model covers {} bins, {n} requested",
            fm.points.len()
        )));
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for p in &fm.points[..n] {
        let g = truth.freq_response(p.omega)?;
        num = num.max((p.g_hat() - g).norm());
        den = den.max(g.norm());
    }
    if den == 0.0 {
        return Err(ImlError::ZeroReference);
    }
    Ok(100.0 * num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{example_plant, RngStream};
    use crate::spectrum::make_grid;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grid() -> FrequencyGrid {
        make_grid(0.0002, 12.0).unwrap()
    }

    #[test]
    fn harvest_threshold_and_division() {
        let g = make_grid(0.1, 1.0).unwrap();
        let zero = ComplexSpectrum::zeros(g);
        assert!(harvest(&zero, &zero, 1.0, 100.0, 1).unwrap().is_empty());

        let mut u = ComplexSpectrum::zeros(g);
        let mut y = ComplexSpectrum::zeros(g);
        u.values_mut()[2] = c(10.0, 0.0);
        y.values_mut()[2] = c(20.0, 10.0);
        u.values_mut()[3] = c(0.5, 0.0);
        let s = harvest(&u, &y, 1.0, 100.0, 4).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].value, c(2.0, 1.0));
        assert_eq!(s[0].iteration, 4);
        assert!((s[0].omega - g.frequency(2)).abs() < 1e-12);
        // Cutoff below bin 2 excludes it.
        assert!(harvest(&u, &y, 1.0, g.frequency(1), 4).unwrap().is_empty());
    }

    #[test]
    fn harvest_is_exact_without_noise() {
        let g = grid();
        let tf = example_plant();
        let u = ComplexSpectrum::from_fn(g, |i, _| c(1.0 + i as f64, 0.5));
        let y = tf.response_on(&g).unwrap().zip_with(&u, |a, b| a * b).unwrap();
        let omega_c = 2.0 * PI * 5.0;
        let s = harvest(&u, &y, 0.1, omega_c, 1).unwrap();
        assert_eq!(s.len(), 61);
        for x in s {
            let truth = tf.freq_response(x.omega).unwrap();
            assert!((x.value - truth).norm() < 1e-12);
        }
    }

    #[test]
    fn averaging() {
        let g = make_grid(0.1, 1.0).unwrap();
        let mut store = ModelDataStore::new(g);
        let w = g.frequency(1);
        store
            .insert(&[ModelSample { omega: w, value: c(3.0, 3.0), iteration: 2 }])
            .unwrap();
        store
            .insert(&[ModelSample { omega: w, value: c(1.0, 1.0), iteration: 1 }])
            .unwrap();
        store
            .insert(&[ModelSample { omega: g.frequency(3), value: c(-1.0, 0.5), iteration: 1 }])
            .unwrap();
        assert_eq!(store.count(1), 2);
        assert_eq!(store.samples().next().unwrap().iteration, 1);
        let avg = average(&store);
        assert_eq!(avg.len(), 2);
        assert_eq!(avg[0].mean, c(2.0, 2.0));
        assert_eq!(avg[0].count, 2);
        assert_eq!(avg[1].mean, c(-1.0, 0.5));
        assert_eq!(store.raw_points().len(), 3);

        let off_grid = ModelSample { omega: 0.3 * g.resolution(), value: c(1.0, 0.0), iteration: 1 };
        assert!(store.insert(&[off_grid]).is_err());
    }

    #[test]
    fn averaging_reduces_noise_as_inverse_sqrt() {
        // Std of the average of N samples versus of a single sample, over
        // many independent bins.
        let g = make_grid(0.01, 40.0).unwrap();
        let truth = c(0.7, -0.2);
        let sigma = 0.05;
        let spread = |n_per_bin: usize, seed: u64| {
            let mut rng = RngStream::new(seed);
            let mut store = ModelDataStore::new(g);
            for k in 0..n_per_bin {
                let samples: Vec<_> = (0..g.num_bins())
                    .map(|i| ModelSample {
                        omega: g.frequency(i),
                        value: truth + c(sigma * rng.standard_normal(), sigma * rng.standard_normal()),
                        iteration: k + 1,
                    })
                    .collect();
                store.insert(&samples).unwrap();
            }
            let avg = average(&store);
            (avg.iter().map(|p| (p.mean.re - truth.re).powi(2)).sum::<f64>() / avg.len() as f64).sqrt()
        };
        for seed in 0..3 {
            let ratio = spread(9, seed) / spread(1, seed + 100);
            assert!((ratio - 1.0 / 3.0).abs() < 0.2 / 3.0, "ratio {ratio}");
        }
    }

    #[test]
    fn refit_recovers_exact_data() {
        let g = grid();
        let tf = example_plant();
        let omega_c = 2.0 * PI * 5.0;
        let n = g.bins_up_to(omega_c);
        let averaged: Vec<_> = (0..n)
            .map(|i| AveragedPoint {
                omega: g.frequency(i),
                mean: tf.freq_response(g.frequency(i)).unwrap(),
                count: 1,
            })
            .collect();
        let fm = refit(&averaged, &g, omega_c, DEFAULT_CI_FACTOR, &FitOptions::default()).unwrap();
        assert_eq!(fm.points().len(), n);
        let e = model_error(&fm, &tf, omega_c).unwrap();
        assert!(e < 0.5, "e_g = {e}");
        let again = refit(&averaged, &g, omega_c, DEFAULT_CI_FACTOR, &FitOptions::default()).unwrap();
        assert_eq!(fm, again);

        // Far above the data the regression falls back to its prior.
        let (ga, _) = fm.gpr_components().unwrap();
        let far = fm.predict_at(omega_c + 200.0 * ga.hyperparams().length_scale).unwrap();
        assert!(far.a_hat.abs() < 1e-9);
        let expect = DEFAULT_CI_FACTOR * ga.hyperparams().signal_variance.sqrt();
        assert!((far.delta_a - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn zero_ci_factor_gives_zero_bounds() {
        let g = make_grid(0.01, 4.0).unwrap();
        let averaged: Vec<_> = (0..8)
            .map(|i| AveragedPoint { omega: g.frequency(i), mean: c(1.0 / (1.0 + i as f64), 0.1), count: 1 })
            .collect();
        let fm = refit(&averaged, &g, g.frequency(10), 0.0, &FitOptions::default()).unwrap();
        assert!(fm.points().iter().all(|p| p.delta_a == 0.0 && p.delta_b == 0.0));
        assert_eq!(
            refit(&[], &g, 1.0, 1.96, &FitOptions::default()).unwrap_err(),
            ImlError::NoModel
        );
    }

    #[test]
    fn model_error_extremes() {
        let g = grid();
        let tf = example_plant();
        let omega_c = 2.0 * PI * 5.0;
        let exact = FrequencyModel::exact(&tf, g, omega_c).unwrap();
        assert_eq!(model_error(&exact, &tf, omega_c).unwrap(), 0.0);
        let n = g.bins_up_to(omega_c);
        let zero = FrequencyModel::from_parts(g, omega_c, &vec![c(0.0, 0.0); n], &vec![(0.0, 0.0); n]).unwrap();
        assert!((model_error(&zero, &tf, omega_c).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_csv() {
        let g = make_grid(0.1, 1.0).unwrap();
        let fm = FrequencyModel::exact(&example_plant(), g, g.frequency(2)).unwrap();
        let mut out = Vec::new();
        fm.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "omega_rad_s,a_hat,b_hat,delta_a,delta_b,n_samples");
        assert_eq!(lines.count(), 3);
    }
}
