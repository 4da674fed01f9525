//! Compound-Poisson ensembles, Gaussian kernel density estimation and
//! Savitzky–Golay smoothing.
//!
//! Every (path, step) pair draws from its own ChaCha8 block position, so a
//! simulation is bit-identical for a given seed no matter how the paths are
//! scheduled across threads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::dataset::{DataSource, DensityDataset};
use crate::model::{eval_drift, integer_ratio, DriftSpec, JumpLaw, JumpSampler};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Kernel contributions beyond this many bandwidths are dropped.
const KDE_CUTOFF: f64 = 8.0;
/// Samples per partial sum in the KDE; fixed so sums do not depend on threads.
const KDE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub jump: JumpLaw,
    pub drift: DriftSpec,
    #[cfg_attr(feature = "serde", serde(default))]
    pub x0: f64,
}

impl EnsembleConfig {
    pub fn n_steps(&self) -> Option<usize> {
        integer_ratio(self.horizon, self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("at least one path is required".into()));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config("dt and horizon must be positive".into()));
        }
        if self.n_steps().is_none() {
            return Err(Error::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        self.jump.validate()
    }
}

/// Uniform grid `x_min + j·dx`, j = 0..n.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Grid {
    pub x_min: f64,
    pub dx: f64,
    pub n: usize,
}

impl Grid {
    pub fn symmetric(half_width: f64, dx: f64) -> Grid {
        Grid {
            x_min: -half_width,
            dx,
            n: crate::model::steps(2.0 * half_width, dx) + 1,
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        crate::grid_point(self.x_min, self.dx, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KdeConfig {
    pub bandwidth_constant: f64,
    pub grid: Grid,
    #[cfg_attr(feature = "serde", serde(default = "default_window"))]
    pub window: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_order"))]
    pub order: usize,
}

#[cfg(feature = "serde")]
fn default_window() -> usize {
    11
}

#[cfg(feature = "serde")]
fn default_order() -> usize {
    3
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_constant > 0.0) {
            return Err(Error::Config("bandwidth constant must be positive".into()));
        }
        if !(self.grid.dx > 0.0) || self.grid.n < self.window {
            return Err(Error::Config(
                "KDE grid must be positive and at least one window wide".into(),
            ));
        }
        if self.window % 2 == 0 || self.window <= self.order {
            return Err(Error::Config(format!(
                "smoothing window {} must be odd and exceed the order {}",
                self.window, self.order
            )));
        }
        Ok(())
    }
}

/// h = c·(J·dt²)^(−1/5).
pub fn bandwidth(c: f64, n_paths: usize, dt: f64) -> f64 {
    c * libm::pow(n_paths as f64 * dt * dt, -0.2)
}

fn path_rng(base: &ChaCha8Rng, path: usize, step: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(path as u64);
    rng.set_word_pos((step as u128) << 32);
    rng
}

struct JumpDraw {
    count: Option<Poisson<f64>>,
    normal: Option<Normal<f64>>,
    exp: Option<Exp<f64>>,
    shift: f64,
}

impl JumpDraw {
    fn new(law: &JumpLaw, dt: f64) -> Result<Self> {
        let mean = law.rate * dt;
        let count = if mean > 0.0 {
            Some(Poisson::new(mean).map_err(|e| Error::Config(format!("poisson: {e}")))?)
        } else {
            None
        };
        let (normal, exp, shift) = match law.sampler {
            JumpSampler::Normal { mean, std } => (
                Some(Normal::new(mean, std).map_err(|e| Error::Config(format!("normal: {e}")))?),
                None,
                0.0,
            ),
            JumpSampler::Laplace { location, scale } => (
                None,
                Some(Exp::new(1.0 / scale).map_err(|e| Error::Config(format!("exp: {e}")))?),
                location,
            ),
        };
        Ok(JumpDraw {
            count,
            normal,
            exp,
            shift,
        })
    }

    /// Sum of a Poisson number of jumps over one step.
    fn increment(&self, rng: &mut ChaCha8Rng) -> f64 {
        let Some(count) = &self.count else { return 0.0 };
        let n = count.sample(rng) as u64;
        let mut s = 0.0;
        for _ in 0..n {
            s += match (&self.normal, &self.exp) {
                (Some(d), _) => d.sample(rng),
                (_, Some(e)) => {
                    let mag = e.sample(rng);
                    let v = if rng.next_u32() & 1 == 0 { mag } else { -mag };
                    self.shift + v
                }
                _ => 0.0,
            };
        }
        s
    }
}

/// Path states advanced one step at a time.
pub struct EnsembleStepper {
    base: ChaCha8Rng,
    draw: JumpDraw,
    drift: DriftSpec,
    dt: f64,
    step: usize,
    n_steps: usize,
    state: Vec<f64>,
}

impl EnsembleStepper {
    pub fn new(cfg: &EnsembleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EnsembleStepper {
            base: ChaCha8Rng::seed_from_u64(cfg.seed),
            draw: JumpDraw::new(&cfg.jump, cfg.dt)?,
            drift: cfg.drift.clone(),
            dt: cfg.dt,
            step: 0,
            n_steps: cfg.n_steps().unwrap_or(0),
            state: vec![cfg.x0; cfg.n_paths],
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&mut self) -> Result<()> {
        let step = self.step;
        let (base, draw, drift, dt) = (&self.base, &self.draw, &self.drift, self.dt);
        let advance = |(path, x): (usize, &mut f64)| -> Result<()> {
            let mut rng = path_rng(base, path, step);
            let b = eval_drift(drift, *x)?;
            *x += b * dt + draw.increment(&mut rng);
            Ok(())
        };
        #[cfg(feature = "parallel")]
        self.state
            .par_iter_mut()
            .enumerate()
            .try_for_each(advance)?;
        #[cfg(not(feature = "parallel"))]
        self.state.iter_mut().enumerate().try_for_each(advance)?;
        self.step += 1;
        Ok(())
    }
}

/// Samples `[time][path]` in row-major order, `n_steps + 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSamples {
    pub n_paths: usize,
    pub n_times: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl EnsembleSamples {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_paths..(t + 1) * self.n_paths]
    }
}

pub fn simulate_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleSamples> {
    let mut s = EnsembleStepper::new(cfg)?;
    let n_times = s.n_steps() + 1;
    let mut data = Vec::with_capacity(n_times * cfg.n_paths);
    data.extend_from_slice(s.state());
    for _ in 1..n_times {
        s.step()?;
        data.extend_from_slice(s.state());
    }
    Ok(EnsembleSamples {
        n_paths: cfg.n_paths,
        n_times,
        dt: cfg.dt,
        data,
    })
}

fn kde_accumulate(samples: &[f64], grid: &Grid, h: f64, out: &mut [f64]) {
    let d = grid.dx / h;
    let decay = libm::exp(-d * d);
    let reach = libm::ceil(KDE_CUTOFF / d) as i64;
    let n = grid.n as i64;
    for &x in samples {
        if !x.is_finite() {
            continue;
        }
        let s = (x - grid.x_min) / grid.dx;
        let j0 = libm::round(s) as i64;
        if j0 + reach < 0 || j0 - reach >= n {
            continue;
        }
        let u = (j0 as f64 - s) * d;
        let g0 = libm::exp(-0.5 * u * u);
        if (0..n).contains(&j0) {
            out[j0 as usize] += g0;
        }
        // g(m+1)/g(m) = exp(−(u+m·d)·d − d²/2); consecutive ratios differ by exp(−d²).
        let mut g = g0;
        let mut q = libm::exp(-u * d - 0.5 * d * d);
        for j in j0 + 1..=(j0 + reach).min(n - 1) {
            g *= q;
            q *= decay;
            if j >= 0 {
                out[j as usize] += g;
            }
        }
        let mut g = g0;
        let mut q = libm::exp(u * d - 0.5 * d * d);
        for j in ((j0 - reach).max(0)..j0).rev() {
            g *= q;
            q *= decay;
            if j < n {
                out[j as usize] += g;
            }
        }
    }
}

/// Gaussian KDE `(1/(J·h))·Σ φ((x − X_j)/h)` on `grid`.
pub fn kde_density(samples: &[f64], grid: &Grid, h: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Size {
            expected: 1,
            found: 0,
            what: "KDE samples",
        });
    }
    if !(h > 0.0) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    let partial = |chunk: &[f64]| {
        let mut acc = vec![0.0; grid.n];
        kde_accumulate(chunk, grid, h, &mut acc);
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = samples.par_chunks(KDE_CHUNK).map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = samples.chunks(KDE_CHUNK).map(partial).collect();
    let mut out = vec![0.0; grid.n];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let norm = 1.0 / (samples.len() as f64 * h * libm::sqrt(2.0 * core::f64::consts::PI));
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}

/// Weights that evaluate the degree-`order` least-squares fit over `window`
/// consecutive points at position `at` within the window.
fn savgol_weights(window: usize, order: usize, at: usize) -> Result<Vec<f64>> {
    let half = (window - 1) as f64 / 2.0;
    let scale = half.max(1.0);
    let t = |i: usize| (i as f64 - half) / scale;
    let v = DMatrix::from_fn(window, order + 1, |i, k| libm::pow(t(i), k as f64));
    let normal = v.transpose() * &v;
    let inv = normal
        .cholesky()
        .ok_or_else(|| {
            Error::Decomposition("Savitzky-Golay normal matrix not positive definite".into())
        })?
        .inverse();
    let t0 = t(at);
    let e = nalgebra::DVector::from_fn(order + 1, |k, _| libm::pow(t0, k as f64));
    let w = v * (inv * e);
    Ok(w.iter().copied().collect())
}

/// Savitzky–Golay smoothing; the first and last `w/2` points use one-sided
/// fits over the first or last `w` samples.
pub fn savgol_smooth(values: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window <= order {
        return Err(Error::Config(format!(
            "window {window} must be odd and larger than the order {order}"
        )));
    }
    let n = values.len();
    if n < window {
        return Err(Error::Size {
            expected: window,
            found: n,
            what: "smoothing input",
        });
    }
    let half = window / 2;
    let center = savgol_weights(window, order, half)?;
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = center
            .iter()
            .zip(&values[i - half..=i + half])
            .map(|(w, v)| w * v)
            .sum();
    }
    for at in 0..half {
        let w = savgol_weights(window, order, at)?;
        out[at] = w.iter().zip(&values[..window]).map(|(w, v)| w * v).sum();
        let wr = savgol_weights(window, order, window - 1 - at)?;
        out[n - 1 - at] = wr
            .iter()
            .zip(&values[n - window..])
            .map(|(w, v)| w * v)
            .sum();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeReport {
    pub bandwidth: f64,
    /// Values set to zero after smoothing, summed over all rows.
    pub clamped: usize,
    /// Mass of each unsmoothed KDE row.
    pub raw_masses: Vec<f64>,
}

/// Simulates the ensemble and turns each time slice into a smoothed,
/// nonnegative density. Snapshots are t_0..t_{n−1}; the companion of t_i is t_{i+1}.
pub fn build_kde_dataset(
    cfg: &EnsembleConfig,
    kde: &KdeConfig,
) -> Result<(DensityDataset, KdeReport)> {
    kde.validate()?;
    let mut stepper = EnsembleStepper::new(cfg)?;
    let h = bandwidth(kde.bandwidth_constant, cfg.n_paths, cfg.dt);
    let n_steps = stepper.n_steps();
    let mut rows = Vec::with_capacity(n_steps + 1);
    let mut report = KdeReport {
        bandwidth: h,
        clamped: 0,
        raw_masses: Vec::with_capacity(n_steps + 1),
    };
    loop {
        let raw = kde_density(stepper.state(), &kde.grid, h)?;
        report
            .raw_masses
            .push(raw.iter().sum::<f64>() * kde.grid.dx);
        let mut row = savgol_smooth(&raw, kde.window, kde.order)?;
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                report.clamped += 1;
            }
        }
        rows.push(row);
        if stepper.step_index() == n_steps {
            break;
        }
        stepper.step()?;
    }
    let companions = rows[1..].to_vec();
    rows.truncate(n_steps);
    let ds = DensityDataset {
        x_min: kde.grid.x_min,
        dx: kde.grid.dx,
        n_x: kde.grid.n,
        times: (0..n_steps).map(|i| i as f64 * cfg.dt).collect(),
        obs_dt: cfg.dt,
        diff_dt: cfg.dt,
        snapshots: rows,
        companions,
        source: DataSource::Kde,
    };
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LevyDensitySpec;

    fn cfg(n_paths: usize, law: JumpLaw) -> EnsembleConfig {
        EnsembleConfig {
            n_paths,
            dt: 0.05,
            horizon: 0.5,
            seed: 7,
            jump: law,
            drift: DriftSpec::ZERO,
            x0: 0.0,
        }
    }

    #[test]
    fn no_jumps_no_motion() {
        let s = simulate_ensemble(&cfg(50, JumpLaw::none())).unwrap();
        assert_eq!(s.n_times, 11);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeds_reproduce() {
        let law = JumpLaw::for_density(&LevyDensitySpec::ExponentialDecay).unwrap();
        let a = simulate_ensemble(&cfg(300, law)).unwrap();
        let b = simulate_ensemble(&cfg(300, law)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(300, law);
        other.seed = 8;
        assert_ne!(simulate_ensemble(&other).unwrap(), a);
        // A path's trajectory does not depend on how many paths run beside it.
        let small = simulate_ensemble(&cfg(10, law)).unwrap();
        for t in 0..a.n_times {
            assert_eq!(&a.row(t)[..10], small.row(t));
        }
    }

    #[test]
    fn increment_variance_matches_compound_poisson() {
        let law = JumpLaw::for_density(&LevyDensitySpec::GaussianDecay).unwrap();
        let mut c = cfg(100_000, law);
        c.horizon = 0.05;
        let s = simulate_ensemble(&c).unwrap();
        let inc: Vec<f64> = s.row(1).iter().zip(s.row(0)).map(|(a, b)| a - b).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (inc.len() - 1) as f64;
        let expected = libm::sqrt(core::f64::consts::PI) * 0.05 * 0.5;
        assert!(
            (var / expected - 1.0).abs() < 0.05,
            "var {var} vs {expected}"
        );

        let law = JumpLaw::for_density(&LevyDensitySpec::ExponentialDecay).unwrap();
        let mut c = cfg(100_000, law);
        c.horizon = 0.05;
        let s = simulate_ensemble(&c).unwrap();
        let var = s.row(1).iter().map(|v| v * v).sum::<f64>() / 100_000.0;
        let expected = 1.0 * 0.05 * law.second_moment();
        assert!(
            (var / expected - 1.0).abs() < 0.05,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn kde_single_point_peak() {
        let grid = Grid::symmetric(5.0, 0.01);
        let h = 0.105;
        let p = kde_density(&[0.0], &grid, h).unwrap();
        let peak = 1.0 / (h * libm::sqrt(2.0 * core::f64::consts::PI));
        assert!((p[500] - peak).abs() < 1e-12 * peak);
        let j = 537;
        let z = grid.x(j) / h;
        assert!((p[j] - peak * libm::exp(-0.5 * z * z)).abs() < 1e-12 * peak);
    }

    #[test]
    fn kde_mass_of_point_cloud() {
        let grid = Grid::symmetric(5.0, 0.01);
        let p = kde_density(&vec![0.0; 1000], &grid, 0.2).unwrap();
        let mass: f64 = p.iter().sum::<f64>() * grid.dx;
        assert!((mass - 1.0).abs() < 1e-6);
        assert!(kde_density(&[], &grid, 0.2).is_err());
    }

    #[test]
    fn kde_off_grid_sample_contributes_tail() {
        let grid = Grid {
            x_min: 0.0,
            dx: 0.1,
            n: 11,
        };
        let p = kde_density(&[-0.25], &grid, 0.2).unwrap();
        let norm = 1.0 / (0.2 * libm::sqrt(2.0 * core::f64::consts::PI));
        for (j, v) in p.iter().enumerate() {
            let z = (grid.x(j) + 0.25) / 0.2;
            let expected = if z < KDE_CUTOFF {
                norm * libm::exp(-0.5 * z * z)
            } else {
                0.0
            };
            assert!((v - expected).abs() < 1e-13, "{j}: {v} vs {expected}");
        }
    }

    #[test]
    fn bandwidth_rule() {
        assert!((bandwidth(0.5, 1_000_000, 0.05) - 0.105).abs() < 5e-4);
    }

    #[test]
    fn savgol_reproduces_polynomials() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 - 2.0).collect();
        let cubic: Vec<f64> = x
            .iter()
            .map(|t| 1.0 - 2.0 * t + 0.5 * t * t + 0.3 * t * t * t)
            .collect();
        let s = savgol_smooth(&cubic, 11, 3).unwrap();
        for (a, b) in s.iter().zip(&cubic) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = vec![2.5; 15];
        for v in savgol_smooth(&c, 11, 3).unwrap() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        assert!(matches!(
            savgol_smooth(&c[..5], 11, 3),
            Err(Error::Size { .. })
        ));
        assert!(savgol_smooth(&c, 10, 3).is_err());
    }

    #[test]
    fn savgol_reduces_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 600;
        let clean: Vec<f64> = (0..n).map(|i| libm::sin(i as f64 * 0.02)).collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|c| c + 0.01 * (2.0 * (rng.next_u64() as f64 / u64::MAX as f64) - 1.0))
            .collect();
        let smooth = savgol_smooth(&noisy, 11, 3).unwrap();
        let rms = |a: &[f64]| {
            libm::sqrt(
                a.iter()
                    .zip(&clean)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    / n as f64,
            )
        };
        assert!(rms(&smooth) < rms(&noisy));
    }

    #[test]
    fn kde_dataset_shape_and_sign() {
        let law = JumpLaw::for_density(&LevyDensitySpec::GaussianDecay).unwrap();
        let c = cfg(1000, law);
        let kde = KdeConfig {
            bandwidth_constant: 0.5,
            grid: Grid::symmetric(5.0, 0.05),
            window: 11,
            order: 3,
        };
        let (ds, rep) = build_kde_dataset(&c, &kde).unwrap();
        assert_eq!(ds.snapshots.len(), 10);
        assert_eq!(ds.companions.len(), 10);
        assert_eq!(ds.n_x, 201);
        assert_eq!(rep.raw_masses.len(), 11);
        for row in ds.snapshots.iter().chain(&ds.companions) {
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        assert_eq!(ds.companions[3], ds.snapshots[4]);
        ds.validate().unwrap();
    }

    #[test]
    fn kde_dataset_without_jumps_is_point_mass_kde() {
        let c = cfg(100, JumpLaw::none());
        let kde = KdeConfig {
            bandwidth_constant: 0.5,
            grid: Grid::symmetric(5.0, 0.05),
            window: 11,
            order: 3,
        };
        let (ds, rep) = build_kde_dataset(&c, &kde).unwrap();
        let raw = kde_density(&[0.0], &kde.grid, rep.bandwidth).unwrap();
        let mut expected = savgol_smooth(&raw, 11, 3).unwrap();
        expected.iter_mut().for_each(|v| *v = v.max(0.0));
        for row in &ds.snapshots {
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
