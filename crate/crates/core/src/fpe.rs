//! Explicit finite-difference solver for the nonlocal Fokker–Planck equation
//!
//! ```text
//! ∂ₜp = −∂ₓ(b p) + ½ ∂ₓₓp + Σₖ φ(r̃ₖ) [p(x+r̃ₖ) + p(x−r̃ₖ) − 2p(x)] Δr̃
//! ```
//!
//! with forward Euler in time, central differences in space and zero ghost
//! values outside the grid. The nonlocal sum is only evaluated on the
//! interior region [−L+R0, L−R0].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{DataSource, DensityDataset};
use crate::model::{
    eval_drift, eval_levy_density, integer_ratio, DriftSpec, LevyDensitySpec, ProblemDomain,
};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Densities below this floor abort the integration.
pub const NEGATIVITY_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum InitialCondition {
    /// Normal density, renormalized on the solver grid.
    Gaussian { mean: f64, std: f64 },
    /// Values on the solver grid; must already integrate to 1.
    Grid { values: Vec<f64> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Gaussian {
            mean: 0.0,
            std: 0.5,
        }
    }
}

/// Where the companion row of each snapshot sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TimeDifference {
    /// One solver step after the snapshot.
    #[default]
    Solver,
    /// One observation interval after the snapshot.
    Observation,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FpeConfig {
    pub domain: ProblemDomain,
    pub solver_dx: f64,
    pub solver_dt: f64,
    pub horizon: f64,
    pub n_snapshots: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub initial_condition: InitialCondition,
    #[cfg_attr(feature = "serde", serde(default))]
    pub time_difference: TimeDifference,
}

impl FpeConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let h = self.solver_dx;
        if !(h > 0.0 && self.solver_dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config(
                "solver steps and horizon must be positive".into(),
            ));
        }
        if self.n_snapshots == 0 {
            return Err(Error::Config("at least one snapshot is required".into()));
        }
        if self.solver_dt > h * h * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "CFL violated: dt={} exceeds dx^2={}",
                self.solver_dt,
                h * h
            )));
        }
        if integer_ratio(self.domain.dx, h).is_none() {
            return Err(Error::Config(format!(
                "observation dx={} is not an integer multiple of solver dx={h}",
                self.domain.dx
            )));
        }
        for (what, len) in [("L", self.domain.half_width), ("R0", self.domain.r0)] {
            if integer_ratio(len, h).is_none() {
                return Err(Error::Config(format!(
                    "{what}={len} is not a multiple of solver dx={h}"
                )));
            }
        }
        if let InitialCondition::Grid { values } = &self.initial_condition {
            let n = self.solver_grid_len();
            if values.len() != n {
                return Err(Error::Size {
                    expected: n,
                    found: values.len(),
                    what: "initial condition",
                });
            }
            if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config(
                    "initial condition must be finite and nonnegative".into(),
                ));
            }
            let mass: f64 = values.iter().sum::<f64>() * h;
            if libm::fabs(mass - 1.0) > 1e-10 {
                return Err(Error::Config(format!(
                    "initial condition has mass {mass}, expected 1"
                )));
            }
        }
        if let InitialCondition::Gaussian { std, .. } = self.initial_condition {
            if !(std > 0.0) {
                return Err(Error::Config(
                    "initial condition std must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn solver_grid_len(&self) -> usize {
        2 * integer_ratio(self.domain.half_width, self.solver_dx).unwrap_or(0) + 1
    }

    /// Spacing between snapshots, T/N.
    pub fn obs_dt(&self) -> f64 {
        self.horizon / self.n_snapshots as f64
    }

    /// Solver steps per observation interval; the effective step is
    /// `obs_dt / steps_per_snapshot`, never larger than `solver_dt`.
    pub fn steps_per_snapshot(&self) -> usize {
        let q = self.obs_dt() / self.solver_dt;
        let r = libm::round(q);
        if libm::fabs(q - r) < 1e-9 * r.max(1.0) {
            (r as usize).max(1)
        } else {
            libm::ceil(q) as usize
        }
    }

    pub fn effective_dt(&self) -> f64 {
        self.obs_dt() / self.steps_per_snapshot() as f64
    }

    /// Initial density on the solver grid.
    pub fn initial_density(&self) -> Vec<f64> {
        match &self.initial_condition {
            InitialCondition::Grid { values } => values.clone(),
            InitialCondition::Gaussian { mean, std } => {
                let n = self.solver_grid_len();
                let x0 = -self.domain.half_width;
                let mut p: Vec<f64> = (0..n)
                    .map(|j| {
                        let z = (crate::grid_point(x0, self.solver_dx, j) - mean) / std;
                        libm::exp(-0.5 * z * z)
                    })
                    .collect();
                let mass: f64 = p.iter().sum::<f64>() * self.solver_dx;
                p.iter_mut().for_each(|v| *v /= mass);
                p
            }
        }
    }
}

/// Time stepper for the explicit scheme.
#[derive(Debug, Clone)]
pub struct FpeSolver {
    dx: f64,
    dt: f64,
    p: Vec<f64>,
    scratch: Vec<f64>,
    bp: Vec<f64>,
    drift: Vec<f64>,
    weights: Vec<f64>,
    weight_sum: f64,
    interior: (usize, usize),
    step: usize,
}

impl FpeSolver {
    pub fn new(drift: &DriftSpec, levy: &LevyDensitySpec, cfg: &FpeConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.solver_dx;
        let n = cfg.solver_grid_len();
        let x0 = -cfg.domain.half_width;
        let b = (0..n)
            .map(|j| eval_drift(drift, crate::grid_point(x0, h, j)))
            .collect::<Result<Vec<_>>>()?;
        let m = integer_ratio(cfg.domain.r0, h).unwrap_or(0);
        let weights: Vec<f64> = (1..=m)
            .map(|k| eval_levy_density(levy, k as f64 * h) * h)
            .collect();
        let weight_sum = weights.iter().sum();
        let interior = (m, n - 1 - m);
        Ok(FpeSolver {
            dx: h,
            dt: cfg.effective_dt(),
            p: cfg.initial_density(),
            scratch: vec![0.0; n],
            bp: vec![0.0; n],
            drift: b,
            weights,
            weight_sum,
            interior,
            step: 0,
        })
    }

    pub fn density(&self) -> &[f64] {
        &self.p
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&mut self) -> Result<()> {
        let n = self.p.len();
        let p = &self.p;
        let (lo, hi) = self.interior;

        // Nonlocal term accumulated column by column so the inner loop is a
        // contiguous axpy.
        let nl = &mut self.scratch;
        nl.iter_mut().for_each(|v| *v = 0.0);
        for (k, &w) in self.weights.iter().enumerate() {
            let k = k + 1;
            if w == 0.0 {
                continue;
            }
            let plus = &p[lo + k..=hi + k];
            let minus = &p[lo - k..=hi - k];
            for ((acc, a), b) in nl[lo..=hi].iter_mut().zip(plus).zip(minus) {
                *acc += w * (a + b);
            }
        }
        for j in lo..=hi {
            nl[j] -= 2.0 * self.weight_sum * p[j];
        }

        for ((bp, b), v) in self.bp.iter_mut().zip(&self.drift).zip(p) {
            *bp = b * v;
        }
        let inv_2dx = 0.5 / self.dx;
        let half_inv_dx2 = 0.5 / (self.dx * self.dx);
        let at = |v: &[f64], j: isize| -> f64 {
            if j < 0 || j as usize >= n {
                0.0
            } else {
                v[j as usize]
            }
        };
        let mut min_val = f64::INFINITY;
        for j in 0..n {
            let ji = j as isize;
            let adv = -(at(&self.bp, ji + 1) - at(&self.bp, ji - 1)) * inv_2dx;
            let diff = (at(p, ji + 1) - 2.0 * p[j] + at(p, ji - 1)) * half_inv_dx2;
            let next = p[j] + self.dt * (adv + diff + nl[j]);
            nl[j] = next;
            min_val = min_val.min(next);
        }
        self.step += 1;
        if !(min_val >= NEGATIVITY_FLOOR) {
            return Err(Error::Instability {
                step: self.step,
                value: min_val,
            });
        }
        core::mem::swap(&mut self.p, &mut self.scratch);
        Ok(())
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Integrates to `cfg.horizon` and returns the final solver-grid density.
pub fn evolve(drift: &DriftSpec, levy: &LevyDensitySpec, cfg: &FpeConfig) -> Result<Vec<f64>> {
    let mut s = FpeSolver::new(drift, levy, cfg)?;
    s.advance(cfg.n_snapshots * cfg.steps_per_snapshot())?;
    Ok(s.p)
}

fn subsample(p: &[f64], stride: usize) -> Vec<f64> {
    p.iter().step_by(stride).copied().collect()
}

/// Snapshots at t_i = i·T/N, i = 0..N−1, subsampled to the observation mesh,
/// each with a companion row for the forward time difference.
pub fn solve_fpe(
    drift: &DriftSpec,
    levy: &LevyDensitySpec,
    cfg: &FpeConfig,
) -> Result<DensityDataset> {
    let mut solver = FpeSolver::new(drift, levy, cfg)?;
    let stride = integer_ratio(cfg.domain.dx, cfg.solver_dx).unwrap_or(1);
    let spo = cfg.steps_per_snapshot();
    let n = cfg.n_snapshots;
    let mut snapshots = Vec::with_capacity(n);
    let mut companions = Vec::with_capacity(n);
    let diff_steps = match cfg.time_difference {
        TimeDifference::Solver => 1,
        TimeDifference::Observation => spo,
    };
    // When the companion lands on the next snapshot it is recorded twice.
    let mut pending: Option<usize> = None;
    for i in 0..n {
        let target = i * spo;
        solver.advance(target - solver.step)?;
        if pending.take().is_some() {
            companions.push(subsample(&solver.p, stride));
        }
        snapshots.push(subsample(&solver.p, stride));
        if diff_steps < spo || i + 1 == n {
            solver.advance(diff_steps)?;
            companions.push(subsample(&solver.p, stride));
        } else {
            pending = Some(i);
        }
    }
    log::debug!("fpe: {} steps of dt={:e}", solver.step, solver.dt);
    let obs_dt = cfg.obs_dt();
    Ok(DensityDataset {
        x_min: -cfg.domain.half_width,
        dx: cfg.domain.dx,
        n_x: snapshots[0].len(),
        times: (0..n).map(|i| i as f64 * obs_dt).collect(),
        obs_dt,
        diff_dt: diff_steps as f64 * solver.dt,
        snapshots,
        companions,
        source: DataSource::Fpe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(dx: f64, dt: f64, n: usize, horizon: f64) -> FpeConfig {
        FpeConfig {
            domain: ProblemDomain::new(5.0, 2.0, dx).unwrap(),
            solver_dx: dx,
            solver_dt: dt,
            horizon,
            n_snapshots: n,
            initial_condition: InitialCondition::default(),
            time_difference: TimeDifference::Solver,
        }
    }

    #[test]
    fn rejects_cfl_violation_and_bad_stride() {
        let mut cfg = small_cfg(0.05, 0.003, 2, 0.1);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.solver_dt = 0.0025;
        cfg.validate().unwrap();
        cfg.domain.dx = 0.07;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn conserves_mass_without_jumps() {
        let cfg = small_cfg(0.05, 0.0025, 4, 0.5);
        let ds = solve_fpe(&DriftSpec::ZERO, &LevyDensitySpec::Zero, &cfg).unwrap();
        for m in ds.masses() {
            assert!((m - 1.0).abs() < 1e-6, "mass {m}");
        }
    }

    #[test]
    fn even_data_stays_even() {
        let cfg = small_cfg(0.05, 0.0025, 3, 0.3);
        let ds = solve_fpe(&DriftSpec::ZERO, &LevyDensitySpec::GaussianDecay, &cfg).unwrap();
        for row in &ds.snapshots {
            let n = row.len();
            for j in 0..n {
                assert!((row[j] - row[n - 1 - j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subsampling_is_exact() {
        let mut cfg = small_cfg(0.05, 0.0025, 2, 0.1);
        let fine = solve_fpe(
            &DriftSpec::Linear { slope: -0.5 },
            &LevyDensitySpec::GaussianDecay,
            &cfg,
        )
        .unwrap();
        cfg.domain.dx = 0.1;
        let coarse = solve_fpe(
            &DriftSpec::Linear { slope: -0.5 },
            &LevyDensitySpec::GaussianDecay,
            &cfg,
        )
        .unwrap();
        for (a, b) in fine.snapshots.iter().zip(&coarse.snapshots) {
            for (j, v) in b.iter().enumerate() {
                assert_eq!(a[2 * j].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn companion_layout() {
        let mut cfg = small_cfg(0.05, 0.0025, 4, 0.1);
        let ds = solve_fpe(&DriftSpec::Sine, &LevyDensitySpec::GaussianDecay, &cfg).unwrap();
        assert_eq!(ds.times.len(), 4);
        assert!((ds.diff_dt - 0.0025).abs() < 1e-15);
        cfg.time_difference = TimeDifference::Observation;
        let obs = solve_fpe(&DriftSpec::Sine, &LevyDensitySpec::GaussianDecay, &cfg).unwrap();
        assert!((obs.diff_dt - 0.025).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(obs.companions[i], obs.snapshots[i + 1]);
        }
        assert_eq!(obs.snapshots, ds.snapshots);
    }

    #[test]
    fn step_is_rounded_down_to_fit_snapshots() {
        let cfg = FpeConfig {
            domain: ProblemDomain::new(5.0, 2.0, 0.01).unwrap(),
            solver_dx: 0.005,
            solver_dt: 2.5e-5,
            horizon: 1.0,
            n_snapshots: 30,
            initial_condition: InitialCondition::default(),
            time_difference: TimeDifference::Solver,
        };
        assert_eq!(cfg.steps_per_snapshot(), 1334);
        assert!(cfg.effective_dt() <= 2.5e-5);
    }
}
