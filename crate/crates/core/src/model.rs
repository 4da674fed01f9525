//! Problem specifications shared by the data generators and the evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Spatial domain Ω = [−L, L], jump support (0, R0] and observation mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ProblemDomain {
    pub half_width: f64,
    pub r0: f64,
    pub dx: f64,
}

impl ProblemDomain {
    pub fn new(half_width: f64, r0: f64, dx: f64) -> Result<Self> {
        let d = ProblemDomain { half_width, r0, dx };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.half_width.is_finite() && self.r0.is_finite() && self.dx.is_finite();
        if !finite || self.half_width <= 0.0 || self.r0 <= 0.0 || self.dx <= 0.0 {
            return Err(Error::Config(format!(
                "domain parameters must be positive and finite (L={}, R0={}, dx={})",
                self.half_width, self.r0, self.dx
            )));
        }
        if self.r0 >= self.half_width {
            return Err(Error::Config(format!(
                "R0={} must be smaller than L={}",
                self.r0, self.half_width
            )));
        }
        if self.n_r() < 2 {
            return Err(Error::Config(format!(
                "R0/dx must be at least 2 (R0={}, dx={})",
                self.r0, self.dx
            )));
        }
        Ok(())
    }

    /// Number of grid nodes on [−L, L].
    pub fn n_x(&self) -> usize {
        steps(2.0 * self.half_width, self.dx) + 1
    }

    /// Number of r-grid nodes, floor(R0/dx).
    pub fn n_r(&self) -> usize {
        steps(self.r0, self.dx)
    }

    /// Half-width of the interior region [−L+R0, L−R0].
    pub fn interior_half_width(&self) -> f64 {
        self.half_width - self.r0
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..self.n_x())
            .map(|j| crate::grid_point(-self.half_width, self.dx, j))
            .collect()
    }

    pub fn r_grid(&self) -> Vec<f64> {
        (1..=self.n_r()).map(|k| k as f64 * self.dx).collect()
    }
}

/// floor(len/step) with a tolerance for values that are integers up to rounding.
pub(crate) fn steps(len: f64, step: f64) -> usize {
    let q = len / step;
    let r = libm::round(q);
    if libm::fabs(q - r) < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        libm::floor(q) as usize
    }
}

/// Returns `Some(k)` when `a / b` is within rounding of the integer `k`.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let q = a / b;
    let r = libm::round(q);
    if r >= 1.0 && libm::fabs(q - r) < 1e-9 * r {
        Some(r as usize)
    } else {
        None
    }
}

/// Values on a uniform grid `x0, x0 + h, ...`, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UniformTable {
    pub x0: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl UniformTable {
    pub fn new(x0: f64, h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0) || values.len() < 2 {
            return Err(Error::Config(
                "tabulated function needs a positive spacing and at least two values".into(),
            ));
        }
        Ok(UniformTable { x0, h, values })
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.h * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let n = self.values.len();
        let tol = 1e-12 * self.h;
        if !(x >= self.x0 - tol && x <= self.x_max() + tol) {
            return Err(Error::Domain(format!(
                "x={x} outside tabulated range [{}, {}]",
                self.x0,
                self.x_max()
            )));
        }
        let s = ((x - self.x0) / self.h).max(0.0);
        let i = (libm::floor(s) as usize).min(n - 2);
        let w = s - i as f64;
        Ok(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DriftSpec {
    Linear { slope: f64 },
    Sine,
    Tabulated(UniformTable),
}

impl DriftSpec {
    pub const ZERO: DriftSpec = DriftSpec::Linear { slope: 0.0 };
}

pub fn eval_drift(spec: &DriftSpec, x: f64) -> Result<f64> {
    match spec {
        DriftSpec::Linear { slope } => Ok(slope * x),
        DriftSpec::Sine => Ok(libm::sin(x)),
        DriftSpec::Tabulated(t) => t.eval(x),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LevyDensitySpec {
    /// φ(y) = exp(−y²)
    GaussianDecay,
    /// φ(y) = exp(−2|y|)
    ExponentialDecay,
    /// Tabulated over r ≥ 0; zero beyond the last node.
    Tabulated(UniformTable),
    /// φ ≡ 0, no jumps.
    Zero,
}

/// φ(|r|). Tabulated densities vanish outside their table.
pub fn eval_levy_density(spec: &LevyDensitySpec, r: f64) -> f64 {
    let y = libm::fabs(r);
    match spec {
        LevyDensitySpec::GaussianDecay => libm::exp(-y * y),
        LevyDensitySpec::ExponentialDecay => libm::exp(-2.0 * y),
        LevyDensitySpec::Tabulated(t) => t.eval(y).map(|v| v.max(0.0)).unwrap_or(0.0),
        LevyDensitySpec::Zero => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum JumpSampler {
    Normal { mean: f64, std: f64 },
    Laplace { location: f64, scale: f64 },
}

/// Compound-Poisson jump law: arrival intensity and jump-size distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct JumpLaw {
    pub rate: f64,
    pub sampler: JumpSampler,
}

impl JumpLaw {
    /// The law whose Lévy measure has density `spec`, for the two closed forms.
    pub fn for_density(spec: &LevyDensitySpec) -> Result<JumpLaw> {
        match spec {
            LevyDensitySpec::GaussianDecay => Ok(JumpLaw {
                rate: libm::sqrt(core::f64::consts::PI),
                sampler: JumpSampler::Normal {
                    mean: 0.0,
                    std: libm::sqrt(0.5),
                },
            }),
            LevyDensitySpec::ExponentialDecay => Ok(JumpLaw {
                rate: 1.0,
                sampler: JumpSampler::Laplace {
                    location: 0.0,
                    scale: 0.5,
                },
            }),
            LevyDensitySpec::Zero => Ok(JumpLaw::none()),
            LevyDensitySpec::Tabulated(_) => Err(Error::Config(
                "no closed-form jump law for a tabulated density".into(),
            )),
        }
    }

    pub fn none() -> JumpLaw {
        JumpLaw {
            rate: 0.0,
            sampler: JumpSampler::Normal {
                mean: 0.0,
                std: 1.0,
            },
        }
    }

    /// E[V²] of a single jump.
    pub fn second_moment(&self) -> f64 {
        match self.sampler {
            JumpSampler::Normal { mean, std } => mean * mean + std * std,
            JumpSampler::Laplace { location, scale } => location * location + 2.0 * scale * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_sampler = match self.sampler {
            JumpSampler::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            JumpSampler::Laplace { location, scale } => {
                location.is_finite() && scale.is_finite() && scale > 0.0
            }
        };
        if !(self.rate >= 0.0 && self.rate.is_finite()) || !ok_sampler {
            return Err(Error::Config("invalid jump law parameters".into()));
        }
        Ok(())
    }
}
