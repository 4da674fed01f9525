use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::Prepared;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BilevelConfig {
    /// Base learning rate; iteration k uses eta0/√k.
    pub eta0: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Added to |d| when normalizing the hypergradient.
    pub grad_eps: f64,
    pub window: usize,
    pub eps_gamma: f64,
    pub eps_loss: f64,
    pub gamma0: f64,
    pub v0: f64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            eta0: 0.004,
            momentum: 0.99,
            max_iters: 500,
            grad_eps: 1e-8,
            window: 20,
            eps_gamma: 1e-4,
            eps_loss: 1e-8,
            gamma0: 0.0,
            v0: 0.0,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eta0 > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.max_iters > 0
            && self.grad_eps > 0.0
            && self.window > 0
            && self.eps_gamma > 0.0
            && self.eps_loss > 0.0
            && self.gamma0.is_finite()
            && self.v0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid bilevel optimizer settings".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TraceRecord {
    pub k: usize,
    /// γ_k after the update.
    pub gamma: f64,
    /// F at the look-ahead point γ_{k−1} − ι·v_{k−1}.
    pub loss: f64,
    pub v: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StopReason {
    ConvergedWindow,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BilevelTrace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct BilevelOutcome {
    pub gamma: f64,
    pub lambda: f64,
    pub c: DVector<f64>,
    /// Validation loss at the final γ.
    pub loss: f64,
    pub trace: BilevelTrace,
}

fn window_converged(records: &[TraceRecord], w: usize, eps_g: f64, eps_f: f64) -> bool {
    let n = records.len();
    if n < w {
        return false;
    }
    let tail = &records[n - w..];
    if tail.iter().any(|r| !(r.v.abs() < eps_g)) {
        return false;
    }
    tail.windows(2)
        .all(|p| (p[1].loss - p[0].loss).abs() < eps_f)
}

/// Nesterov-accelerated descent on γ with a normalized hypergradient:
///
/// ```text
/// d_k     = F'(γ_{k−1} − ι·v_{k−1})
/// v_k     = ι·v_{k−1} + (η/√k)·d_k/(|d_k| + ε)
/// γ_k     = γ_{k−1} − v_k
/// ```
///
/// Stops once every step and every loss change in the trailing window is
/// below its threshold.
pub fn bilevel_optimize(prep: &Prepared<'_>, cfg: &BilevelConfig) -> Result<BilevelOutcome> {
    cfg.validate()?;
    let mut gamma = cfg.gamma0;
    let mut v = cfg.v0;
    let mut records = Vec::with_capacity(cfg.max_iters);
    let mut stop = StopReason::MaxIters;
    for k in 1..=cfg.max_iters {
        let eta = cfg.eta0 / libm::sqrt(k as f64);
        let look = gamma - cfg.momentum * v;
        let (loss, d) = prep.loss_and_grad(look);
        v = cfg.momentum * v + eta * d / (d.abs() + cfg.grad_eps);
        gamma -= v;
        records.push(TraceRecord {
            k,
            gamma,
            loss,
            v,
            grad: d,
        });
        if !(loss.is_finite() && gamma.is_finite() && d.is_finite()) {
            return Err(Error::Divergence {
                trace: Box::new(BilevelTrace { records, stop }),
            });
        }
        if window_converged(&records, cfg.window, cfg.eps_gamma, cfg.eps_loss) {
            stop = StopReason::ConvergedWindow;
            break;
        }
    }
    let sol = prep.solve_lambda(libm::pow(10.0, gamma));
    let (loss, _) = prep.loss_and_grad(gamma);
    Ok(BilevelOutcome {
        gamma,
        lambda: sol.lambda,
        c: sol.c,
        loss,
        trace: BilevelTrace { records, stop },
    })
}
