//! Choice of the regularization strength λ = 10^γ.
//!
//! [`Prepared`] holds the GSVD of the training pair (Ā_L, K) for one penalty
//! norm; every selector then works with cheap filter-factor evaluations.

mod baselines;
mod bilevel;

pub use baselines::{gcv_select, lambda_grid, lcurve_select, Selection, SelectionRule};
pub use bilevel::{
    bilevel_optimize, BilevelConfig, BilevelOutcome, BilevelTrace, StopReason, TraceRecord,
};

use core::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector};

use crate::assembly::SystemSplit;
use crate::regsolve::{gsvd, psd_sqrt, solution_from_coords, Gsvd, TikhonovSolution};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PenaltyNorm {
    /// cᵀḠc
    Rkhs,
    /// cᵀḠ·diag(Δr·ρ̂)·Ḡᵀc
    L2rho,
    /// cᵀc
    #[cfg_attr(feature = "serde", serde(rename = "l2"))]
    Euclidean,
}

impl PenaltyNorm {
    pub const ALL: [PenaltyNorm; 3] = [
        PenaltyNorm::Rkhs,
        PenaltyNorm::L2rho,
        PenaltyNorm::Euclidean,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyNorm::Rkhs => "rkhs",
            PenaltyNorm::L2rho => "l2rho",
            PenaltyNorm::Euclidean => "l2",
        }
    }

    /// PSD root K of the penalty quadratic, so that the penalty is ‖Kc‖².
    pub fn root(
        &self,
        gbar: &DMatrix<f64>,
        rho_hat: &DVector<f64>,
        dr: f64,
    ) -> Result<DMatrix<f64>> {
        let n = gbar.nrows();
        match self {
            PenaltyNorm::Rkhs => psd_sqrt(gbar),
            PenaltyNorm::L2rho => {
                let weights = rho_hat * dr;
                let mut gw = gbar.clone();
                for (j, mut col) in gw.column_iter_mut().enumerate() {
                    col.scale_mut(weights[j]);
                }
                let m = &gw * gbar.transpose();
                psd_sqrt(&((&m + m.transpose()) * 0.5))
            }
            PenaltyNorm::Euclidean => Ok(DMatrix::identity(n, n)),
        }
    }
}

/// A split together with the GSVD of its training pair.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub split: &'a SystemSplit,
    pub norm: PenaltyNorm,
    pub k: DMatrix<f64>,
    pub gsvd: Gsvd,
    utf: DVector<f64>,
    /// Ā_U·X
    valid_x: DMatrix<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(split: &'a SystemSplit, norm: PenaltyNorm) -> Result<Self> {
        let k = norm.root(&split.gbar, &split.rho_hat, split.dr)?;
        Self::with_root(split, norm, k)
    }

    /// Uses a caller-supplied penalty root.
    pub fn with_root(split: &'a SystemSplit, norm: PenaltyNorm, k: DMatrix<f64>) -> Result<Self> {
        let gsvd = gsvd(&split.train.a, &k)?;
        let utf = gsvd.u.tr_mul(&split.train.f);
        let valid_x = &split.valid.a * &gsvd.x;
        Ok(Prepared {
            split,
            norm,
            k,
            gsvd,
            utf,
            valid_x,
        })
    }

    pub fn n_train_rows(&self) -> usize {
        self.split.train.f.len()
    }

    /// Coordinates y(λ) = diag(σ/(σ² + λμ²))·Uᵀf_L, with c = X·y.
    fn coords(&self, lambda: f64) -> DVector<f64> {
        self.gsvd.filter(lambda).component_mul(&self.utf)
    }

    pub(crate) fn solve_lambda(&self, lambda: f64) -> TikhonovSolution {
        solution_from_coords(&self.gsvd, &self.split.train.f, lambda, self.utf.clone())
    }

    /// Validation loss F(γ) and dF/dγ, evaluated in GSVD coordinates.
    pub fn loss_and_grad(&self, gamma: f64) -> (f64, f64) {
        let lambda = libm::pow(10.0, gamma);
        let y = self.coords(lambda);
        let r = &self.valid_x * &y - &self.split.valid.f;
        let loss = r.norm_squared();
        // dy/dλ = −y·μ²/(σ² + λμ²)
        let dy = DVector::from_iterator(
            y.len(),
            (0..y.len()).map(|i| {
                let (s, m) = (self.gsvd.sigma[i], self.gsvd.mu[i]);
                let den = s * s + lambda * m * m;
                if den > 0.0 {
                    -y[i] * m * m / den
                } else {
                    0.0
                }
            }),
        );
        let grad = 2.0 * r.dot(&(&self.valid_x * dy)) * lambda * LN_10;
        (loss, grad)
    }
}

/// Lower-level solution c(γ) with λ = 10^γ.
pub fn lower_solve(prep: &Prepared<'_>, gamma: f64) -> Result<TikhonovSolution> {
    if !gamma.is_finite() {
        return Err(Error::Domain("gamma must be finite".into()));
    }
    Ok(prep.solve_lambda(libm::pow(10.0, gamma)))
}

/// Validation loss ‖Ā_U c − f_U‖².
pub fn upper_loss(split: &SystemSplit, c: &DVector<f64>) -> Result<f64> {
    if c.len() != split.valid.a.ncols() {
        return Err(Error::Size {
            expected: split.valid.a.ncols(),
            found: c.len(),
            what: "coefficients",
        });
    }
    Ok((&split.valid.a * c - &split.valid.f).norm_squared())
}

/// dF/dγ at `c = c(γ)` by the implicit-function formula
/// `−2·ln10·λ·(Ā_Uᵀ(Ā_U c − f_U))ᵀ·X·(Σ² + λM²)⁻¹·Xᵀ·KᵀK·c`.
pub fn hypergradient(prep: &Prepared<'_>, gamma: f64, c: &DVector<f64>) -> Result<f64> {
    let split = prep.split;
    if c.len() != prep.k.ncols() {
        return Err(Error::Size {
            expected: prep.k.ncols(),
            found: c.len(),
            what: "coefficients",
        });
    }
    let lambda = libm::pow(10.0, gamma);
    let g = split.valid.a.tr_mul(&(&split.valid.a * c - &split.valid.f));
    let xg = prep.gsvd.x.tr_mul(&g);
    let kc = &prep.k * c;
    let xkkc = prep.gsvd.x.tr_mul(&prep.k.tr_mul(&kc));
    let mut acc = 0.0;
    for i in 0..xg.len() {
        let (s, m) = (prep.gsvd.sigma[i], prep.gsvd.mu[i]);
        let den = s * s + lambda * m * m;
        if den > 0.0 {
            acc += xg[i] * xkkc[i] / den;
        }
    }
    Ok(-2.0 * LN_10 * lambda * acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Bilevel,
    Lcurve,
    Gcv,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bilevel => "bilevel",
            Method::Lcurve => "lcurve",
            Method::Gcv => "gcv",
        }
    }
}

/// Result of any selector.
#[derive(Debug, Clone)]
pub struct Choice {
    pub lambda: f64,
    pub c: DVector<f64>,
    /// Validation loss at `lambda`.
    pub loss: f64,
    pub trace: Option<BilevelTrace>,
    pub rule: Option<SelectionRule>,
}

/// Runs `method`; `grid` is only used by the baselines.
pub fn select(
    prep: &Prepared<'_>,
    method: Method,
    cfg: &BilevelConfig,
    grid: &[f64],
) -> Result<Choice> {
    match method {
        Method::Bilevel => {
            let out = bilevel_optimize(prep, cfg)?;
            Ok(Choice {
                lambda: out.lambda,
                c: out.c,
                loss: out.loss,
                trace: Some(out.trace),
                rule: None,
            })
        }
        Method::Lcurve | Method::Gcv => {
            let sel = if method == Method::Lcurve {
                lcurve_select(prep, grid)?
            } else {
                gcv_select(prep, grid)?
            };
            let loss = upper_loss(prep.split, &sel.c)?;
            Ok(Choice {
                lambda: sel.lambda,
                c: sel.c,
                loss,
                trace: None,
                rule: Some(sel.rule),
            })
        }
    }
}
