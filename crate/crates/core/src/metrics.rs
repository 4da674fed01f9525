//! Estimator evaluation and error metrics.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::model::{eval_levy_density, LevyDensitySpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: String,
    pub norm: String,
    pub c: DVector<f64>,
    pub lambda: f64,
    pub r_grid: Vec<f64>,
    pub phi_hat: DVector<f64>,
    pub phi_true: DVector<f64>,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Validation loss at the chosen λ.
    pub loss: f64,
}

impl EstimateResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: &str,
        norm: &str,
        gbar: &DMatrix<f64>,
        c: DVector<f64>,
        lambda: f64,
        r_grid: &[f64],
        rho_hat: &DVector<f64>,
        dr: f64,
        truth: &LevyDensitySpec,
        loss: f64,
    ) -> Result<Self> {
        let phi_hat = eval_phi(gbar, &c)?;
        let phi_true = DVector::from_iterator(
            r_grid.len(),
            r_grid.iter().map(|&r| eval_levy_density(truth, r)),
        );
        let (abs_error, rel_error) = l2rho_error(&phi_hat, &phi_true, rho_hat, dr)?;
        Ok(EstimateResult {
            method: method.into(),
            norm: norm.into(),
            c,
            lambda,
            r_grid: r_grid.to_vec(),
            phi_hat,
            phi_true,
            abs_error,
            rel_error,
            loss,
        })
    }
}

/// φ̂ = Ḡ·c on the r-grid.
pub fn eval_phi(gbar: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if gbar.ncols() != c.len() {
        return Err(Error::Size {
            expected: gbar.ncols(),
            found: c.len(),
            what: "coefficients",
        });
    }
    Ok(gbar * c)
}

/// (√Σ dr·ρ̂·(φ̂ − φ*)², that divided by √Σ dr·ρ̂·φ*²).
pub fn l2rho_error(
    phi_hat: &DVector<f64>,
    phi_true: &DVector<f64>,
    rho_hat: &DVector<f64>,
    dr: f64,
) -> Result<(f64, f64)> {
    let n = rho_hat.len();
    for (len, what) in [(phi_hat.len(), "estimate"), (phi_true.len(), "reference")] {
        if len != n {
            return Err(Error::Size {
                expected: n,
                found: len,
                what,
            });
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..n {
        let w = dr * rho_hat[k];
        let e = phi_hat[k] - phi_true[k];
        num += w * e * e;
        den += w * phi_true[k] * phi_true[k];
    }
    let abs = libm::sqrt(num);
    if !(den > 0.0) {
        return Err(Error::RelativeUndefined);
    }
    Ok((abs, abs / libm::sqrt(den)))
}

/// Least-squares slope of log(error) against log(dx).
pub fn convergence_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Size {
            expected: 3,
            found: points.len(),
            what: "convergence points",
        });
    }
    if points.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0)) {
        return Err(Error::Domain(
            "mesh sizes and errors must be positive".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| libm::log(p.0)).collect();
    let ys: Vec<f64> = points.iter().map(|p| libm::log(p.1)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("mesh sizes must not all coincide".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn eval_phi_examples() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let e1 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(eval_phi(&g, &e1).unwrap(), g.column(1).into_owned());
        assert_eq!(eval_phi(&g, &DVector::zeros(3)).unwrap(), DVector::zeros(3));
        let c = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let phi = eval_phi(&g, &c).unwrap();
        for r in 0..3 {
            let naive: f64 = (0..3).map(|k| c[k] * g[(k, r)]).sum();
            assert!((phi[r] - naive).abs() < 1e-15);
        }
        assert!(eval_phi(&g, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn l2rho_examples() {
        let truth = DVector::from_vec(vec![1.0, 0.5, 0.25]);
        let rho = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        assert_eq!(l2rho_error(&truth, &truth, &rho, 0.5).unwrap(), (0.0, 0.0));
        let (_, rel) = l2rho_error(&(&truth * 2.0), &truth, &rho, 0.5).unwrap();
        assert!((rel - 1.0).abs() < 1e-15);
        // Hand computation: errors (0.1, −0.2, 0), weights dr·ρ̂ = (0.1, 0.25, 0.15).
        let est = DVector::from_vec(vec![1.1, 0.3, 0.25]);
        let (abs, rel) = l2rho_error(&est, &truth, &rho, 0.5).unwrap();
        let num = 0.1 * 0.01 + 0.25 * 0.04;
        let den = 0.1 * 1.0 + 0.25 * 0.25 + 0.15 * 0.0625;
        assert!((abs - libm::sqrt(num)).abs() < 1e-15);
        assert!((rel - libm::sqrt(num / den)).abs() < 1e-15);
        // Scale invariance.
        let (_, rel3) = l2rho_error(&(&est * 3.0), &(&truth * 3.0), &rho, 0.5).unwrap();
        assert!((rel3 - rel).abs() < 1e-14);
        assert!(matches!(
            l2rho_error(&est, &DVector::zeros(3), &rho, 0.5),
            Err(Error::RelativeUndefined)
        ));
    }

    #[test]
    fn slope_examples() {
        let hs = [0.01, 0.02, 0.025, 0.05];
        let lin: Vec<(f64, f64)> = hs.iter().map(|&h| (h, h)).collect();
        assert!((convergence_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        let quad: Vec<(f64, f64)> = hs.iter().map(|&h| (h, h * h)).collect();
        assert!((convergence_slope(&quad).unwrap() - 2.0).abs() < 1e-12);
        assert!(convergence_slope(&lin[..2]).is_err());
        assert!(matches!(
            convergence_slope(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]),
            Err(Error::Domain(_))
        ));
    }
}
