//! GSVD-based Tikhonov regularization.
//!
//! The pair (A, K) is decomposed as `A = U·diag(σ)·X⁺`, `K = V·diag(μ)·X⁺`
//! with σ² + μ² = 1, through a QR factorization of the stacked matrix
//! followed by a CS-style split of its orthogonal factor. The Tikhonov
//! minimizer of `‖Ac − f‖² + λ‖Kc‖²` is then
//! `c = X·diag(σ/(σ² + λμ²))·Uᵀf`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative cutoff for the singular values of the stacked pair.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Gsvd {
    /// m×p, orthonormal columns where σ > 0.
    pub u: DMatrix<f64>,
    /// k×p, orthonormal columns where μ > 0.
    pub v: DMatrix<f64>,
    /// n×p.
    pub x: DMatrix<f64>,
    /// p×n left inverse of `x`.
    pub x_pinv: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub mu: DVector<f64>,
}

impl Gsvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.nrows()
    }

    /// Per-component filter factors σ/(σ² + λμ²).
    pub fn filter(&self, lambda: f64) -> DVector<f64> {
        self.sigma.zip_map(&self.mu, |s, m| {
            let den = s * s + lambda * m * m;
            if den > 0.0 {
                s / den
            } else {
                0.0
            }
        })
    }
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Generalized SVD of the pair (A, K), both with `n` columns.
pub fn gsvd(a: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Gsvd> {
    let (m, n) = a.shape();
    let kr = k.nrows();
    if k.ncols() != n {
        return Err(Error::Size {
            expected: n,
            found: k.ncols(),
            what: "penalty matrix columns",
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::Decomposition("empty matrix pair".into()));
    }
    if m + kr < n {
        return Err(Error::Decomposition(format!(
            "stacked pair has {} rows for {n} columns",
            m + kr
        )));
    }
    let mut stacked = DMatrix::zeros(m + kr, n);
    stacked.rows_mut(0, m).copy_from(a);
    stacked.rows_mut(m, kr).copy_from(k);
    if !stacked.iter().all(|v| v.is_finite()) {
        return Err(Error::Decomposition("non-finite entries".into()));
    }

    let qr = stacked.qr();
    let q_full = qr.q();
    let r = qr.r();
    let svd_r = jacobi_svd(r)?;
    let s = &svd_r.s;
    let s_max = s.max();
    if !(s_max > 0.0) {
        return Err(Error::Decomposition(
            "matrix pair is numerically zero".into(),
        ));
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > RANK_TOL * s_max).collect();
    let p = keep.len();
    let p_p = svd_r.u.select_columns(&keep);
    let s_p = DVector::from_iterator(p, keep.iter().map(|&i| s[i]));
    let z_p = svd_r.v.select_columns(&keep);

    let qp = q_full * p_p;
    let q1 = qp.rows(0, m).into_owned();
    let q2 = qp.rows(m, kr).into_owned();

    // W (p×p), σ, and U from whichever block has enough rows for a full basis.
    let (u, w, sigma, mu, v);
    if m >= p {
        let qr1 = q1.clone().qr();
        let svd1 = jacobi_svd(qr1.r())?;
        let uu = qr1.q() * svd1.u;
        let ww = svd1.v;
        let sig = svd1.s;
        let q2w = &q2 * &ww;
        let mu_v = DVector::from_iterator(p, q2w.column_iter().map(|c| c.norm()));
        let vv = normalized_columns(&q2w, &mu_v);
        u = uu;
        w = ww;
        sigma = sig;
        mu = mu_v;
        v = vv;
    } else if kr >= p {
        let qr2 = q2.clone().qr();
        let svd2 = jacobi_svd(qr2.r())?;
        let vv = qr2.q() * svd2.u;
        let ww = svd2.v;
        let mu_v = svd2.s;
        let q1w = &q1 * &ww;
        let sig = DVector::from_iterator(p, q1w.column_iter().map(|c| c.norm()));
        u = normalized_columns(&q1w, &sig);
        w = ww;
        sigma = sig;
        mu = mu_v;
        v = vv;
    } else {
        return Err(Error::Decomposition(format!(
            "rank {p} exceeds both block heights ({m}, {kr})"
        )));
    }

    // Renormalize so σ² + μ² = 1 exactly, compensating in X.
    let nu = sigma.zip_map(&mu, |s, m| libm::sqrt(s * s + m * m));
    let sigma = sigma.component_div(&nu);
    let mu = mu.component_div(&nu);

    // X = Z_p·S_p⁻¹·W, X⁺ = Wᵀ·S_p·Z_pᵀ.
    let mut x = &z_p * DMatrix::from_diagonal(&s_p.map(|v| 1.0 / v)) * &w;
    let mut x_pinv = w.transpose() * DMatrix::from_diagonal(&s_p) * z_p.transpose();
    for i in 0..p {
        x.column_mut(i).scale_mut(1.0 / nu[i]);
        x_pinv.row_mut(i).scale_mut(nu[i]);
    }
    Ok(Gsvd {
        u,
        v,
        x,
        x_pinv,
        sigma,
        mu,
    })
}

struct Svd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

/// One-sided Jacobi SVD of a square matrix, singular values descending.
/// Columns of `u` belonging to zero singular values are zero.
///
/// Used for the small square factors of the GSVD: it delivers singular
/// vectors orthogonal to working precision, which the bidiagonal routine in
/// nalgebra 0.35 does not for some inputs with clustered singular values.
fn jacobi_svd(m: DMatrix<f64>) -> Result<Svd> {
    let n = m.ncols();
    let mut a = m;
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON;
    let mut converged = false;
    for _ in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (alpha, beta, gamma) = {
                    let ci = a.column(i);
                    let cj = a.column(j);
                    (ci.norm_squared(), cj.norm_squared(), ci.dot(&cj))
                };
                if gamma == 0.0 || libm::fabs(gamma) <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Decomposition("Jacobi SVD did not converge".into()));
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let s = DVector::from_iterator(n, order.iter().map(|&k| norms[k]));
    let mut u = a.select_columns(&order);
    for (k, mut col) in u.column_iter_mut().enumerate() {
        if s[k] > 0.0 {
            col.scale_mut(1.0 / s[k]);
        }
    }
    Ok(Svd {
        u,
        s,
        v: v.select_columns(&order),
    })
}

fn rotate(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let x = m[(r, i)];
        let y = m[(r, j)];
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

fn normalized_columns(m: &DMatrix<f64>, norms: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let tiny = f64::EPSILON * 16.0;
    for (i, mut col) in out.column_iter_mut().enumerate() {
        if norms[i] > tiny {
            col.scale_mut(1.0 / norms[i]);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Symmetric PSD square root. Eigenvalues below `1e-12·λ_max` are set to zero.
pub fn psd_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, nc) = g.shape();
    if n != nc {
        return Err(Error::Size {
            expected: n,
            found: nc,
            what: "square matrix columns",
        });
    }
    let scale = frob(g);
    if frob(&(g - g.transpose())) > 1e-10 * scale {
        return Err(Error::Domain("matrix is not symmetric".into()));
    }
    if scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Decomposition("eigendecomposition did not converge".into()))?;
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmax <= 0.0 || lmin < -1e-8 * lmax {
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            max_eigenvalue: lmax,
        });
    }
    let roots = eig
        .eigenvalues
        .map(|l| if l > 1e-12 * lmax { libm::sqrt(l) } else { 0.0 });
    let vecs = &eig.eigenvectors;
    let scaled = vecs * DMatrix::from_diagonal(&roots);
    let k = &scaled * vecs.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovSolution {
    pub c: DVector<f64>,
    pub lambda: f64,
    /// ‖Ac − f‖
    pub residual_norm: f64,
    /// ‖Kc‖
    pub penalty_norm: f64,
}

/// Tikhonov minimizer through the GSVD filter factors.
pub fn tikhonov_solve(fac: &Gsvd, f: &DVector<f64>, lambda: f64) -> Result<TikhonovSolution> {
    if f.len() != fac.n_rows() {
        return Err(Error::Size {
            expected: fac.n_rows(),
            found: f.len(),
            what: "right-hand side",
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "lambda={lambda} must be finite and nonnegative"
        )));
    }
    let utf = fac.u.tr_mul(f);
    Ok(solution_from_coords(fac, f, lambda, utf))
}

/// Same as [`tikhonov_solve`] with `Uᵀf` precomputed.
pub(crate) fn solution_from_coords(
    fac: &Gsvd,
    f: &DVector<f64>,
    lambda: f64,
    utf: DVector<f64>,
) -> TikhonovSolution {
    let y = fac.filter(lambda).component_mul(&utf);
    let c = &fac.x * &y;
    let fitted = &fac.u * y.component_mul(&fac.sigma);
    let residual_norm = (fitted - f).norm();
    let penalty_norm = y.component_mul(&fac.mu).norm();
    TikhonovSolution {
        c,
        lambda,
        residual_norm,
        penalty_norm,
    }
}

/// Regularized normal equations `(AᵀA + λKᵀK)c = Aᵀf` by Cholesky.
pub fn direct_solve(
    a: &DMatrix<f64>,
    k: &DMatrix<f64>,
    f: &DVector<f64>,
    lambda: f64,
) -> Result<TikhonovSolution> {
    if f.len() != a.nrows() {
        return Err(Error::Size {
            expected: a.nrows(),
            found: f.len(),
            what: "right-hand side",
        });
    }
    if k.ncols() != a.ncols() {
        return Err(Error::Size {
            expected: a.ncols(),
            found: k.ncols(),
            what: "penalty matrix columns",
        });
    }
    let normal = a.tr_mul(a) + k.tr_mul(k) * lambda;
    let rhs = a.tr_mul(f);
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Solve("regularized normal matrix is singular".into()))?;
    let c = chol.solve(&rhs);
    let residual_norm = (a * &c - f).norm();
    let penalty_norm = (k * &c).norm();
    Ok(TikhonovSolution {
        c,
        lambda,
        residual_norm,
        penalty_norm,
    })
}
