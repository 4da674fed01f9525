//! Regression system for the jump density.
//!
//! Rows are indexed by (snapshot i, interior node j), columns by the jump
//! sizes r_k = k·dx. The target is the part of the density evolution not
//! explained by drift and diffusion,
//! `f̃ = ∂ₜp + ∂ₓ(b p) − ½σ² ∂ₓₓp`, which should equal `Σₖ φ(r_k) Q[p](x, r_k) Δr`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dataset::DensityDataset;
use crate::model::{eval_drift, DriftSpec, ProblemDomain};
use crate::{Error, Result};

/// Index range of the interior nodes x_j ∈ [−L+R0, L−R0] on the dataset grid.
pub fn interior_range(ds: &DensityDataset, domain: &ProblemDomain) -> Result<(usize, usize)> {
    let a = domain.interior_half_width();
    let tol = 1e-9;
    let lo = libm::ceil((-a - ds.x_min) / ds.dx - tol);
    let hi = libm::floor((a - ds.x_min) / ds.dx + tol);
    let n_r = domain.n_r() as f64;
    if lo < n_r || hi + n_r > (ds.n_x - 1) as f64 || hi < lo + 3.0 {
        return Err(Error::Config(format!(
            "dataset grid [{}, {}] does not cover the interior region and its jump reach",
            ds.x_min,
            ds.x(ds.n_x - 1)
        )));
    }
    Ok((lo as usize, hi as usize))
}

fn check_grid(ds: &DensityDataset, domain: &ProblemDomain) -> Result<()> {
    ds.validate()?;
    domain.validate()?;
    if libm::fabs(ds.dx - domain.dx) > 1e-12 * domain.dx {
        return Err(Error::Config(format!(
            "dataset spacing {} differs from the observation mesh {}",
            ds.dx, domain.dx
        )));
    }
    Ok(())
}

/// f̃ at the interior nodes, one row per snapshot. The spatial derivatives are
/// central except at the two interior endpoints, which use second-order
/// one-sided stencils pointing into the interior.
pub fn compute_f_tilde(
    ds: &DensityDataset,
    domain: &ProblemDomain,
    drift: &DriftSpec,
    sigma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_grid(ds, domain)?;
    let (lo, hi) = interior_range(ds, domain)?;
    let h = ds.dx;
    let b = (0..ds.n_x)
        .map(|j| eval_drift(drift, ds.x(j)))
        .collect::<Result<Vec<_>>>()?;
    let half_s2 = 0.5 * sigma * sigma;
    let mut out = Vec::with_capacity(ds.n_snapshots());
    let mut bp = alloc::vec![0.0; ds.n_x];
    for (p, next) in ds.snapshots.iter().zip(&ds.companions) {
        for ((o, bj), pj) in bp.iter_mut().zip(&b).zip(p) {
            *o = bj * pj;
        }
        let mut row = Vec::with_capacity(hi - lo + 1);
        for j in lo..=hi {
            let dt = (next[j] - p[j]) / ds.diff_dt;
            let (d1, d2) = if j == lo {
                (
                    (-3.0 * bp[j] + 4.0 * bp[j + 1] - bp[j + 2]) / (2.0 * h),
                    (2.0 * p[j] - 5.0 * p[j + 1] + 4.0 * p[j + 2] - p[j + 3]) / (h * h),
                )
            } else if j == hi {
                (
                    (3.0 * bp[j] - 4.0 * bp[j - 1] + bp[j - 2]) / (2.0 * h),
                    (2.0 * p[j] - 5.0 * p[j - 1] + 4.0 * p[j - 2] - p[j - 3]) / (h * h),
                )
            } else {
                (
                    (bp[j + 1] - bp[j - 1]) / (2.0 * h),
                    (p[j + 1] - 2.0 * p[j] + p[j - 1]) / (h * h),
                )
            };
            row.push(dt + d1 - half_s2 * d2);
        }
        out.push(row);
    }
    Ok(out)
}

/// Raw second differences `p(x_j + r_k) + p(x_j − r_k) − 2p(x_j)`,
/// rows (i, j) in snapshot-major order, columns k = 1..n.
pub fn build_q_raw(ds: &DensityDataset, domain: &ProblemDomain) -> Result<DMatrix<f64>> {
    check_grid(ds, domain)?;
    let (lo, hi) = interior_range(ds, domain)?;
    let m = hi - lo + 1;
    let n = domain.n_r();
    let rows = ds.n_snapshots() * m;
    let mut q = DMatrix::zeros(rows, n);
    for (i, p) in ds.snapshots.iter().enumerate() {
        for k in 1..=n {
            let mut col = q.column_mut(k - 1);
            for j in lo..=hi {
                col[i * m + (j - lo)] = p[j + k] + p[j - k] - 2.0 * p[j];
            }
        }
    }
    Ok(q)
}

/// ρ̂(r_k) ∝ Σ_{i,j} |Q_raw|, normalized to Σ ρ̂·Δx = 1. Returns (ρ̂, Z).
pub fn build_rho_hat(
    q_raw: &DMatrix<f64>,
    dx: f64,
    n_snapshots: usize,
) -> Result<(DVector<f64>, f64)> {
    let sums = DVector::from_iterator(
        q_raw.ncols(),
        q_raw
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>()),
    );
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Assembly(
            "data explores nothing: all second differences vanish".into(),
        ));
    }
    let z = total * dx * dx / n_snapshots as f64;
    let rho = sums / (total * dx);
    Ok((rho, z))
}

/// G = QᵀQ and Ḡ(k, l) = G(k, l)/(ρ̂_k ρ̂_l) on the indices with ρ̂ > 0.
/// Returns (G, Ḡ, kept indices).
pub fn build_kernel(
    q: &DMatrix<f64>,
    rho_hat: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
    if q.ncols() != rho_hat.len() {
        return Err(Error::Size {
            expected: rho_hat.len(),
            found: q.ncols(),
            what: "Q columns",
        });
    }
    let keep: Vec<usize> = (0..rho_hat.len()).filter(|&k| rho_hat[k] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::Assembly(
            "exploration measure vanishes everywhere".into(),
        ));
    }
    if keep.len() < rho_hat.len() {
        log::warn!(
            "dropping {} r-grid points with zero exploration weight",
            rho_hat.len() - keep.len()
        );
    }
    let qk = if keep.len() == q.ncols() {
        q.clone()
    } else {
        q.select_columns(&keep)
    };
    let g = qk.tr_mul(&qk);
    let g = (&g + g.transpose()) * 0.5;
    let rho: Vec<f64> = keep.iter().map(|&k| rho_hat[k]).collect();
    let gbar = DMatrix::from_fn(keep.len(), keep.len(), |a, b| g[(a, b)] / (rho[a] * rho[b]));
    Ok((g, gbar, keep))
}

/// The assembled inverse problem.
#[derive(Debug, Clone)]
pub struct RegressionSystem {
    /// Jump sizes kept in the hypothesis space.
    pub r_grid: Vec<f64>,
    pub dr: f64,
    /// Scaled regression matrix, (N·M)×n, row `i·M + j`.
    pub q: DMatrix<f64>,
    pub f: DVector<f64>,
    pub rho_hat: DVector<f64>,
    pub z: f64,
    pub gbar: DMatrix<f64>,
    pub n_snapshots: usize,
    pub n_interior: usize,
    /// Original r-grid indices dropped for zero exploration weight.
    pub dropped: Vec<usize>,
}

impl RegressionSystem {
    pub fn n(&self) -> usize {
        self.r_grid.len()
    }

    pub fn row_index(&self, i: usize, j: usize) -> usize {
        i * self.n_interior + j
    }

    /// Ā = Q·Ḡ·Δr for any row block of Q.
    pub fn design(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        q * &self.gbar * self.dr
    }

    /// Rows of the given snapshots, in the given order.
    pub fn select_snapshots(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.n_interior;
        let rows: Vec<usize> = idx.iter().flat_map(|&i| (i * m)..((i + 1) * m)).collect();
        (self.q.select_rows(&rows), self.f.select_rows(&rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Diffusion coefficient in f̃ (1 for the Fokker–Planck data, 0 for pure-jump ensembles).
    pub sigma: f64,
}

impl AssemblyOptions {
    /// σ = 1 for Fokker–Planck data, σ = 0 for compound-Poisson ensembles.
    pub fn for_source(source: crate::dataset::DataSource) -> Self {
        match source {
            crate::dataset::DataSource::Fpe => AssemblyOptions { sigma: 1.0 },
            crate::dataset::DataSource::Kde => AssemblyOptions { sigma: 0.0 },
        }
    }
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { sigma: 1.0 }
    }
}

pub fn assemble(
    ds: &DensityDataset,
    domain: &ProblemDomain,
    drift: &DriftSpec,
    opts: AssemblyOptions,
) -> Result<RegressionSystem> {
    let f_tilde = compute_f_tilde(ds, domain, drift, opts.sigma)?;
    let q_raw = build_q_raw(ds, domain)?;
    let n_snap = ds.n_snapshots();
    let m = f_tilde[0].len();
    let (rho_full, z) = build_rho_hat(&q_raw, ds.dx, n_snap)?;
    let scale = libm::sqrt(ds.dx / n_snap as f64);
    let q = q_raw * scale;
    let (_, gbar, keep) = build_kernel(&q, &rho_full)?;
    let dropped: Vec<usize> = (0..rho_full.len()).filter(|k| !keep.contains(k)).collect();
    let q = if dropped.is_empty() {
        q
    } else {
        q.select_columns(&keep)
    };
    let f = DVector::from_iterator(n_snap * m, f_tilde.iter().flatten().map(|v| v * scale));
    let r_all = domain.r_grid();
    Ok(RegressionSystem {
        r_grid: keep.iter().map(|&k| r_all[k]).collect(),
        dr: ds.dx,
        q,
        f,
        rho_hat: rho_full.select_rows(&keep),
        z,
        gbar,
        n_snapshots: n_snap,
        n_interior: m,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    /// Even snapshot indices train, odd ones validate.
    #[default]
    Interleave,
    /// The first `n_train` snapshots train.
    Leading { n_train: usize },
}

#[derive(Debug, Clone)]
pub struct Block {
    pub snapshots: Vec<usize>,
    pub q: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Ā = Q·Ḡ·Δr.
    pub a: DMatrix<f64>,
}

/// Training and validation blocks sharing one hypothesis space (ρ̂, Ḡ).
#[derive(Debug, Clone)]
pub struct SystemSplit {
    pub train: Block,
    pub valid: Block,
    pub r_grid: Vec<f64>,
    pub dr: f64,
    pub rho_hat: DVector<f64>,
    pub gbar: DMatrix<f64>,
}

impl SystemSplit {
    pub fn n(&self) -> usize {
        self.r_grid.len()
    }

    /// Builds a split directly from design blocks, for problems that do not
    /// come from density data.
    pub fn from_blocks(
        a_train: DMatrix<f64>,
        f_train: DVector<f64>,
        a_valid: DMatrix<f64>,
        f_valid: DVector<f64>,
        gbar: DMatrix<f64>,
        rho_hat: DVector<f64>,
        dr: f64,
    ) -> Result<SystemSplit> {
        let n = gbar.nrows();
        if a_train.ncols() != n || a_valid.ncols() != n || rho_hat.len() != n {
            return Err(Error::Size {
                expected: n,
                found: a_train.ncols(),
                what: "block columns",
            });
        }
        if a_train.nrows() != f_train.len() || a_valid.nrows() != f_valid.len() {
            return Err(Error::Size {
                expected: a_train.nrows(),
                found: f_train.len(),
                what: "block rows",
            });
        }
        let block = |a: DMatrix<f64>, f: DVector<f64>| Block {
            snapshots: Vec::new(),
            q: DMatrix::zeros(0, n),
            f,
            a,
        };
        Ok(SystemSplit {
            train: block(a_train, f_train),
            valid: block(a_valid, f_valid),
            r_grid: (1..=n).map(|k| k as f64 * dr).collect(),
            dr,
            rho_hat,
            gbar,
        })
    }
}

pub fn split_train_valid(sys: &RegressionSystem, policy: SplitPolicy) -> Result<SystemSplit> {
    let n = sys.n_snapshots;
    if n < 2 {
        return Err(Error::Split(format!(
            "need at least two snapshots, found {n}"
        )));
    }
    let (train, valid): (Vec<usize>, Vec<usize>) = match policy {
        SplitPolicy::Interleave => (0..n).partition(|i| i % 2 == 0),
        SplitPolicy::Leading { n_train } => {
            if n_train == 0 || n_train >= n {
                return Err(Error::Split(format!(
                    "cannot train on {n_train} of {n} snapshots"
                )));
            }
            (0..n).partition(|&i| i < n_train)
        }
    };
    let block = |idx: Vec<usize>| {
        let (q, f) = sys.select_snapshots(&idx);
        let a = sys.design(&q);
        Block {
            snapshots: idx,
            q,
            f,
            a,
        }
    };
    Ok(SystemSplit {
        train: block(train),
        valid: block(valid),
        r_grid: sys.r_grid.clone(),
        dr: sys.dr,
        rho_hat: sys.rho_hat.clone(),
        gbar: sys.gbar.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DataSource;
    use alloc::vec;

    fn dataset(f: impl Fn(f64, f64) -> f64, dx: f64, n_snap: usize, dt: f64) -> DensityDataset {
        let n_x = (10.0 / dx).round() as usize + 1;
        let x = |j: usize| -5.0 + dx * j as f64;
        let row = |t: f64| (0..n_x).map(|j| f(x(j), t)).collect::<Vec<_>>();
        DensityDataset {
            x_min: -5.0,
            dx,
            n_x,
            times: (0..n_snap).map(|i| i as f64 * 0.1).collect(),
            obs_dt: 0.1,
            diff_dt: dt,
            snapshots: (0..n_snap).map(|i| row(i as f64 * 0.1)).collect(),
            companions: (0..n_snap).map(|i| row(i as f64 * 0.1 + dt)).collect(),
            source: DataSource::Fpe,
        }
    }

    fn domain(dx: f64) -> ProblemDomain {
        ProblemDomain::new(5.0, 2.0, dx).unwrap()
    }

    #[test]
    fn f_tilde_constant_density_linear_drift() {
        let ds = dataset(|_, _| 0.3, 0.05, 2, 0.01);
        let f =
            compute_f_tilde(&ds, &domain(0.05), &DriftSpec::Linear { slope: -0.5 }, 1.0).unwrap();
        assert_eq!(f[0].len(), 121);
        for v in f.iter().flatten() {
            assert!((v + 0.15).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn f_tilde_quadratic_diffusion() {
        let ds = dataset(|x, _| x * x, 0.05, 1, 0.01);
        let f = compute_f_tilde(&ds, &domain(0.05), &DriftSpec::ZERO, 1.0).unwrap();
        for v in &f[0] {
            assert!((v + 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn f_tilde_boundary_stencils_are_exact_on_low_degree() {
        // bp = x·(x + t) is quadratic and p'' of a cubic is linear, so every
        // stencil is exact.
        let ds = dataset(|x, t| x + t, 0.05, 1, 0.01);
        let f =
            compute_f_tilde(&ds, &domain(0.05), &DriftSpec::Linear { slope: 1.0 }, 1.0).unwrap();
        let m = f[0].len();
        for (idx, x) in [(0usize, -3.0f64), (m / 2, 0.0), (m - 1, 3.0)] {
            assert!((f[0][idx] - (1.0 + 2.0 * x)).abs() < 1e-9, "{}", f[0][idx]);
        }
        let ds = dataset(|x, t| x * x * x / 100.0 + t, 0.05, 1, 0.01);
        let f = compute_f_tilde(&ds, &domain(0.05), &DriftSpec::ZERO, 1.0).unwrap();
        for (idx, x) in [(0usize, -3.0f64), (m / 2, 0.0), (m - 1, 3.0)] {
            assert!((f[0][idx] - (1.0 - 0.03 * x)).abs() < 1e-9, "{}", f[0][idx]);
        }
    }

    #[test]
    fn missing_companions_rejected() {
        let mut ds = dataset(|_, _| 0.1, 0.05, 2, 0.01);
        ds.companions.clear();
        assert!(matches!(
            compute_f_tilde(&ds, &domain(0.05), &DriftSpec::ZERO, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn q_examples() {
        let ds = dataset(|x, _| 2.0 * x + 1.0, 0.05, 2, 0.01);
        let q = build_q_raw(&ds, &domain(0.05)).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-12));
        let ds = dataset(|x, _| x * x, 0.05, 2, 0.01);
        let q = build_q_raw(&ds, &domain(0.05)).unwrap();
        assert_eq!(q.ncols(), 40);
        for k in 0..40 {
            let r = (k + 1) as f64 * 0.05;
            for v in q.column(k).iter() {
                assert!((v - 2.0 * r * r).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rho_hat_examples() {
        let mut q = DMatrix::zeros(4, 3);
        q[(0, 1)] = 2.0;
        q[(3, 1)] = -1.0;
        let (rho, _) = build_rho_hat(&q, 0.1, 2).unwrap();
        assert_eq!((rho[0], rho[2]), (0.0, 0.0));
        assert!((rho[1] - 10.0).abs() < 1e-12);
        let q = DMatrix::from_element(5, 4, 0.7);
        let (rho, _) = build_rho_hat(&q, 0.5, 1).unwrap();
        for v in rho.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!(matches!(
            build_rho_hat(&DMatrix::zeros(3, 3), 0.1, 1),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn kernel_examples() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let rho = DVector::from_vec(vec![2.0, 0.5]);
        let (g, gbar, keep) = build_kernel(&q, &rho).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        assert_eq!(gbar, DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 4.0]));
        assert_eq!(keep, vec![0, 1]);

        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let rho = DVector::from_vec(vec![1.0, 4.0]);
        let (g, gbar, _) = build_kernel(&q, &rho).unwrap();
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(gbar[(1, 1)], 4.0 / 16.0);

        let rho = DVector::from_vec(vec![0.0, 4.0]);
        let (_, gbar, keep) = build_kernel(&q, &rho).unwrap();
        assert_eq!(keep, vec![1]);
        assert_eq!(gbar.shape(), (1, 1));
    }

    #[test]
    fn split_examples() {
        let ds = dataset(|x, t| libm::exp(-x * x * (1.0 + t)), 0.1, 4, 0.01);
        let sys = assemble(
            &ds,
            &domain(0.1),
            &DriftSpec::ZERO,
            AssemblyOptions::default(),
        )
        .unwrap();
        let s = split_train_valid(&sys, SplitPolicy::Interleave).unwrap();
        assert_eq!(s.train.snapshots, vec![0, 2]);
        assert_eq!(s.valid.snapshots, vec![1, 3]);
        let m = sys.n_interior;
        assert_eq!(s.train.q.rows(m, m), sys.q.rows(2 * m, m));
        let recomputed = &s.train.q * &sys.gbar * sys.dr;
        assert!((recomputed - &s.train.a).norm() <= 1e-12 * s.train.a.norm());

        let mut one = sys.clone();
        one.n_snapshots = 1;
        assert!(matches!(
            split_train_valid(&one, SplitPolicy::Interleave),
            Err(Error::Split(_))
        ));
        let s = split_train_valid(&sys, SplitPolicy::Leading { n_train: 3 }).unwrap();
        assert_eq!(s.valid.snapshots, vec![3]);
    }
}
