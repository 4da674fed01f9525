//! L-curve and generalized cross-validation over a λ grid.

use alloc::vec::Vec;

use nalgebra::DVector;

use super::Prepared;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    LCurve,
    Gcv,
    /// L-curve was degenerate; GCV picked λ instead.
    GcvFallback,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub lambda: f64,
    pub index: usize,
    pub c: DVector<f64>,
    pub rule: SelectionRule,
}

/// `n` log-spaced values from 10^lo to 10^hi.
pub fn lambda_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![libm::pow(10.0, lo)];
    }
    (0..n)
        .map(|i| libm::pow(10.0, lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::Domain("lambda grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("lambda grid must be increasing".into()));
    }
    Ok(())
}

fn selected(prep: &Prepared<'_>, grid: &[f64], index: usize, rule: SelectionRule) -> Selection {
    let sol = prep.solve_lambda(grid[index]);
    Selection {
        lambda: grid[index],
        index,
        c: sol.c,
        rule,
    }
}

/// Signed curvature of the parametric curve (x(t), y(t)) at interior points
/// of a uniform t-grid, by three-point differences.
pub(crate) fn curvature(x: &[f64], y: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = alloc::vec![f64::NAN; n];
    for i in 1..n.saturating_sub(1) {
        let x1 = (x[i + 1] - x[i - 1]) / (2.0 * dt);
        let y1 = (y[i + 1] - y[i - 1]) / (2.0 * dt);
        let x2 = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / (dt * dt);
        let y2 = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (dt * dt);
        let speed = x1 * x1 + y1 * y1;
        if speed > 1e-300 {
            out[i] = (x1 * y2 - x2 * y1) / libm::pow(speed, 1.5);
        }
    }
    out
}

/// Corner of the curve (log ‖Ā_L c − f_L‖, log ‖Kc‖) on the training block.
pub fn lcurve_select(prep: &Prepared<'_>, grid: &[f64]) -> Result<Selection> {
    check_grid(grid)?;
    if grid.len() == 1 {
        return Ok(selected(prep, grid, 0, SelectionRule::LCurve));
    }
    let floor = f64::MIN_POSITIVE;
    let (mut xs, mut ys) = (
        Vec::with_capacity(grid.len()),
        Vec::with_capacity(grid.len()),
    );
    for &l in grid {
        let s = prep.solve_lambda(l);
        xs.push(libm::log(s.residual_norm.max(floor)));
        ys.push(libm::log(s.penalty_norm.max(floor)));
    }
    // Uniform spacing in log λ is assumed by the difference quotients.
    let dt = if grid.len() > 1 {
        libm::log(grid[1] / grid[0])
    } else {
        1.0
    };
    let kappa = curvature(&xs, &ys, dt);
    let span = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, &k) in kappa.iter().enumerate() {
        if k.is_finite() && best.map_or(true, |(_, b)| k >= b) {
            best = Some((i, k));
        }
    }
    let flat = span(&xs) < 1e-8 && span(&ys) < 1e-8;
    match best {
        Some((i, k)) if k > 0.0 && !flat => Ok(selected(prep, grid, i, SelectionRule::LCurve)),
        _ => {
            log::warn!("L-curve has no corner on the grid; falling back to GCV");
            let mut s = gcv_select(prep, grid)?;
            s.rule = SelectionRule::GcvFallback;
            Ok(s)
        }
    }
}

/// GCV function `‖Ā_L c − f_L‖² / (m − Σ σ²/(σ² + λμ²))²` on the grid.
pub fn gcv_values(prep: &Prepared<'_>, grid: &[f64]) -> Vec<Option<f64>> {
    let m = prep.n_train_rows() as f64;
    let g = &prep.gsvd;
    grid.iter()
        .map(|&l| {
            let trace: f64 = g
                .sigma
                .iter()
                .zip(g.mu.iter())
                .map(|(s, mu)| {
                    let den = s * s + l * mu * mu;
                    if den > 0.0 {
                        s * s / den
                    } else {
                        0.0
                    }
                })
                .sum();
            let den = m - trace;
            if den <= 0.0 {
                return None;
            }
            let r = prep.solve_lambda(l).residual_norm;
            Some(r * r / (den * den))
        })
        .collect()
}

pub fn gcv_select(prep: &Prepared<'_>, grid: &[f64]) -> Result<Selection> {
    check_grid(grid)?;
    let vals = gcv_values(prep, grid);
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vals.iter().enumerate() {
        if let Some(v) = v {
            if best.map_or(true, |(_, b)| *v <= b) {
                best = Some((i, *v));
            }
        }
    }
    match best {
        Some((i, _)) => Ok(selected(prep, grid, i, SelectionRule::Gcv)),
        None => Err(Error::Solve(
            "GCV denominator vanishes on the whole grid".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_split;
    use super::super::PenaltyNorm;
    use super::*;
    use crate::assembly::SystemSplit;
    use nalgebra::DMatrix;

    #[test]
    fn grid_shape() {
        let g = lambda_grid(-12.0, 2.0, 141);
        assert_eq!(g.len(), 141);
        assert!((g[0] - 1e-12).abs() < 1e-24);
        assert!((g[140] - 100.0).abs() < 1e-10);
        assert!((g[10] / g[9] - libm::pow(10.0, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid() {
        let split = random_split(30, 10, 4);
        let prep = Prepared::new(&split, PenaltyNorm::Rkhs).unwrap();
        assert_eq!(lcurve_select(&prep, &[0.1]).unwrap().lambda, 0.1);
        assert_eq!(gcv_select(&prep, &[0.1]).unwrap().lambda, 0.1);
        assert!(gcv_select(&prep, &[]).is_err());
    }

    #[test]
    fn gcv_picks_smallest_lambda_without_noise() {
        let mut split = random_split(31, 20, 5);
        let truth = DVector::from_fn(5, |i, _| 1.0 + i as f64);
        split.train.f = &split.train.a * &truth;
        let prep = Prepared::new(&split, PenaltyNorm::Rkhs).unwrap();
        let grid = lambda_grid(-12.0, 2.0, 141);
        assert_eq!(gcv_select(&prep, &grid).unwrap().index, 0);
    }

    #[test]
    fn curvature_of_circle() {
        // Counter-clockwise circle of radius 2 has curvature 1/2.
        let n = 200;
        let dt = 0.01;
        let x: Vec<f64> = (0..n).map(|i| 2.0 * libm::cos(i as f64 * dt)).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * libm::sin(i as f64 * dt)).collect();
        let k = curvature(&x, &y, dt);
        assert!(k[0].is_nan());
        for v in &k[1..n - 1] {
            assert!((v - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn lcurve_returns_interior_curvature_peak() {
        // Diagonal problem whose L-curve corner sits at a known interior λ:
        // compare against the curvature maximum computed independently.
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                libm::pow(10.0, -(i as f64) * 0.5)
            } else {
                0.0
            }
        });
        let f = DVector::from_fn(n, |i, _| {
            libm::pow(10.0, -(i as f64) * 0.5) + 1e-3 * if i % 2 == 0 { 1.0 } else { -1.0 }
        });
        let split = SystemSplit::from_blocks(
            a.clone(),
            f.clone(),
            a,
            f.clone(),
            DMatrix::identity(n, n),
            DVector::from_element(n, 1.0 / n as f64),
            1.0,
        )
        .unwrap();
        let prep = Prepared::new(&split, PenaltyNorm::Euclidean).unwrap();
        let grid = lambda_grid(-12.0, 2.0, 141);
        let sel = lcurve_select(&prep, &grid).unwrap();
        assert_eq!(sel.rule, SelectionRule::LCurve);
        assert!(sel.index > 0 && sel.index < 140);
        // Independent evaluation: ridge on a diagonal matrix in closed form.
        let d: Vec<f64> = (0..n).map(|i| libm::pow(10.0, -(i as f64) * 0.5)).collect();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &l in &grid {
            let (mut r2, mut c2) = (0.0, 0.0);
            for i in 0..n {
                let c = d[i] * f[i] / (d[i] * d[i] + l);
                r2 += (d[i] * c - f[i]).powi(2);
                c2 += c * c;
            }
            xs.push(0.5 * libm::log(r2));
            ys.push(0.5 * libm::log(c2));
        }
        let k = curvature(&xs, &ys, libm::log(grid[1] / grid[0]));
        let mut arg = 0;
        for i in 1..k.len() - 1 {
            if k[i] >= k[arg] || k[arg].is_nan() {
                arg = i;
            }
        }
        assert_eq!(sel.index, arg);
    }

    #[test]
    fn flat_curve_falls_back_to_gcv() {
        // Zero data: residual and penalty are constant in λ.
        let mut split = random_split(32, 10, 3);
        split.train.f.fill(0.0);
        let prep = Prepared::new(&split, PenaltyNorm::Rkhs).unwrap();
        let grid = lambda_grid(-6.0, 0.0, 13);
        let sel = lcurve_select(&prep, &grid).unwrap();
        assert_eq!(sel.rule, SelectionRule::GcvFallback);
    }
}
