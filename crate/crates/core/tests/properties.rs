use levyrkhs_core::assembly::{assemble, build_q_raw, AssemblyOptions};
use levyrkhs_core::dataset::{DataSource, DensityDataset};
use levyrkhs_core::model::{DriftSpec, ProblemDomain};
use levyrkhs_core::regsolve::{gsvd, tikhonov_solve};
use levyrkhs_core::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(rows: Vec<Vec<f64>>, dx: f64) -> DensityDataset {
    let n = rows.len() / 2;
    let (snapshots, companions) = (rows[..n].to_vec(), rows[n..2 * n].to_vec());
    DensityDataset {
        x_min: -2.0,
        dx,
        n_x: snapshots[0].len(),
        times: (0..n).map(|i| i as f64).collect(),
        obs_dt: 1.0,
        diff_dt: 0.1,
        snapshots,
        companions,
        source: DataSource::Fpe,
    }
}

fn domain() -> ProblemDomain {
    ProblemDomain::new(2.0, 0.5, 0.25).unwrap()
}

// 17 nodes on [−2, 2] at dx = 0.25.
fn rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4)
        .prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0f64..1.0, 17), 2 * n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rho_hat_normalized(rows in rows()) {
        let sys = assemble(&dataset(rows, 0.25), &domain(), &DriftSpec::Sine, AssemblyOptions::default()).unwrap();
        prop_assert!((sys.rho_hat.sum() * sys.dr - 1.0).abs() < 1e-12);
        prop_assert!(sys.gbar.clone().symmetric_eigenvalues().min() >= -1e-10 * sys.gbar.norm());
    }

    #[test]
    fn affine_snapshots_vanish(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let row: Vec<f64> = (0..17).map(|j| a + b * (-2.0 + 0.25 * j as f64)).collect();
        let q = build_q_raw(&dataset(vec![row.clone(), row], 0.25), &domain()).unwrap();
        prop_assert!(q.amax() < 1e-12 * (a.abs() + b.abs() + 1.0));
    }

    #[test]
    fn tikhonov_residual_grows_with_lambda(seed in 0u64..1000, l in -4.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || rng.random_range(-0.5f64..0.5);
        let a = DMatrix::from_fn(8, 5, |_, _| next());
        let k = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 + next().abs() } else { 0.0 });
        let f = DVector::from_fn(8, |_, _| next());
        let g = gsvd(&a, &k).unwrap();
        let lo = tikhonov_solve(&g, &f, 10f64.powf(l)).unwrap();
        let hi = tikhonov_solve(&g, &f, 10f64.powf(l + 0.5)).unwrap();
        prop_assert!(hi.residual_norm >= lo.residual_norm - 1e-12);
        prop_assert!(hi.penalty_norm <= lo.penalty_norm + 1e-12);
    }
}
