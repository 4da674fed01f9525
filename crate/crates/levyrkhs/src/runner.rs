//! Experiment pipelines. Every run writes into `<outdir>/<experiment>/<run-id>/`,
//! where the run id is a hash of the resolved config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use levyrkhs_core::assembly::{assemble, split_train_valid, AssemblyOptions, RegressionSystem};
use levyrkhs_core::dataset::DensityDataset;
use levyrkhs_core::ensemble::{build_kde_dataset, simulate_ensemble};
use levyrkhs_core::fpe::solve_fpe;
use levyrkhs_core::hyperselect::{lambda_grid, select, Method, PenaltyNorm, Prepared, TraceRecord};
use levyrkhs_core::metrics::{convergence_slope, EstimateResult};
use levyrkhs_core::model::ProblemDomain;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{DataConfig, Experiment, LoadedConfig};
use crate::io;

pub struct RunOutcome {
    pub dir: PathBuf,
    pub run_id: String,
    pub manifest: Value,
}

/// First 12 hex digits of SHA-256 over the resolved config and tool version.
pub fn run_id(loaded: &LoadedConfig) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(serde_json::to_vec(&loaded.config).expect("config serializes"));
    h.finalize()
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn run(loaded: &LoadedConfig) -> Result<RunOutcome> {
    let cfg = &loaded.config;
    let id = run_id(loaded);
    let dir = cfg.outdir.join(cfg.experiment.name()).join(&id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    log::info!("{} -> {}", cfg.experiment.name(), dir.display());

    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut outputs = Vec::new();
    let results = match cfg.experiment {
        Experiment::FpeGenerate | Experiment::EnsembleGenerate => {
            generate(loaded, &dir, &mut outputs)?
        }
        Experiment::Assemble => assemble_only(loaded, &dir, &mut outputs)?,
        Experiment::Estimate => estimate_one(loaded, &dir, &mut outputs)?,
        Experiment::ConvergenceStudy => convergence_study(loaded, &dir, &mut outputs)?,
        Experiment::NormComparison => norm_comparison(loaded, &dir, &mut outputs)?,
    };
    outputs.sort();

    let manifest = json!({
        "tool": "levyrkhs",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "run_id": id,
        "seed": cfg.seed,
        "config_path": loaded.path.display().to_string(),
        "config": cfg,
        "started_at_unix": started,
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "outputs": outputs,
        "results": results,
    });
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        dir,
        run_id: id,
        manifest,
    })
}

fn rel(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).display().to_string()
}

/// Dataset for the configured source, plus generator notes for the manifest.
fn load_dataset(loaded: &LoadedConfig, domain: ProblemDomain) -> Result<(DensityDataset, Value)> {
    let model = &loaded.config.model;
    match &loaded.config.data {
        DataConfig::Fpe { .. } => {
            let fpe = loaded.fpe_config(domain)?;
            let ds = solve_fpe(&model.drift, &model.levy, &fpe)?;
            let notes = json!({
                "effective_dt": fpe.effective_dt(),
                "steps_per_snapshot": fpe.steps_per_snapshot(),
                "mass_range": mass_range(&ds),
            });
            Ok((ds, notes))
        }
        DataConfig::Ensemble { .. } => {
            let (ens, kde) = loaded.ensemble_config()?;
            let (ds, report) = build_kde_dataset(&ens, &kde)?;
            let min_raw = report
                .raw_masses
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let notes = json!({
                "bandwidth": report.bandwidth,
                "clamped_values": report.clamped,
                "min_unsmoothed_mass": min_raw,
                "mass_range": mass_range(&ds),
            });
            Ok((ds, notes))
        }
        DataConfig::Dataset { path } => {
            let p = loaded.resolve(path);
            let ds = io::read_dataset(&p)?;
            Ok((ds, json!({ "dataset": p.display().to_string() })))
        }
        DataConfig::System { .. } => bail!("a system directory holds no density data"),
    }
}

fn mass_range(ds: &DensityDataset) -> [f64; 2] {
    let m = ds.masses();
    [
        m.iter().copied().fold(f64::INFINITY, f64::min),
        m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ]
}

fn assembly_options(loaded: &LoadedConfig, ds: &DensityDataset) -> AssemblyOptions {
    match loaded.config.model.sigma {
        Some(sigma) => AssemblyOptions { sigma },
        None => AssemblyOptions::for_source(ds.source),
    }
}

fn build_system(
    loaded: &LoadedConfig,
    ds: &DensityDataset,
    domain: &ProblemDomain,
) -> Result<RegressionSystem> {
    let sys = assemble(
        ds,
        domain,
        &loaded.config.model.drift,
        assembly_options(loaded, ds),
    )?;
    if !sys.dropped.is_empty() {
        log::warn!(
            "dropped r-grid indices {:?} with zero exploration weight",
            sys.dropped
        );
    }
    Ok(sys)
}

fn system(loaded: &LoadedConfig) -> Result<(RegressionSystem, Value)> {
    if let DataConfig::System { path } = &loaded.config.data {
        let p = loaded.resolve(path);
        let sys = io::read_system(&p)?;
        return Ok((sys, json!({ "system": p.display().to_string() })));
    }
    let domain = loaded.config.model.domain()?;
    let (ds, notes) = load_dataset(loaded, domain)?;
    Ok((build_system(loaded, &ds, &domain)?, notes))
}

fn system_notes(sys: &RegressionSystem) -> Value {
    json!({
        "rows": sys.q.nrows(),
        "n": sys.n(),
        "n_snapshots": sys.n_snapshots,
        "n_interior": sys.n_interior,
        "z": sys.z,
        "dropped_r_indices": sys.dropped,
    })
}

fn generate(loaded: &LoadedConfig, dir: &Path, outputs: &mut Vec<String>) -> Result<Value> {
    let domain = loaded.config.model.domain()?;
    let (ds, notes) = load_dataset(loaded, domain)?;
    let path = dir.join("dataset.csv");
    io::write_dataset(&path, &ds)?;
    outputs.push(rel(dir, &path));
    outputs.push(rel(dir, &io::sidecar_path(&path)));
    if let DataConfig::Ensemble {
        write_samples: true,
        ..
    } = loaded.config.data
    {
        let (ens, _) = loaded.ensemble_config()?;
        let samples = simulate_ensemble(&ens)?;
        io::write_samples(dir, "samples", &samples)?;
        outputs.extend(["samples.bin".to_string(), "samples.json".to_string()]);
    }
    Ok(
        json!({ "n_snapshots": ds.n_snapshots(), "n_x": ds.n_x, "diff_dt": ds.diff_dt, "generator": notes }),
    )
}

fn assemble_only(loaded: &LoadedConfig, dir: &Path, outputs: &mut Vec<String>) -> Result<Value> {
    let (sys, notes) = system(loaded)?;
    let sys_dir = dir.join("system");
    io::write_system(&sys_dir, &sys)?;
    for f in [
        "q.bin",
        "q.json",
        "gbar.bin",
        "gbar.json",
        "f.csv",
        "rho_hat.csv",
        "r_grid.csv",
        "system.json",
    ] {
        outputs.push(rel(dir, &sys_dir.join(f)));
    }
    Ok(json!({ "system": system_notes(&sys), "data": notes }))
}

struct Estimate {
    result: EstimateResult,
    trace: Vec<TraceRecord>,
    notes: Value,
}

fn estimate(
    loaded: &LoadedConfig,
    sys: &RegressionSystem,
    method: Method,
    norm: PenaltyNorm,
) -> Result<Estimate> {
    let cfg = &loaded.config;
    let split = split_train_valid(sys, cfg.split.into())?;
    let prep = Prepared::new(&split, norm)?;
    let g = cfg.lambda_grid;
    let grid = lambda_grid(g.lo, g.hi, g.n);
    let choice = select(&prep, method, &cfg.bilevel, &grid)?;
    let result = EstimateResult::new(
        method.name(),
        norm.name(),
        &split.gbar,
        choice.c,
        choice.lambda,
        &split.r_grid,
        &split.rho_hat,
        split.dr,
        &cfg.model.levy,
        choice.loss,
    )?;
    let (trace, stop) = match choice.trace {
        Some(t) => (t.records, Some(format!("{:?}", t.stop))),
        None => (Vec::new(), None),
    };
    let notes = json!({
        "method": method.name(),
        "norm": norm.name(),
        "dx": sys.dr,
        "lambda": result.lambda,
        "log10_lambda": result.lambda.log10(),
        "rel_error": result.rel_error,
        "abs_error": result.abs_error,
        "validation_loss": result.loss,
        "iterations": trace.len(),
        "stop": stop,
        "rule": choice.rule.map(|r| format!("{r:?}")),
    });
    Ok(Estimate {
        result,
        trace,
        notes,
    })
}

fn write_estimate_files(
    dir: &Path,
    root: &Path,
    est: &Estimate,
    rho_hat: &levyrkhs_core::DVector<f64>,
    outputs: &mut Vec<String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (e, t) = (dir.join("estimate.csv"), dir.join("trace.csv"));
    io::write_estimate(&e, &est.result, rho_hat)?;
    io::write_trace(&t, &est.trace)?;
    outputs.push(rel(root, &e));
    outputs.push(rel(root, &t));
    Ok(())
}

fn row_name(method: Method, norm: PenaltyNorm) -> String {
    format!("{}-{}", norm.name(), method.name())
}

fn estimate_one(loaded: &LoadedConfig, dir: &Path, outputs: &mut Vec<String>) -> Result<Value> {
    let cfg = &loaded.config;
    let (sys, notes) = system(loaded)?;
    let est = estimate(loaded, &sys, cfg.method, cfg.norm)?;
    write_estimate_files(dir, dir, &est, &sys.rho_hat, outputs)?;
    let errors = dir.join("errors.csv");
    io::write_error_table(
        &errors,
        &[sys.dr],
        &[(
            row_name(cfg.method, cfg.norm),
            vec![Some(est.result.rel_error)],
        )],
    )?;
    outputs.push(rel(dir, &errors));
    Ok(json!({ "estimate": est.notes, "system": system_notes(&sys), "data": notes }))
}

/// Keeps every `stride`-th grid node.
fn subsample(ds: &DensityDataset, stride: usize) -> DensityDataset {
    let mut out = ds.clone();
    for row in out.snapshots.iter_mut().chain(out.companions.iter_mut()) {
        *row = row.iter().step_by(stride).copied().collect();
    }
    out.dx = ds.dx * stride as f64;
    out.n_x = out.snapshots[0].len();
    out
}

/// One generator solve at the solver mesh, observed on every configured mesh.
fn convergence_study(
    loaded: &LoadedConfig,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<Value> {
    let cfg = &loaded.config;
    let DataConfig::Fpe { solver_dx, .. } = cfg.data else {
        bail!("convergence study needs a Fokker-Planck generator");
    };
    let fine_domain = ProblemDomain::new(cfg.model.half_width, cfg.model.r0, solver_dx)?;
    let (fine, notes) = load_dataset(loaded, fine_domain)?;

    let runs: Vec<Result<(RegressionSystem, Estimate)>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .meshes
            .iter()
            .map(|&dx| {
                let fine = &fine;
                s.spawn(move || -> Result<(RegressionSystem, Estimate)> {
                    let stride = (dx / solver_dx).round() as usize;
                    let ds = subsample(fine, stride);
                    let domain = ProblemDomain::new(cfg.model.half_width, cfg.model.r0, dx)?;
                    let sys = build_system(loaded, &ds, &domain)?;
                    let est = estimate(loaded, &sys, cfg.method, cfg.norm)
                        .with_context(|| format!("mesh dx={dx}"))?;
                    Ok((sys, est))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("estimate thread panicked"))
            .collect()
    });

    let mut points = Vec::new();
    let mut per_mesh = Vec::new();
    for (&dx, run) in cfg.meshes.iter().zip(runs) {
        let (sys, est) = run?;
        write_estimate_files(
            &dir.join(format!("dx_{dx}")),
            dir,
            &est,
            &sys.rho_hat,
            outputs,
        )?;
        points.push((dx, est.result.rel_error));
        per_mesh.push(est.notes);
    }
    let slope = convergence_slope(&points)?;
    let errors = dir.join("errors.csv");
    let cells = points.iter().map(|p| Some(p.1)).collect();
    io::write_error_table(
        &errors,
        &cfg.meshes,
        &[(row_name(cfg.method, cfg.norm), cells)],
    )?;
    outputs.push(rel(dir, &errors));
    Ok(json!({ "slope": slope, "meshes": per_mesh, "generator": notes }))
}

fn norm_comparison(loaded: &LoadedConfig, dir: &Path, outputs: &mut Vec<String>) -> Result<Value> {
    let cfg = &loaded.config;
    let (sys, notes) = system(loaded)?;
    let runs: Vec<Result<Estimate>> = std::thread::scope(|s| {
        let handles: Vec<_> = PenaltyNorm::ALL
            .iter()
            .map(|&norm| {
                let sys = &sys;
                s.spawn(move || {
                    estimate(loaded, sys, cfg.method, norm)
                        .with_context(|| format!("norm {}", norm.name()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("estimate thread panicked"))
            .collect()
    });
    let mut rows = Vec::new();
    let mut per_norm = Vec::new();
    for (norm, run) in PenaltyNorm::ALL.iter().zip(runs) {
        let est = run?;
        write_estimate_files(&dir.join(norm.name()), dir, &est, &sys.rho_hat, outputs)?;
        rows.push((
            row_name(cfg.method, *norm),
            vec![Some(est.result.rel_error)],
        ));
        per_norm.push(est.notes);
    }
    let errors = dir.join("errors.csv");
    io::write_error_table(&errors, &[sys.dr], &rows)?;
    outputs.push(rel(dir, &errors));
    Ok(json!({ "norms": per_norm, "system": system_notes(&sys), "data": notes }))
}
