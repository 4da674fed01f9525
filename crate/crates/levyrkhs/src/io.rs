//! File formats: datasets (CSV + JSON sidecar), raw ensembles and assembled
//! systems (binary f64 + JSON shape manifests), estimates, traces and error tables.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use levyrkhs_core::assembly::RegressionSystem;
use levyrkhs_core::dataset::{DataSource, DensityDataset};
use levyrkhs_core::ensemble::EnsembleSamples;
use levyrkhs_core::hyperselect::TraceRecord;
use levyrkhs_core::metrics::EstimateResult;
use levyrkhs_core::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> FormatError + '_ {
    move |source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest round-trip decimal form.
fn num(v: f64) -> String {
    format!("{v}")
}

fn parse_num(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| invalid(path, format!("not a number: {s:?}")))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| num(c[i])))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a CSV of numeric columns, checking the header.
fn read_columns(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let found: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(invalid(
            path,
            format!("expected columns {header:?}, found {found:?}"),
        ));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        for (col, field) in cols.iter_mut().zip(rec.iter()) {
            col.push(parse_num(path, field)?);
        }
    }
    Ok(cols)
}

/// Sidecar of a dataset CSV. The CSV holds one row per snapshot followed by
/// its companion row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: DataSource,
    pub x_min: f64,
    pub dx: f64,
    pub n_x: usize,
    pub n_snapshots: usize,
    pub obs_dt: f64,
    pub diff_dt: f64,
    pub layout: String,
}

const PAIRED: &str = "snapshot_companion_pairs";

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_dataset(csv_path: &Path, ds: &DensityDataset) -> Result<()> {
    let mut w = csv_writer(csv_path)?;
    let mut header = vec!["time".to_string()];
    header.extend(ds.x_grid().into_iter().map(num));
    w.write_record(&header).map_err(csv_err(csv_path))?;
    for ((t, p), next) in ds.times.iter().zip(&ds.snapshots).zip(&ds.companions) {
        for (time, row) in [(*t, p), (t + ds.diff_dt, next)] {
            w.write_record(std::iter::once(num(time)).chain(row.iter().map(|v| num(*v))))
                .map_err(csv_err(csv_path))?;
        }
    }
    w.flush().map_err(io_err(csv_path))?;
    let meta = DatasetMeta {
        source: ds.source,
        x_min: ds.x_min,
        dx: ds.dx,
        n_x: ds.n_x,
        n_snapshots: ds.n_snapshots(),
        obs_dt: ds.obs_dt,
        diff_dt: ds.diff_dt,
        layout: PAIRED.into(),
    };
    write_json(&sidecar_path(csv_path), &meta)
}

pub fn read_dataset(csv_path: &Path) -> Result<DensityDataset> {
    let meta: DatasetMeta = read_json(&sidecar_path(csv_path))?;
    if meta.layout != PAIRED {
        return Err(invalid(
            csv_path,
            format!("unknown layout {:?}", meta.layout),
        ));
    }
    let mut r = csv::Reader::from_path(csv_path).map_err(csv_err(csv_path))?;
    let header = r.headers().map_err(csv_err(csv_path))?.clone();
    if header.len() != meta.n_x + 1 || &header[0] != "time" {
        return Err(invalid(
            csv_path,
            format!("expected a time column and {} grid columns", meta.n_x),
        ));
    }
    for (j, h) in header.iter().skip(1).enumerate() {
        let x = parse_num(csv_path, h)?;
        if (x - (meta.x_min + meta.dx * j as f64)).abs() > 1e-9 * meta.dx.max(1.0) {
            return Err(invalid(
                csv_path,
                format!("grid column {j} is {x}, sidecar disagrees"),
            ));
        }
    }
    let (mut times, mut snapshots, mut companions) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(csv_path))?;
        let vals = rec
            .iter()
            .map(|f| parse_num(csv_path, f))
            .collect::<Result<Vec<_>>>()?;
        if i % 2 == 0 {
            times.push(vals[0]);
            snapshots.push(vals[1..].to_vec());
        } else {
            companions.push(vals[1..].to_vec());
        }
    }
    if snapshots.len() != meta.n_snapshots || companions.len() != meta.n_snapshots {
        return Err(invalid(
            csv_path,
            format!("expected {} snapshot/companion pairs", meta.n_snapshots),
        ));
    }
    let ds = DensityDataset {
        x_min: meta.x_min,
        dx: meta.dx,
        n_x: meta.n_x,
        times,
        obs_dt: meta.obs_dt,
        diff_dt: meta.diff_dt,
        snapshots,
        companions,
        source: meta.source,
    };
    ds.validate()
        .map_err(|e| invalid(csv_path, e.to_string()))?;
    Ok(ds)
}

/// Shape manifest of a binary matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
}

impl MatrixMeta {
    fn row_major(rows: usize, cols: usize) -> Self {
        MatrixMeta {
            rows,
            cols,
            dtype: "f64".into(),
            byte_order: "little".into(),
            layout: "row-major".into(),
        }
    }
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(invalid(
            path,
            format!(
                "expected {} values, file holds {} bytes",
                expected,
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `<stem>.bin` and `<stem>.json` in `dir`.
pub fn write_matrix(dir: &Path, stem: &str, m: &DMatrix<f64>) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    write_f64s(
        &bin,
        (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()),
    )?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &MatrixMeta::row_major(m.nrows(), m.ncols()),
    )
}

pub fn read_matrix(dir: &Path, stem: &str) -> Result<DMatrix<f64>> {
    let meta_path = dir.join(format!("{stem}.json"));
    let meta: MatrixMeta = read_json(&meta_path)?;
    if meta != MatrixMeta::row_major(meta.rows, meta.cols) {
        return Err(invalid(
            &meta_path,
            "only little-endian row-major f64 is supported",
        ));
    }
    let data = read_f64s(&dir.join(format!("{stem}.bin")), meta.rows * meta.cols)?;
    Ok(DMatrix::from_row_slice(meta.rows, meta.cols, &data))
}

/// Raw ensemble paths, row-major [time][path], with a shape manifest.
pub fn write_samples(dir: &Path, stem: &str, s: &EnsembleSamples) -> Result<()> {
    write_f64s(&dir.join(format!("{stem}.bin")), s.data.iter().copied())?;
    let mut meta = serde_json::to_value(MatrixMeta::row_major(s.n_times, s.n_paths)).unwrap();
    meta["dt"] = s.dt.into();
    meta["axes"] = serde_json::json!(["time", "path"]);
    write_json(&dir.join(format!("{stem}.json")), &meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMeta {
    pub dr: f64,
    pub z: f64,
    pub n_snapshots: usize,
    pub n_interior: usize,
    pub dropped: Vec<usize>,
}

/// System directory: `q`/`gbar` binaries, `f.csv`, `rho_hat.csv`, `r_grid.csv`, `system.json`.
pub fn write_system(dir: &Path, sys: &RegressionSystem) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_matrix(dir, "q", &sys.q)?;
    write_matrix(dir, "gbar", &sys.gbar)?;
    write_columns(&dir.join("f.csv"), &["f"], &[sys.f.as_slice()])?;
    write_columns(
        &dir.join("rho_hat.csv"),
        &["rho_hat"],
        &[sys.rho_hat.as_slice()],
    )?;
    write_columns(&dir.join("r_grid.csv"), &["r"], &[&sys.r_grid])?;
    let meta = SystemMeta {
        dr: sys.dr,
        z: sys.z,
        n_snapshots: sys.n_snapshots,
        n_interior: sys.n_interior,
        dropped: sys.dropped.clone(),
    };
    write_json(&dir.join("system.json"), &meta)
}

pub fn read_system(dir: &Path) -> Result<RegressionSystem> {
    let meta: SystemMeta = read_json(&dir.join("system.json"))?;
    let q = read_matrix(dir, "q")?;
    let gbar = read_matrix(dir, "gbar")?;
    let single = |name: &str, col: &str| -> Result<Vec<f64>> {
        Ok(read_columns(&dir.join(name), &[col])?.remove(0))
    };
    let f = single("f.csv", "f")?;
    let rho = single("rho_hat.csv", "rho_hat")?;
    let r_grid = single("r_grid.csv", "r")?;
    let n = r_grid.len();
    if q.ncols() != n
        || gbar.shape() != (n, n)
        || rho.len() != n
        || f.len() != q.nrows()
        || q.nrows() != meta.n_snapshots * meta.n_interior
    {
        return Err(invalid(dir, "system files disagree on their shapes"));
    }
    Ok(RegressionSystem {
        r_grid,
        dr: meta.dr,
        q,
        f: DVector::from_vec(f),
        rho_hat: DVector::from_vec(rho),
        z: meta.z,
        gbar,
        n_snapshots: meta.n_snapshots,
        n_interior: meta.n_interior,
        dropped: meta.dropped,
    })
}

/// Columns r, phi_hat, phi_true, rho_hat.
pub fn write_estimate(path: &Path, est: &EstimateResult, rho_hat: &DVector<f64>) -> Result<()> {
    write_columns(
        path,
        &["r", "phi_hat", "phi_true", "rho_hat"],
        &[
            &est.r_grid,
            est.phi_hat.as_slice(),
            est.phi_true.as_slice(),
            rho_hat.as_slice(),
        ],
    )
}

/// Columns k, gamma, loss, v, grad; header only for non-iterative methods.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "gamma", "loss", "v", "grad"])
        .map_err(csv_err(path))?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            num(r.gamma),
            num(r.loss),
            num(r.v),
            num(r.grad),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Relative errors as a method × mesh table; `None` cells stay empty.
pub fn write_error_table(
    path: &Path,
    meshes: &[f64],
    rows: &[(String, Vec<Option<f64>>)],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = std::iter::once("method".to_string())
        .chain(meshes.iter().map(|dx| format!("dx={}", num(*dx))));
    w.write_record(header).map_err(csv_err(path))?;
    for (name, cells) in rows {
        let rec = std::iter::once(name.clone())
            .chain(cells.iter().map(|c| c.map(num).unwrap_or_default()));
        w.write_record(rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
