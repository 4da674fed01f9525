//! Density snapshots on a uniform spatial grid.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DataSource {
    Fpe,
    Kde,
}

/// Snapshots `p(x_j, t_i)` together with one companion row per snapshot
/// at `t_i + diff_dt`, used for the forward time difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityDataset {
    pub x_min: f64,
    pub dx: f64,
    pub n_x: usize,
    /// Snapshot times t_0 < t_1 < ... (uniform spacing `obs_dt`).
    pub times: Vec<f64>,
    pub obs_dt: f64,
    /// Offset of each companion row from its snapshot.
    pub diff_dt: f64,
    pub snapshots: Vec<Vec<f64>>,
    pub companions: Vec<Vec<f64>>,
    pub source: DataSource,
}

impl DensityDataset {
    pub fn n_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn x(&self, j: usize) -> f64 {
        crate::grid_point(self.x_min, self.dx, j)
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x(j)).collect()
    }

    /// Rectangle-rule mass of every snapshot.
    pub fn masses(&self) -> Vec<f64> {
        self.snapshots
            .iter()
            .map(|row| row.iter().sum::<f64>() * self.dx)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || self.n_x < 3 {
            return Err(Error::Config(
                "dataset grid must have positive spacing and 3+ nodes".into(),
            ));
        }
        if self.snapshots.is_empty() || self.times.len() != self.snapshots.len() {
            return Err(Error::Size {
                expected: self.times.len(),
                found: self.snapshots.len(),
                what: "snapshot rows",
            });
        }
        if self.companions.len() != self.snapshots.len() {
            return Err(Error::Config(format!(
                "dataset has {} companion rows for {} snapshots",
                self.companions.len(),
                self.snapshots.len()
            )));
        }
        if !(self.diff_dt > 0.0) {
            return Err(Error::Config("companion offset must be positive".into()));
        }
        for row in self.snapshots.iter().chain(self.companions.iter()) {
            if row.len() != self.n_x {
                return Err(Error::Size {
                    expected: self.n_x,
                    found: row.len(),
                    what: "snapshot row",
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("dataset contains non-finite values".into()));
            }
        }
        for w in self.times.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) || libm::fabs(gap - self.obs_dt) > 1e-9 * self.obs_dt.max(1.0) {
                return Err(Error::Config(
                    "snapshot times must be uniformly spaced".into(),
                ));
            }
        }
        Ok(())
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> DensityDataset {
        let mut out = self.clone();
        for row in out.snapshots.iter_mut().chain(out.companions.iter_mut()) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        out
    }
}
