//! Nonparametric estimation of a symmetric Lévy jump density from
//! probability-density data.
//!
//! The estimator recasts the jump part of a nonlocal Fokker–Planck equation,
//!
//! ```text
//! ∂ₜp + ∂ₓ(b p) − ½σ² ∂ₓₓp = ∫₀^R₀ φ(r) [p(x+r) + p(x−r) − 2p(x)] dr,
//! ```
//!
//! as a linear regression for φ. The regression is solved in a data-adaptive
//! RKHS whose reproducing kernel Ḡ is assembled from the data itself
//! ([`assembly`]), regularized by Tikhonov filtering through a generalized
//! singular value decomposition ([`regsolve`]), with the regularization
//! strength picked by a bilevel (train/validate) hypergradient scheme or by
//! the L-curve and GCV baselines ([`hyperselect`]).
//!
//! Two data generators are included: an explicit finite-difference solver
//! for the nonlocal Fokker–Planck equation ([`fpe`]) and a compound-Poisson
//! ensemble simulator followed by kernel density estimation ([`ensemble`]).
//!
//! The crate is `no_std` (it needs `alloc`). The default `std` and
//! `parallel` features enable rayon-backed loops in the generators.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod assembly;
pub mod dataset;
pub mod ensemble;
mod error;
pub mod fpe;
pub mod hyperselect;
pub mod metrics;
pub mod model;
pub mod regsolve;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};

/// Uniform grid helper: `start + i * step`.
#[inline]
pub(crate) fn grid_point(start: f64, step: f64, i: usize) -> f64 {
    start + step * i as f64
}
