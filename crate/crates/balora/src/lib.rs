//! Energy-balanced low-rank continual adaptation.
//!
//! This crate implements a self-contained numerical-optimization toolkit for
//! studying continual learning with structured low-rank task updates
//! `dW = s * U * V^T`, where the direction factors carry orthonormal columns
//! and the left factor is additionally constrained to the null space of a
//! gradient-projection memory accumulated over past tasks:
//!
//! * [`linalg`] — dense deterministic kernels (thin SVD, symmetric
//!   eigendecomposition, SPD inverse square root) and the repo-wide matrix
//!   text format;
//! * [`manifold`] — the restricted Stiefel manifold: feasibility checks,
//!   tangent-space projection, and the whitening retraction;
//! * [`optimizer`] — projected first-order steps (SGD-momentum / Adam) that
//!   keep iterates feasible;
//! * [`gpm`] — gradient-projection memory with the energy-fraction criterion;
//! * [`adapter`] — the structured task update: projected-SVD initialization,
//!   depth-aware scale initialization, materialization, application;
//! * [`spectral`] — singular-value spectra, smoothing, merging, and the
//!   normalized accuracy improvement metric;
//! * [`harness`] — a synthetic sequential-task benchmark with the full
//!   aggregate-metric suite and an unconstrained low-rank baseline.

pub mod adapter;
pub mod error;
pub mod gpm;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod optimizer;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
