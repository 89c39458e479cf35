//! Transfer-operator numerics for metastable piecewise expanding interval maps.
//!
//! A map `T_0` of `[0, 1]` with two invariant halves `I_l = [0, b]` and
//! `I_r = [b, 1]` is perturbed into a family `T_eps` whose halves leak into
//! each other through small holes. The crate discretizes the transfer
//! operator with Ulam's method and measures how the unique invariant density
//! of `T_eps` approaches a convex combination of the two ergodic densities of
//! `T_0`, together with the second eigenpair, escape rates through the holes
//! and the bounded-variation structure (jumps along postcritical orbits) of
//! the computed densities.
//!
//! Module map:
//!
//! * [`map_model`]: piecewise maps, perturbation families, hypothesis checks.
//! * [`density`]: piecewise-constant densities on a uniform grid.
//! * [`transfer`]: Ulam matrices, Lasota–Yorke constants, Cesàro averages.
//! * [`spectral`]: leading density, second eigenpair, escape rates.
//! * [`bv`]: total variation, saltus decomposition, postcritical hierarchy.
//! * [`metastability`]: holes, hole ratios, mixture prediction, sweeps.
//! * [`scenario`], [`report`], [`plot`]: scenario files, built-in families and
//!   report emission for the `metamap` command-line tool.

// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bv;
pub mod density;
pub mod error;
pub mod map_model;
pub mod metastability;
pub mod plot;
pub mod report;
pub mod scenario;
pub mod spectral;
pub mod transfer;

pub use density::DensityGrid;
pub use error::{Error, Result};
pub use map_model::{Branch, BranchKind, Interval, PerturbationFamily, PiecewiseMap};
pub use transfer::UlamMatrix;

/// Tolerance used when comparing endpoints and critical points.
pub const ENDPOINT_TOL: f64 = 1e-12;
