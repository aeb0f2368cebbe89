//! Numerical laboratory for positive bubble solutions of
//! `-Δu = Q(x) u^{(n+2)/(n-2)}` on a domain with a small spherical hole.
//!
//! The crate covers the full chain from closed-form bubbles through a
//! finite-volume Poisson solver, the finite-dimensional reduction with its
//! correction term, the closed-form reduced energy and its critical points,
//! and the Hopf-map transfer between critical and supercritical problems.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubbles;
pub mod config;
pub mod error;
pub mod fv;
pub mod geometry;
pub mod hopf;
pub mod krylov;
pub mod landscape;
pub mod multigrid;
pub mod potential;
pub mod quadrature;
pub mod reduction;
pub mod rng;
pub mod runner;
pub mod sparse;

pub use error::{Error, Result};
