//! Numerical lab for the gap between 0-1 error and margin error of
//! surrogate-loss learners on the sphere.
//!
//! The modules build on each other bottom-up: [`orthopoly`] and [`sphere`]
//! supply the special functions and sampling, [`measures`] builds the hard
//! distributions, [`kernels`] and [`learners`] train predictors on them,
//! [`geometry`] provides the John-ellipsoid noise construction,
//! [`lemma_lab`] measures band gaps, and [`harness`] runs experiments.

// Guards are written `!(x > 0.0)` so that NaN is rejected with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod learners;
pub mod lemma_lab;
pub mod measures;
pub mod orthopoly;
pub mod sphere;
pub mod stats;

pub use error::{Error, Result};
