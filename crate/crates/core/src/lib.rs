//! Parametric optimal transport on the unit interval.
//!
//! Builds families of epsilon-optimal Monge maps `T_t` for cost families
//! `h(x, y, t)` and marginal paths `(mu_t, nu_t)`, continuous in the parameter
//! in the sense of convergence `mu`-almost everywhere, together with an exact
//! Kantorovich oracle and audits for every guarantee.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod cover;
pub mod error;
pub mod harness;
pub mod kantorovich;
pub mod measure;
pub mod monge;
pub mod par;
pub mod quad;
pub mod skorohod;

pub use error::{Error, Result};
pub use measure::{DiscreteMeasure, GridDensity};
pub use par::Execution;
