//! Numerical laboratory for affine optimal control problems
//!
//! ```text
//! x' = X_0(x) + sum_i u_i X_i(x),     C_T(u) = 1/2 ∫_0^T (|u|^2 - Q(x_u)) dt
//! ```
//!
//! with fixed horizon `T` and initial point `x_0`. The crate computes the
//! end-point map and its differential, solves fixed-endpoint problems by a
//! direct method and by shooting on normal extremals, classifies target
//! points (fair, tame, smooth, abnormal) and maps the value function with
//! continuity diagnostics.

pub mod benchmarks;
pub mod classify;
pub mod config;
pub mod direct;
pub mod endpoint;
pub mod error;
pub mod extremal;
pub mod flow;
pub mod json;
pub mod linalg;
pub mod model;
pub(crate) mod optim;
pub mod par;
pub mod poly;
pub mod suite;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{Control, ControlSystem, ProblemSpec, VectorField};
pub use par::Execution;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
