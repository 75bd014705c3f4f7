//! Numerical construction, verification and measurement of topological
//! conjugacies between a nonautonomous linear system `x' = A(t)x` with an
//! exponential dichotomy and its perturbation `y' = A(t)y + f(t, y)`.
//!
//! The crate is organised bottom-up:
//!
//! - [`flows`]: coefficient fields, perturbations, integration and evolution
//!   operators, radial extension of ball-local fields.
//! - [`dichotomy`]: dichotomy data, projections, the Green kernel and the
//!   exponential-kernel transform `L_α` with the Coppel bound.
//! - [`gronwall`]: the two dichotomic integral inequalities and their
//!   worst-case fixed points.
//! - [`conjugacy`]: the maps `H`, `G`, bounded half-line solutions, decay
//!   estimates and conjugacy verification.
//! - [`regularity`]: theoretical Lipschitz/Hölder constants and empirical
//!   estimators.
//! - [`examples`]: builtin systems with closed-form conjugacies.

pub mod conjugacy;
pub mod dichotomy;
pub mod error;
pub mod examples;
pub mod flows;
pub mod gronwall;
pub mod linalg;
pub mod quadrature;
pub mod regularity;

pub use error::{Error, Result};
