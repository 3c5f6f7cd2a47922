//! Numerical laboratory for convex solutions with quadratic growth.
//!
//! The crate provides four cooperating subsystems:
//!
//! * [`radial`] builds radially symmetric source terms with slowly decaying
//!   excess, integrates their exact convex solutions by adaptive quadrature,
//!   and evaluates truncated expansions at infinity.
//! * [`poisson`] solves `Delta v = g` outside the unit ball by spherical
//!   harmonic decomposition and certifies the growth of each solution.
//! * [`extract`] recovers the quadratic matrix and linear term of a convex
//!   function at infinity from sublevel-set ellipsoids and gradient averages.
//! * [`ratefit`] estimates power-log laws from sampled residuals and backs
//!   every empirical certificate in the other modules.

pub mod catalog;
pub mod error;
pub mod extract;
pub mod poisson;
pub mod quad;
pub mod radial;
pub mod ratefit;
pub mod rational;
pub mod sphere;
pub mod spline;

pub use error::{Error, Result};
pub use rational::Rational;
