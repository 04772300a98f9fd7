//! Certification of robust stability regions in design-parameter space for
//! polynomial networks under bounded time-varying uncertainty.
//!
//! The pipeline compiles parametric Lyapunov conditions into sum-of-squares
//! feasibility problems, solves them with an embedded semidefinite-programming
//! solver, and bisects on the design-region size `beta` to find the largest
//! certified region. A droop-controlled microgrid model front-end and a
//! simulation-based soundness validator are included.
//!
//! Module map:
//! - [`poly`] — sparse multivariate polynomial arithmetic over named variables
//! - [`sdp`] — standard-form SDP container and embedded primal-dual solver
//! - [`sos`] — Gram-matrix / Putinar compilation of nonnegativity assertions
//! - [`system`] — parametric vector fields `f(x, lambda, delta)` and scaling
//! - [`microgrid`] — droop-inverter network model builder
//! - [`equilibrium`] — power flow and polynomial equilibrium maps
//! - [`region`] — program assembly, beta bisection, bounds report
//! - [`validate`] — trajectory simulation and Monte-Carlo falsification
//! - [`config`] / [`report`] / [`pipeline`] — run configuration and outputs

pub mod config;
pub mod equilibrium;
pub mod microgrid;
pub mod pipeline;
pub mod poly;
pub mod region;
pub mod report;
pub mod sdp;
pub mod sos;
pub mod system;
pub mod validate;

pub use poly::{Monomial, Polynomial, VarClass, VarId, VarSpace};
