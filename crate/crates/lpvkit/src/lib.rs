//! Low-order linear parameter varying (LPV) approximations of quadratic
//! nonlinear systems, and polytopic gain-scheduled H-infinity controllers
//! built on top of them.
//!
//! The pipeline implemented here takes a quadratic state-space system
//! `x' = A0 x + Q(x, x) + B u`, rewrites it in state-dependent coefficient
//! form `x' = (A0 + L(x)) x + B u`, compresses the state dependence onto a
//! handful of POD coordinates, encloses the observed parameter trajectories
//! in a low-vertex polytope, and synthesizes a vertex controller set that is
//! scheduled online through barycentric coordinates.

pub mod closedloop;
pub mod error;
pub mod io;
pub mod ode;
pub mod par;
pub mod pod;
pub mod polytope;
pub mod sdc;
pub mod sdp;
pub mod seed;
pub mod signal;
pub mod synthesis;
pub mod trajectory;

pub use error::{Error, Result};
