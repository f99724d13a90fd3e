//! Sampling-aware control barrier functions for zero-order-hold control.

pub mod ad;
pub mod barrier;
pub mod cli;
pub mod constraint_qp;
pub mod dynamics;
pub mod error;
pub mod invariance_bounds;
pub mod ode;
pub mod output;
pub mod qp;
pub mod quadrature;
pub mod scenario;
pub mod simulator;
pub mod taylor_bound;

pub use error::{Error, Result};
