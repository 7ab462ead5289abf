//! Stochastic and robust nonlinear MPC for hybrid systems.
//!
//! Belief covariance is carried through contact events with saltation and
//! guard saltation matrices plus a Kalman-style posterior contraction; the
//! tightened optimal control problem is solved with a zero-order SQP that
//! uses a primal-dual interior point method and a Riccati recursion.
#![no_std]

extern crate alloc;

pub mod covariance;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod runtime;
pub mod saltation;
pub mod scenario;
pub mod schedule;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{HybridModel, ModeId, TransitionId};
pub use schedule::{ModeSchedule, NodeKind};

