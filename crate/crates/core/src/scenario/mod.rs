//! Task builders used by the experiments.

pub mod biped;
pub mod double_integrator;
pub mod hop;

pub use biped::{BipedWalk, ReachLimit, WalkParams};
pub use double_integrator::DoubleIntegratorTask;
pub use hop::HopParams;
