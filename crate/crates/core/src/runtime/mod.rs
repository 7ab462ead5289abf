//! Closed-loop execution: controller samples, plant simulation and
//! Monte Carlo comparison of controller variants.

mod controller;
mod forecast;
mod montecarlo;
mod plant;

pub use controller::{MpcConfig, MpcController, MpcOutput, MpcTask, Variant};
pub use forecast::{
    covariance_forecast_experiment, forecast_cell, forecast_problem, trace_matched_cell, ForecastCell, ForecastConfig,
    Motion, SweepParameter,
};
pub use montecarlo::{
    calibrate_margins, environment, monte_carlo_compare, monte_carlo_compare_with, quantile, run_rollout, summarize,
    Environment, MonteCarloConfig, MonteCarloResult, OffsetDistribution, VariantSummary,
};
pub use plant::{simulate_closed_loop, simulate_closed_loop_observed, Outcome, Plant, PlantConfig, RealizedEvent, RolloutRecord, RolloutStep};
