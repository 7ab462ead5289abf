//! Subcommand drivers. Each builds its tables in memory; the caller writes
//! them once the run is over.

pub mod bench;
pub mod covcompare;
pub mod montecarlo;
pub mod solve;

use contact_smpc_core::ocp::SolverOptions;
use contact_smpc_core::runtime::MpcConfig;
use contact_smpc_core::Matrix;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::Outputs;

/// Settings from the command line that override the file.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Outputs of one command plus the error to report after writing them.
pub struct Run {
    pub outputs: Outputs,
    pub summary: Vec<String>,
    pub failure: Option<CliError>,
}

/// Offline solver options.
pub fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    let s = &cfg.solver;
    SolverOptions {
        max_iterations: s.max_iterations,
        tolerance: s.tolerance,
        mu_init: s.mu_init,
        line_search: s.line_search,
        ..SolverOptions::default()
    }
}

/// Receding-horizon settings with the configured variant.
pub fn mpc_config(cfg: &ExperimentConfig, nx: usize) -> MpcConfig {
    let s = &cfg.solver;
    let u = &cfg.uncertainty;
    let p0 = (u.initial_variance > 0.0).then(|| Matrix::identity(nx, nx) * u.initial_variance);
    MpcConfig {
        variant: u.variant.0,
        dt: cfg.schedule.dt,
        horizon: cfg.schedule.horizon,
        solver: SolverOptions {
            max_iterations: s.rti_iterations,
            ..solver_options(cfg)
        },
        init_iterations: s.init_iterations,
        margins: u.margins.clone(),
        p0,
        ..MpcConfig::default()
    }
}

/// Core errors raised while turning the file into library settings.
pub(crate) fn invalid(e: contact_smpc_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub(crate) fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Internal(e.to_string()))
}
