//! Per-iteration wall-clock time of the stochastic and the nominal solver
//! on the same walking problem.

use std::time::Instant;

use contact_smpc_core::ocp::{evaluate, solve, step, OcpProblem, SolverOptions, SolverState, Uncertainty};
use contact_smpc_core::runtime::Variant;
use contact_smpc_core::scenario::BipedWalk;

use super::{invalid, mpc_config, solver_options, Run, RunContext};
use crate::config::{ExperimentConfig, Gait, ModelName};
use crate::error::CliError;
use crate::output::{Outputs, Table};
use crate::plot;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    /// Seconds per iteration, one entry per repetition.
    pub nominal: Vec<f64>,
    pub stochastic: Vec<f64>,
    pub iterations: usize,
    /// Largest backoff seen by the stochastic iterations; zero would mean
    /// the covariance pass did not run.
    pub stochastic_max_backoff: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len().max(2) - 1) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl BenchResult {
    /// Mean stochastic over mean nominal time.
    pub fn ratio(&self) -> f64 {
        mean(&self.stochastic) / mean(&self.nominal)
    }

    pub fn median_ratio(&self) -> f64 {
        let r: Vec<f64> = self.stochastic.iter().zip(&self.nominal).map(|(s, n)| s / n).collect();
        median(&r)
    }
}

fn time_iterations(
    problem: &OcpProblem,
    uncertainty: &Uncertainty,
    options: &SolverOptions,
    start: &SolverState,
    iterations: usize,
) -> Result<(f64, f64), CliError> {
    let mut state = start.clone();
    let mut max_backoff = 0.0f64;
    let t0 = Instant::now();
    for _ in 0..iterations {
        let eval = evaluate(problem, uncertainty, options, &mut state)?;
        max_backoff = max_backoff.max(eval.max_backoff);
        step(problem, options, &mut state, &eval)?;
    }
    Ok((t0.elapsed().as_secs_f64() / iterations as f64, max_backoff))
}

/// Both modes start every repetition from the converged nominal solution;
/// their order alternates between repetitions.
pub fn measure(cfg: &ExperimentConfig) -> Result<BenchResult, CliError> {
    if cfg.model != ModelName::Biped || cfg.schedule.gait != Gait::Walk {
        return Err(CliError::Config("bench runs the biped walking gait".into()));
    }
    let p = cfg.walk.params(&cfg.uncertainty);
    let mut walk = BipedWalk::new(p.clone(), cfg.schedule.dt, cfg.schedule.horizon).map_err(invalid)?;
    let problem = walk.problem(0.0, &p.initial_state(), p.initial_mode()).map_err(invalid)?;
    let nx = problem.model.nx();
    let offline = SolverOptions {
        max_iterations: cfg.solver.init_iterations,
        ..solver_options(cfg)
    };
    let start = solve(&problem, &Uncertainty::Nominal, &offline, None)?.state;
    let mut mpc = mpc_config(cfg, nx);
    mpc.variant = Variant::GsSmpc;
    let stochastic = mpc.uncertainty(nx);
    let nominal = Uncertainty::Nominal;
    let options = &mpc.solver;
    let b = &cfg.bench;
    let mut out = BenchResult {
        nominal: Vec::with_capacity(b.repetitions),
        stochastic: Vec::with_capacity(b.repetitions),
        iterations: b.iterations,
        stochastic_max_backoff: 0.0,
    };
    for r in 0..b.warmup + b.repetitions {
        let order = if r % 2 == 0 { [&nominal, &stochastic] } else { [&stochastic, &nominal] };
        let mut times = [0.0; 2];
        for (k, u) in order.into_iter().enumerate() {
            let (t, beta) = time_iterations(&problem, u, options, &start, b.iterations)?;
            times[k] = t;
            if std::ptr::eq(u, &stochastic) {
                out.stochastic_max_backoff = out.stochastic_max_backoff.max(beta);
            }
        }
        if r % 2 == 1 {
            times.swap(0, 1);
        }
        if r >= b.warmup {
            out.nominal.push(times[0]);
            out.stochastic.push(times[1]);
        }
    }
    Ok(out)
}

pub fn repetition_table(id: &str, result: &BenchResult) -> Table {
    let mut t = Table::new(["id", "repetition", "nominal_seconds", "stochastic_seconds", "ratio"]);
    for (k, (n, s)) in result.nominal.iter().zip(&result.stochastic).enumerate() {
        t.push(vec![id.into(), k.into(), (*n).into(), (*s).into(), (s / n).into()]);
    }
    t
}

pub fn summary_table(id: &str, result: &BenchResult) -> Table {
    let mut t = Table::new(["id", "metric", "value"]);
    let rows = [
        ("repetitions", result.nominal.len() as f64),
        ("iterations_per_repetition", result.iterations as f64),
        ("nominal_mean_seconds", mean(&result.nominal)),
        ("nominal_std_seconds", std_dev(&result.nominal)),
        ("stochastic_mean_seconds", mean(&result.stochastic)),
        ("stochastic_std_seconds", std_dev(&result.stochastic)),
        ("ratio", result.ratio()),
        ("median_ratio", result.median_ratio()),
        ("stochastic_max_backoff", result.stochastic_max_backoff),
    ];
    for (name, v) in rows {
        t.push(vec![id.into(), name.into(), v.into()]);
    }
    t
}

pub fn run(cfg: &ExperimentConfig, _ctx: &RunContext) -> Result<Run, CliError> {
    let result = measure(cfg)?;
    let mut outputs = Outputs::default();
    outputs.table("bench.csv", &repetition_table(&cfg.id, &result));
    outputs.table("bench_summary.csv", &summary_table(&cfg.id, &result));
    outputs.text("plot_bench.py", plot::bench());
    let summary = vec![format!(
        "nominal {:.3} ms, stochastic {:.3} ms per iteration, ratio {:.3}",
        1e3 * mean(&result.nominal),
        1e3 * mean(&result.stochastic),
        result.ratio()
    )];
    Ok(Run {
        outputs,
        summary,
        failure: None,
    })
}
