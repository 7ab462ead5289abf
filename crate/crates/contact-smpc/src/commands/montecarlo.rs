//! Closed-loop comparison of the controller variants over randomized
//! terrain.

use contact_smpc_core::runtime::{
    monte_carlo_compare_with, MonteCarloConfig, MonteCarloResult, OffsetDistribution, PlantConfig,
};
use rayon::prelude::*;

use super::{mpc_config, pool, Run, RunContext};
use crate::config::{ExperimentConfig, Gait, ModelName, OffsetKind};
use crate::error::CliError;
use crate::output::{Outputs, Table};
use crate::plot;

pub fn monte_carlo_config(cfg: &ExperimentConfig) -> Result<MonteCarloConfig, CliError> {
    if cfg.model != ModelName::Biped || cfg.schedule.gait != Gait::Walk {
        return Err(CliError::Config("montecarlo runs the biped walking gait".into()));
    }
    let m = &cfg.montecarlo;
    let walk = cfg.walk.params(&cfg.uncertainty);
    let offsets = match m.offsets {
        OffsetKind::Uniform => OffsetDistribution::Uniform { range: m.offset_range },
        OffsetKind::Gaussian => OffsetDistribution::Gaussian {
            std: m.offset_std,
            clip: m.offset_range,
        },
    };
    let nx = walk.model(&walk.terrain()).map_err(super::invalid)?.nx();
    let config = MonteCarloConfig {
        mpc: mpc_config(cfg, nx),
        plant: PlantConfig {
            substeps: m.substeps,
            noise: m.plant_noise,
            violation_tolerance: m.violation_tolerance,
            ..PlantConfig::default()
        },
        variants: m.variants.iter().map(|v| v.0).collect(),
        n_envs: m.n_envs,
        duration: m.duration,
        offsets,
        margin_quantile: m.margin_quantile,
        margins: cfg.uncertainty.margins.clone(),
        walk,
    };
    config.validate().map_err(super::invalid)?;
    Ok(config)
}

/// Rollouts spread over `threads` workers; results keep job order.
pub fn compare(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<MonteCarloResult, CliError> {
    let config = monte_carlo_config(cfg)?;
    let result = pool(ctx.threads)?.install(|| {
        monte_carlo_compare_with(&config, ctx.seed, |jobs, run| jobs.par_iter().map(run).collect())
    })?;
    Ok(result)
}

pub fn summary_table(id: &str, probability: f64, result: &MonteCarloResult) -> Table {
    let mut t = Table::new([
        "id",
        "variant",
        "rollouts",
        "successes",
        "success_rate",
        "violations",
        "falls",
        "solver_failures",
        "max_node_violation_frequency",
        "max_node_samples",
        "max_node_excess",
        "node_bound_holds",
        "probability",
        "mean_alpha",
    ]);
    for s in &result.summaries {
        t.push(vec![
            id.into(),
            s.variant.label().into(),
            s.rollouts.into(),
            s.successes.into(),
            s.success_rate().into(),
            s.violations.into(),
            s.falls.into(),
            s.solver_failures.into(),
            s.max_node_violation_frequency.into(),
            s.max_node_samples.into(),
            s.max_node_excess.into(),
            s.node_bound_holds().into(),
            probability.into(),
            s.mean_alpha.into(),
        ]);
    }
    t
}

pub fn constraint_table(id: &str, result: &MonteCarloResult) -> Table {
    let mut t = Table::new(["id", "variant", "constraint", "violation_frequency"]);
    for s in &result.summaries {
        for (name, f) in &s.constraint_violation_frequency {
            t.push(vec![id.into(), s.variant.label().into(), name.as_str().into(), (*f).into()]);
        }
    }
    t
}

pub fn rollout_table(id: &str, result: &MonteCarloResult) -> Table {
    let mut t = Table::new([
        "id",
        "variant",
        "env",
        "plant_seed",
        "outcome",
        "max_violation",
        "solver_failures",
        "events",
        "samples",
    ]);
    for (variant, records) in &result.records {
        for (env, r) in result.environments.iter().zip(records) {
            t.push(vec![
                id.into(),
                variant.label().into(),
                env.index.into(),
                env.plant_seed.into(),
                r.outcome.label().into(),
                r.max_violation.into(),
                r.solver_failures.into(),
                r.events.len().into(),
                r.regular_steps().count().into(),
            ]);
        }
    }
    t
}

pub fn environment_table(id: &str, result: &MonteCarloResult) -> Table {
    let mut t = Table::new(["id", "env", "segment", "offset"]);
    for env in &result.environments {
        for (k, o) in env.offsets.iter().enumerate() {
            t.push(vec![id.into(), env.index.into(), k.into(), (*o).into()]);
        }
    }
    t
}

pub fn margin_table(id: &str, result: &MonteCarloResult) -> Table {
    let mut t = Table::new(["id", "constraint", "margin"]);
    for (name, m) in &result.margins {
        t.push(vec![id.into(), name.as_str().into(), (*m).into()]);
    }
    t
}

pub fn outputs(cfg: &ExperimentConfig, result: &MonteCarloResult) -> Outputs {
    let id = cfg.id.as_str();
    let mut out = Outputs::default();
    out.table("montecarlo.csv", &summary_table(id, cfg.uncertainty.probability, result));
    out.table("montecarlo_constraints.csv", &constraint_table(id, result));
    out.table("montecarlo_rollouts.csv", &rollout_table(id, result));
    out.table("montecarlo_environments.csv", &environment_table(id, result));
    out.table("montecarlo_margins.csv", &margin_table(id, result));
    out.text("plot_montecarlo.py", plot::montecarlo());
    out
}

pub fn run(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Run, CliError> {
    let result = compare(cfg, ctx)?;
    let summary = result
        .summaries
        .iter()
        .map(|s| {
            format!(
                "{:8} success {}/{}  max node violation frequency {:.3}",
                s.variant.label(),
                s.successes,
                s.rollouts,
                s.max_node_violation_frequency
            )
        })
        .collect();
    Ok(Run {
        outputs: outputs(cfg, &result),
        summary,
        failure: None,
    })
}
