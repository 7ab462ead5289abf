//! Terminal covariance of the three jump propagation methods.

use contact_smpc_core::runtime::{covariance_forecast_experiment, ForecastCell, ForecastConfig};
use rayon::prelude::*;

use super::{invalid, pool, solver_options, Run, RunContext};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Cell, Outputs, Table};
use crate::plot;

pub fn forecast_config(cfg: &ExperimentConfig) -> ForecastConfig {
    let c = &cfg.covcompare;
    let u = &cfg.uncertainty;
    ForecastConfig {
        walk: cfg.walk.params(u),
        hop: cfg.hop.params(u),
        dt: cfg.schedule.dt,
        walk_horizon: c.horizon,
        curvature: c.curvature,
        guard_variances: c.guard_variances.clone(),
        jump_noises: c.jump_noises.clone(),
        trace_match: c.trace_match,
        solver: solver_options(cfg),
    }
}

fn status(cell: &ForecastCell) -> String {
    match (&cell.error, cell.converged) {
        (Some(e), _) => format!("failed: {e}"),
        (None, true) => "ok".into(),
        (None, false) => "not-converged".into(),
    }
}

fn key(id: &str, cell: &ForecastCell) -> Vec<Cell> {
    vec![
        id.into(),
        cell.motion.label().into(),
        cell.method.label().into(),
        cell.parameter.name().into(),
        cell.parameter.value().into(),
        cell.matched_to.into(),
    ]
}

const KEY: [&str; 6] = ["id", "motion", "method", "parameter", "parameter_value", "matched_to"];

/// One row per cell and state dimension; a failed cell gets a single row
/// without dimension.
pub fn long_table(id: &str, cells: &[ForecastCell]) -> Table {
    let mut t = Table::new(KEY.iter().copied().chain(["dimension", "variance", "status"]));
    for cell in cells {
        let s = status(cell);
        match &cell.terminal {
            Some(p) => {
                for j in 0..p.nrows() {
                    let mut row = key(id, cell);
                    row.extend([j.into(), p[(j, j)].into(), s.clone().into()]);
                    t.push(row);
                }
            }
            None => {
                let mut row = key(id, cell);
                row.extend([Cell::Empty, Cell::Empty, s.into()]);
                t.push(row);
            }
        }
    }
    t
}

pub fn summary_table(id: &str, cells: &[ForecastCell]) -> Table {
    let mut t = Table::new(KEY.iter().copied().chain([
        "converged",
        "iterations",
        "trace",
        "motion_variance",
        "lateral_variance",
        "motion_lateral_ratio",
        "major_axis",
        "minor_axis",
        "axis_angle",
        "status",
    ]));
    for cell in cells {
        let ml = cell.motion_lateral();
        let axes = cell.principal_axes();
        let mut row = key(id, cell);
        row.extend([
            cell.converged.into(),
            cell.iterations.into(),
            cell.trace().into(),
            ml.map(|m| m.0).into(),
            ml.map(|m| m.1).into(),
            cell.motion_lateral_ratio().into(),
            axes.map(|a| a.0).into(),
            axes.map(|a| a.1).into(),
            axes.map(|a| a.2).into(),
            status(cell).into(),
        ]);
        t.push(row);
    }
    t
}

/// Cells of every configured motion, motions run in parallel.
pub fn cells(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<ForecastCell>, CliError> {
    let fc = forecast_config(cfg);
    fc.validate().map_err(invalid)?;
    let motions: Vec<_> = cfg.covcompare.motions.iter().map(|m| m.0).collect();
    let per_motion = pool(ctx.threads)?.install(|| {
        motions
            .par_iter()
            .map(|m| covariance_forecast_experiment(&fc, &[*m]))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(per_motion.into_iter().flatten().collect())
}

pub fn run(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Run, CliError> {
    let cells = cells(cfg, ctx)?;
    let mut outputs = Outputs::default();
    outputs.table("covcompare.csv", &long_table(&cfg.id, &cells));
    outputs.table("covcompare_summary.csv", &summary_table(&cfg.id, &cells));
    outputs.text("plot_covcompare.py", plot::covcompare());
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    let unconverged = cells.iter().filter(|c| c.error.is_none() && !c.converged).count();
    let summary = vec![format!(
        "{} cells, {failed} failed, {unconverged} not converged",
        cells.len()
    )];
    Ok(Run {
        outputs,
        summary,
        failure: None,
    })
}
