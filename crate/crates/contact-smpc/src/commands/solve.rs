//! One offline solve of the configured task.

use std::collections::BTreeMap;

use contact_smpc_core::ocp::{solve, OcpProblem, SolveOutput, SolverState};
use contact_smpc_core::scenario::{BipedWalk, DoubleIntegratorTask};
use contact_smpc_core::{NodeKind, Vector};

use super::{invalid, mpc_config, solver_options, Run, RunContext};
use crate::config::{ExperimentConfig, Gait, ModelName};
use crate::error::CliError;
use crate::output::{Cell, Outputs, Table};
use crate::plot;

/// Problem of the configured model and gait starting at `t = 0`.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<OcpProblem, CliError> {
    let s = &cfg.schedule;
    let u = &cfg.uncertainty;
    match (cfg.model, s.gait) {
        (ModelName::DoubleIntegrator, _) => {
            let d = &cfg.double_integrator;
            let mut task = DoubleIntegratorTask::new(s.dt, s.horizon, u.flow_noise).map_err(invalid)?;
            task.input_max = d.input_max;
            task.position_max = d.position_max;
            task.probability = u.probability;
            task.problem(0.0, &Vector::from_row_slice(&d.x0)).map_err(invalid)
        }
        (ModelName::Biped, Gait::Hop) => cfg.hop.params(u).problem(s.dt).map_err(invalid),
        (ModelName::Biped, _) => {
            let p = cfg.walk.params(u);
            let mut walk = BipedWalk::new(p.clone(), s.dt, s.horizon).map_err(invalid)?;
            walk.problem(0.0, &p.initial_state(), p.initial_mode()).map_err(invalid)
        }
    }
}

fn kind_label(kind: NodeKind) -> String {
    match kind {
        NodeKind::Flow(m) => format!("flow:{}", m.0),
        NodeKind::Jump(tr) => format!("jump:{}", tr.0),
        NodeKind::Terminal => "terminal".into(),
    }
}

/// Column key of every backoff row: constraint name and row counter among
/// the rows of that name at the node.
fn backoff_keys(out: &SolveOutput) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut keys: Vec<String> = Vec::new();
    let mut index = BTreeMap::new();
    let mut per_node = Vec::new();
    for blocks in &out.state.layout {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut cols = Vec::new();
        for b in blocks {
            for _ in 0..b.dim {
                let k = counts.entry(b.name.as_str()).or_default();
                let key = format!("beta_{}_{}", b.name, k);
                *k += 1;
                let col = *index.entry(key.clone()).or_insert_with(|| {
                    keys.push(key);
                    keys.len() - 1
                });
                cols.push(col);
            }
        }
        per_node.push(cols);
    }
    (keys, per_node)
}

pub fn trajectory_table(problem: &OcpProblem, out: &SolveOutput) -> Table {
    let nx = problem.model.nx();
    let nu = problem.model.nu();
    let tr = &out.trajectory;
    let (keys, cols) = backoff_keys(out);
    let mut header = vec!["t".to_string(), "node".into(), "kind".into()];
    header.extend((0..nx).map(|j| format!("x{j}")));
    header.extend((0..nu).map(|j| format!("u{j}")));
    header.extend((0..nx).map(|j| format!("p{j}")));
    header.extend(keys.iter().cloned());
    let mut table = Table::new(header);
    for i in 0..tr.xs.len() {
        let mut row: Vec<Cell> = vec![tr.times[i].into(), i.into(), kind_label(tr.kinds[i]).into()];
        row.extend(tr.xs[i].iter().map(|v| Cell::from(*v)));
        let u = &tr.us[i];
        row.extend((0..nu).map(|j| if u.len() == nu { u[j].into() } else { Cell::Empty }));
        match tr.covariances.get(i) {
            Some(p) => row.extend((0..nx).map(|j| Cell::from(p[(j, j)]))),
            None => row.extend((0..nx).map(|_| Cell::Empty)),
        }
        let mut betas = vec![Cell::Empty; keys.len()];
        if let Some(b) = tr.backoffs.get(i) {
            for (r, &c) in cols[i].iter().enumerate() {
                if r < b.len() {
                    betas[c] = b[r].into();
                }
            }
        }
        row.extend(betas);
        table.push(row);
    }
    table
}

pub fn diagnostics_table(out: &SolveOutput) -> Table {
    let mut t = Table::new([
        "iteration",
        "kkt",
        "stationarity",
        "dynamics",
        "switching",
        "inequality",
        "complementarity",
        "cost",
        "mu",
        "alpha_primal",
        "alpha_dual",
        "accepted",
        "regularization",
        "max_backoff",
        "clipped_backoffs",
        "covariance_fallbacks",
    ]);
    for l in &out.log {
        t.push(vec![
            l.iteration.into(),
            l.kkt.max().into(),
            l.kkt.stationarity.into(),
            l.kkt.dynamics.into(),
            l.kkt.switching.into(),
            l.kkt.inequality.into(),
            l.kkt.complementarity.into(),
            l.cost.into(),
            l.mu.into(),
            l.alpha_primal.into(),
            l.alpha_dual.into(),
            l.accepted.into(),
            l.regularization.into(),
            l.max_backoff.into(),
            l.clipped_backoffs.into(),
            l.covariance_fallbacks.into(),
        ]);
    }
    t
}

pub fn run(cfg: &ExperimentConfig, _ctx: &RunContext) -> Result<Run, CliError> {
    let problem = build_problem(cfg)?;
    let options = solver_options(cfg);
    let uncertainty = mpc_config(cfg, problem.model.nx()).uncertainty(problem.model.nx());
    let start = SolverState::from_reference(&problem, &options);
    let out = solve(&problem, &uncertainty, &options, Some(start))?;
    let mut outputs = Outputs::default();
    outputs.table("trajectory.csv", &trajectory_table(&problem, &out));
    outputs.table("diagnostics.csv", &diagnostics_table(&out));
    outputs.text("plot_solve.py", plot::solve());
    let summary = vec![format!(
        "{} nodes, {} iterations, KKT residual {:.3e}, converged {}",
        problem.num_nodes(),
        out.log.len(),
        out.kkt.max(),
        out.converged
    )];
    let failure = (!out.converged).then(|| {
        CliError::NotConverged(format!(
            "KKT residual {:.3e} after {} iterations",
            out.kkt.max(),
            out.log.len()
        ))
    });
    Ok(Run {
        outputs,
        summary,
        failure,
    })
}
