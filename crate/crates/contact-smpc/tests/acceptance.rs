#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use contact_smpc::commands::{bench, covcompare, montecarlo, RunContext};
use contact_smpc::config::Named;
use contact_smpc::ExperimentConfig;
use contact_smpc_core::covariance::{gamma_from_probability, propagate_jump_apriori, JumpMethod};
use contact_smpc_core::model::TransitionId;
use contact_smpc_core::runtime::{forecast_problem, ForecastCell, Motion, SweepParameter, Variant};
use contact_smpc_core::saltation::{saltation, EPS_TRANSVERSAL};
use contact_smpc_core::schedule::NodeKind;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn saltation_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, (model, u, x)) in [("bouncing", support::salt::bouncing_event()), ("biped", support::salt::biped_event())] {
        let (ex, eg) = support::salt::errors(&model, TransitionId(0), &u, &x);
        worst = worst.max(ex).max(eg);
        parts.push(format!("{name} Ξ_x {ex:.1e} Ξ_g {eg:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-4 && secs < 1.0, format!("{}, {secs:.3} s", parts.join(", ")))
}

fn elastic_bounce() -> Outcome {
    let (model, u, x) = support::salt::elastic_event();
    let (cx, cg) = support::salt::elastic_closed_form();
    let (fd_x, fd_g) = support::fd_saltation(&model, TransitionId(0), &u, &x, 0.01);
    let oracle = (&fd_x - &cx).abs().max().max((&fd_g - &cg).abs().max());
    let (xi_x, xi_g) = support::salt::library(&model, TransitionId(0), &u, &x);
    let lib = (&xi_x - &cx).abs().max().max((&xi_g - &cg).abs().max());
    verdict(
        oracle <= 1e-4 && lib <= 1e-10,
        format!("oracle vs closed form {oracle:.1e}, library vs closed form {lib:.1e}"),
    )
}

fn covariance_invariants() -> Outcome {
    let s = support::cov_invariants(1000, 0x9e37_79b9_7f4a_7c15);
    verdict(
        s.max_asym <= 1e-12 && s.min_eig >= -1e-10 && s.trace_increases == 0,
        format!(
            "{} instances, asymmetry {:.1e}, min eigenvalue {:.2e}, trace increases {}",
            s.instances, s.max_asym, s.min_eig, s.trace_increases
        ),
    )
}

fn single_guard() -> Outcome {
    let mut next = support::xorshift(0x2545_f491_4f6c_dd1d);
    let mut mismatches = 0;
    let n = 200;
    for i in 0..n {
        let inst = support::cov_instance(2 + i % 5, 1, 1, &mut next);
        let salt = saltation(&inst.lin, EPS_TRANSVERSAL);
        let multi = propagate_jump_apriori(&inst.p, &salt, &inst.c_g).unwrap();
        if support::bits(&multi) != support::bits(&support::single_guard_jump(&inst)) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{n} instances, {mismatches} bitwise mismatches"))
}

fn find<'a>(cells: &'a [ForecastCell], motion: Motion, method: JumpMethod, pick: impl Fn(&ForecastCell) -> bool) -> Option<&'a ForecastCell> {
    cells.iter().find(|c| c.motion == motion && c.method == method && pick(c))
}

fn covariance_forecast() -> Outcome {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let cells = covcompare::cells(&cfg, &RunContext { seed: 0, threads: None }).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let fc = covcompare::forecast_config(&cfg);
    let (problem, _) = forecast_problem(&fc, Motion::Forward, 1e-3, 0.0).map_err(|e| e.to_string())?;
    let events = (0..problem.schedule.num_nodes())
        .filter(|&i| matches!(problem.schedule.kind(i), NodeKind::Jump(_)))
        .count();
    let at = |c: &ForecastCell| c.parameter == SweepParameter::GuardVariance(1e-3);
    let a = find(&cells, Motion::Forward, JumpMethod::SaltationPosterior, at).ok_or("missing (a) cell")?;
    let b = find(&cells, Motion::Forward, JumpMethod::SaltationApriori, at).ok_or("missing (b) cell")?;
    let c = find(&cells, Motion::Forward, JumpMethod::DynamicsOnly, |c| c.matched_to == Some(1e-3)).ok_or("missing matched (c) cell")?;
    let all_converged = [a, b, c].iter().all(|c| c.converged);
    let (ta, tb) = (a.trace().unwrap_or(f64::NAN), b.trace().unwrap_or(f64::NAN));
    let ra = a.motion_lateral_ratio().unwrap_or(f64::NAN);
    let rc = c.motion_lateral_ratio().unwrap_or(f64::NAN);
    verdict(
        events >= 4 && all_converged && tb >= 2.0 * ta && ra >= 3.0 && rc <= 1.5 && secs < 60.0,
        format!(
            "forward walk, {events} events, trace (b)/(a) {:.2}, (a) motion/lateral {ra:.1}, matched (c) {rc:.2}, converged {all_converged}, {secs:.1} s",
            tb / ta
        ),
    )
}

fn zero_uncertainty() -> Outcome {
    match support::zero_uncertainty_mismatch() {
        None => Ok("walk, all three jump methods, bitwise equal iterates".into()),
        Some(m) => Err(m),
    }
}

fn lq_oracles() -> Outcome {
    let (riccati, converged) = support::lq::lq_riccati_deviation();
    let kkt = support::lq::newton_step_dense_kkt_deviation();
    verdict(
        converged && riccati <= 1e-6 && kkt <= 1e-8,
        format!("Riccati deviation {riccati:.1e}, dense KKT deviation {kkt:.1e}"),
    )
}

fn monte_carlo() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.montecarlo.n_envs = 500;
    cfg.montecarlo.variants = vec![Named(Variant::GsSmpc), Named(Variant::Mpc)];
    let start = Instant::now();
    let result = montecarlo::compare(&cfg, &RunContext { seed: 42, threads: None }).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let get = |v| result.summaries.iter().find(|s| s.variant == v).ok_or("missing summary");
    let (gs, mpc) = (get(Variant::GsSmpc)?, get(Variant::Mpc)?);
    verdict(
        gs.rollouts >= 500 && gs.max_node_excess <= 0.0 && gs.success_rate() > mpc.success_rate() && secs < 600.0,
        format!(
            "{} rollouts each, GS-SMPC max node frequency {:.3} ({} samples, excess {:.3}), success GS-SMPC {:.3} vs MPC {:.3}, {secs:.0} s",
            gs.rollouts,
            gs.max_node_violation_frequency,
            gs.max_node_samples,
            gs.max_node_excess,
            gs.success_rate(),
            mpc.success_rate()
        ),
    )
}

fn gamma() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut oracle_gap: f64 = 0.0;
    for (p, expected) in [(0.95, 1.6448536), (0.8, 0.8416212)] {
        let g = gamma_from_probability(p).map_err(|e| e.to_string())?;
        worst = worst.max((g - expected).abs());
        oracle_gap = oracle_gap.max((g - support::normal_quantile_bisection(p)).abs());
    }
    verdict(
        worst <= 1e-6 && oracle_gap <= 1e-9,
        format!("deviation from reference {worst:.1e}, from bisection oracle {oracle_gap:.1e}"),
    )
}

fn overhead() -> Outcome {
    let cfg = ExperimentConfig::default();
    let r = bench::measure(&cfg).map_err(|e| e.to_string())?;
    verdict(
        r.nominal.len() >= 30 && r.ratio() <= 1.5 && r.stochastic_max_backoff > 0.0,
        format!(
            "{} repetitions of {} iterations, mean ratio {:.3}, median ratio {:.3}",
            r.nominal.len(),
            r.iterations,
            r.ratio(),
            r.median_ratio()
        ),
    )
}

fn run_montecarlo(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let run = montecarlo::run(cfg, &RunContext { seed: cfg.seed, threads: None }).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for path in run.outputs.write(dir).map_err(|e| e.to_string())? {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.push((name, fs::read(&path).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 2024;
    cfg.montecarlo.n_envs = 6;
    cfg.montecarlo.duration = 1.0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_montecarlo(&cfg, &dir.path().join("a"))?;
    let second = run_montecarlo(&cfg, &dir.path().join("b"))?;
    let bytes: usize = first.iter().map(|f| f.1.len()).sum();
    verdict(
        !first.is_empty() && first == second,
        format!("{} files, {bytes} bytes, identical {}", first.len(), first == second),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("saltation matches finite differences", saltation_oracle),
        ("elastic bounce closed form", elastic_bounce),
        ("covariance invariants", covariance_invariants),
        ("single guard consistency", single_guard),
        ("covariance forecast comparison", covariance_forecast),
        ("zero uncertainty equals nominal", zero_uncertainty),
        ("LQR and KKT oracles", lq_oracles),
        ("chance constraint Monte Carlo", monte_carlo),
        ("inverse normal CDF", gamma),
        ("stochastic overhead", overhead),
        ("Monte Carlo determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
