//! Randomized-terrain comparison of controller variants on the biped walk.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::scenario::{BipedWalk, ReachLimit, WalkParams};

use super::controller::{MpcConfig, MpcController, Variant};
use super::plant::{simulate_closed_loop, simulate_closed_loop_observed, Outcome, Plant, PlantConfig, RolloutRecord};

/// Distribution of the per-segment terrain offsets (modeled minus true
/// height); positive offsets make contact happen later than planned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OffsetDistribution {
    /// Uniform on `[−range, range]`.
    Uniform { range: f64 },
    /// Zero-mean normal, clipped to `±clip`.
    Gaussian { std: f64, clip: f64 },
}

impl OffsetDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OffsetDistribution::Uniform { range } => range >= 0.0 && range.is_finite(),
            OffsetDistribution::Gaussian { std, clip } => std >= 0.0 && std.is_finite() && clip >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("offset distribution parameters must be non-negative".into()))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        match *self {
            OffsetDistribution::Uniform { range } if range > 0.0 => Ok(Uniform::new_inclusive(-range, range)
                .map_err(|_| Error::Argument("invalid offset range".into()))?
                .sample(rng)),
            OffsetDistribution::Gaussian { std, clip } if std > 0.0 => {
                let n = Normal::new(0.0, std).map_err(|_| Error::Argument("invalid offset deviation".into()))?;
                Ok(n.sample(rng).clamp(-clip, clip))
            }
            _ => Ok(0.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloConfig {
    pub walk: WalkParams,
    /// Shared controller settings; the variant is set per rollout.
    pub mpc: MpcConfig,
    pub plant: PlantConfig,
    pub variants: Vec<Variant>,
    pub n_envs: usize,
    pub duration: f64,
    pub offsets: OffsetDistribution,
    /// Backoff quantile of the calibration run used as the fixed margin.
    pub margin_quantile: f64,
    /// Fixed margins; calibrated from a nominal GS-SMPC run when empty.
    pub margins: BTreeMap<String, f64>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        let mut mpc = MpcConfig {
            dt: 0.025,
            horizon: 0.7,
            ..MpcConfig::default()
        };
        mpc.solver.line_search = true;
        Self {
            walk: WalkParams::default(),
            mpc,
            plant: PlantConfig::default(),
            variants: Variant::ALL.to_vec(),
            n_envs: 20,
            duration: 2.0,
            offsets: OffsetDistribution::Uniform { range: 0.04 },
            margin_quantile: 0.9,
            margins: BTreeMap::new(),
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.mpc.validate()?;
        self.offsets.validate()?;
        if self.n_envs == 0 {
            return Err(Error::Argument("n_envs must be at least 1".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Argument("duration must be positive".into()));
        }
        if !(self.margin_quantile >= 0.0 && self.margin_quantile <= 1.0) {
            return Err(Error::Argument("margin quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One randomized terrain and plant noise stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub index: usize,
    /// Offset per terrain segment; the starting segment is exact.
    pub offsets: Vec<f64>,
    pub plant_seed: u64,
}

/// Environment `index` of the run seeded with `seed`.
pub fn environment(config: &MonteCarloConfig, seed: u64, index: usize) -> Result<Environment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let segments = config.walk.terrain().segments().len();
    let mut offsets = vec![0.0; segments];
    for o in offsets.iter_mut().skip(1) {
        *o = config.offsets.sample(&mut rng)?;
    }
    Ok(Environment {
        index,
        offsets,
        plant_seed: rng.random(),
    })
}

/// Closed-loop rollout of `variant` in `env` with HMPC `margins`.
pub fn run_rollout(
    config: &MonteCarloConfig,
    variant: Variant,
    env: &Environment,
    margins: &BTreeMap<String, f64>,
) -> Result<RolloutRecord> {
    let p = &config.walk;
    // true height = modeled − offset
    let negated: Vec<f64> = env.offsets.iter().map(|o| -o).collect();
    let true_terrain = p.terrain().with_offsets(&negated)?;
    let plant_model = p.model(&true_terrain)?;
    let mut mpc = config.mpc.clone();
    mpc.variant = variant;
    mpc.margins = margins.clone();
    let task = BipedWalk::new(p.clone(), mpc.dt, mpc.horizon)?;
    let mut controller = MpcController::new(task, mpc)?;
    let mut plant = Plant::new(plant_model, config.plant.clone(), env.plant_seed)?;
    simulate_closed_loop(&mut controller, &mut plant, &p.initial_state(), p.initial_mode(), config.duration)
}

/// `q`-quantile by linear interpolation of the sorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Fixed margins from the reach backoffs at the first node with a positive
/// backoff, over every sample of a GS-SMPC run on the modeled terrain.
pub fn calibrate_margins(config: &MonteCarloConfig, seed: u64) -> Result<BTreeMap<String, f64>> {
    if !config.margins.is_empty() {
        return Ok(config.margins.clone());
    }
    let p = &config.walk;
    let model = p.model(&p.terrain())?;
    let mut mpc = config.mpc.clone();
    mpc.variant = Variant::GsSmpc;
    let task = BipedWalk::new(p.clone(), mpc.dt, mpc.horizon)?;
    let mut controller = MpcController::new(task, mpc)?;
    let mut plant = Plant::new(model, config.plant.clone(), seed)?;
    let mut backoffs = Vec::new();
    simulate_closed_loop_observed(
        &mut controller,
        &mut plant,
        &p.initial_state(),
        p.initial_mode(),
        config.duration,
        |c| {
            let Some(state) = c.iterate() else {
                return;
            };
            let Some(problem) = c.last_problem() else {
                return;
            };
            // first node with a positive reach backoff
            for (i, specs) in problem.constraints.iter().enumerate() {
                let mut r = 0;
                let mut found = Vec::new();
                for spec in specs {
                    let dim = spec.constraint.dim();
                    if spec.backoff.is_some() && spec.constraint.name() == ReachLimit::NAME {
                        if let Some(b) = state.backoffs.get(i) {
                            found.extend(b.iter().skip(r).take(dim).copied());
                        }
                    }
                    r += dim;
                }
                if found.iter().any(|b| *b > 0.0) {
                    backoffs.extend(found);
                    break;
                }
            }
        },
    )?;
    let margin = quantile(&backoffs, config.margin_quantile).unwrap_or(0.0);
    let mut margins = BTreeMap::new();
    margins.insert(String::from(ReachLimit::NAME), margin);
    Ok(margins)
}

/// Aggregate statistics of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub rollouts: usize,
    pub successes: usize,
    pub violations: usize,
    pub falls: usize,
    pub solver_failures: usize,
    /// Per monitored row, fraction of rollouts that violated it at least once.
    pub constraint_violation_frequency: Vec<(String, f64)>,
    /// Largest violation frequency over nodes and rows.
    pub max_node_violation_frequency: f64,
    /// Rollouts reaching the node of `max_node_violation_frequency`.
    pub max_node_samples: usize,
    /// Largest excess of a node frequency over `1 − p + 3·SE`, SE taken at
    /// the chance level.
    pub max_node_excess: f64,
    pub mean_alpha: f64,
}

impl VariantSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.rollouts.max(1) as f64
    }

    pub fn node_bound_holds(&self) -> bool {
        self.max_node_excess <= 0.0
    }
}

/// Node key: regular sample index, or ordinal of the event-triggered sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Sample(usize),
    Event(usize),
}

fn nodes(record: &RolloutRecord) -> impl Iterator<Item = (Node, &[f64])> {
    let mut k = 0;
    let mut e = 0;
    record.steps.iter().map(move |s| {
        let node = if s.regular {
            k += 1;
            Node::Sample(k - 1)
        } else {
            e += 1;
            Node::Event(e - 1)
        };
        (node, s.monitored.as_slice())
    })
}

/// Summary of `records` with constraints tolerated down to `−tolerance`
/// and chance level `probability`.
pub fn summarize(variant: Variant, records: &[RolloutRecord], tolerance: f64, probability: f64) -> VariantSummary {
    let rows = records.first().map_or(0, |r| r.monitored_names.len());
    let names = records.first().map(|r| r.monitored_names.clone()).unwrap_or_default();
    let mut row_hits = vec![0usize; rows];
    let mut node_counts: BTreeMap<(Node, usize), (usize, usize)> = BTreeMap::new();
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let mut alpha_sum = 0.0;
    let mut alpha_n = 0usize;
    for r in records {
        let mut hit = vec![false; rows];
        for (node, values) in nodes(r) {
            for (j, h) in values.iter().enumerate().take(rows) {
                if !h.is_finite() {
                    continue;
                }
                let violated = *h < -tolerance;
                let c = node_counts.entry((node, j)).or_default();
                c.0 += 1;
                c.1 += violated as usize;
                hit[j] |= violated;
            }
        }
        for (j, h) in hit.iter().enumerate() {
            row_hits[j] += *h as usize;
        }
        for s in r.steps.iter().filter(|s| s.u.len() > 0 && !s.solver_failed) {
            alpha_sum += s.alpha;
            alpha_n += 1;
        }
    }
    let level = 1.0 - probability;
    let mut max_freq = 0.0;
    let mut max_samples = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for &(n, v) in node_counts.values() {
        let freq = v as f64 / n as f64;
        let se = libm::sqrt(level * (1.0 - level) / n as f64);
        max_excess = f64::max(max_excess, freq - (level + 3.0 * se));
        if freq > max_freq || max_samples == 0 {
            max_freq = freq;
            max_samples = n;
        }
    }
    let n = records.len().max(1) as f64;
    VariantSummary {
        variant,
        rollouts: records.len(),
        successes: count(Outcome::Success),
        violations: count(Outcome::Violation),
        falls: count(Outcome::Fall),
        solver_failures: count(Outcome::SolverFailure),
        constraint_violation_frequency: names
            .into_iter()
            .zip(row_hits)
            .map(|(name, h)| (name, h as f64 / n))
            .collect(),
        max_node_violation_frequency: max_freq,
        max_node_samples: max_samples,
        max_node_excess: if max_excess.is_finite() { max_excess } else { 0.0 },
        mean_alpha: if alpha_n > 0 { alpha_sum / alpha_n as f64 } else { 0.0 },
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    pub margins: BTreeMap<String, f64>,
    pub environments: Vec<Environment>,
    /// Rollouts per variant, in environment order.
    pub records: Vec<(Variant, Vec<RolloutRecord>)>,
    pub summaries: Vec<VariantSummary>,
}

/// Runs every variant in `n_envs` environments drawn from `seed`, one
/// rollout after the other.
///
/// Rollout errors are recorded as solver failures.
pub fn monte_carlo_compare(config: &MonteCarloConfig, seed: u64) -> Result<MonteCarloResult> {
    monte_carlo_compare_with(config, seed, |jobs, run| jobs.iter().map(run).collect())
}

/// As [`monte_carlo_compare`], with `map` evaluating the rollout jobs; it
/// must return results in job order.
pub fn monte_carlo_compare_with<M>(config: &MonteCarloConfig, seed: u64, map: M) -> Result<MonteCarloResult>
where
    M: FnOnce(&[(Variant, usize)], &(dyn Fn(&(Variant, usize)) -> RolloutRecord + Sync)) -> Vec<RolloutRecord>,
{
    config.validate()?;
    let margins = if config.variants.contains(&Variant::Hmpc) {
        calibrate_margins(config, seed)?
    } else {
        config.margins.clone()
    };
    let environments = (0..config.n_envs)
        .map(|i| environment(config, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(Variant, usize)> = config
        .variants
        .iter()
        .flat_map(|&v| (0..config.n_envs).map(move |e| (v, e)))
        .collect();
    let names = BipedWalk::new(config.walk.clone(), config.mpc.dt, config.mpc.horizon)
        .map(|t| crate::runtime::MpcTask::monitored_names(&t))?;
    let run = |&(variant, e): &(Variant, usize)| {
        run_rollout(config, variant, &environments[e], &margins).unwrap_or_else(|_| RolloutRecord {
            monitored_names: names.clone(),
            steps: Vec::new(),
            events: Vec::new(),
            outcome: Outcome::SolverFailure,
            max_violation: 0.0,
            solver_failures: 1,
        })
    };
    let mut results = map(&jobs, &run).into_iter();
    let tolerance = config.plant.violation_tolerance;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &variant in &config.variants {
        let recs: Vec<RolloutRecord> = results.by_ref().take(config.n_envs).collect();
        if recs.len() != config.n_envs {
            return Err(Error::Internal("rollout map returned too few results".into()));
        }
        summaries.push(summarize(variant, &recs, tolerance, config.walk.probability));
        records.push((variant, recs));
    }
    Ok(MonteCarloResult {
        margins,
        environments,
        records,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::ModeId;
    use crate::runtime::RolloutStep;

    #[test]
    fn quantile_interpolates_linearly() {
        let v = [3.0, 1.0, 2.0, 4.0, f64::NAN];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert!((quantile(&v, 0.9).unwrap() - 3.7).abs() < 1e-12);
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn environments_are_seeded_and_independent() {
        let c = MonteCarloConfig::default();
        let a = environment(&c, 7, 3).unwrap();
        assert_eq!(a, environment(&c, 7, 3).unwrap());
        assert_ne!(a.offsets, environment(&c, 7, 4).unwrap().offsets);
        assert_ne!(a.offsets, environment(&c, 8, 3).unwrap().offsets);
        assert_eq!(a.offsets[0], 0.0);
        assert!(a.offsets.iter().all(|o| o.abs() <= 0.04));
    }

    #[test]
    fn gaussian_offsets_are_clipped() {
        let c = MonteCarloConfig {
            offsets: OffsetDistribution::Gaussian { std: 1.0, clip: 0.01 },
            ..MonteCarloConfig::default()
        };
        let e = environment(&c, 1, 0).unwrap();
        assert!(e.offsets.iter().all(|o| o.abs() <= 0.01));
        assert!(e.offsets.iter().skip(1).any(|o| o.abs() == 0.01));
    }

    fn record(monitored: &[[f64; 2]]) -> RolloutRecord {
        RolloutRecord {
            monitored_names: vec![String::from("a"), String::from("b")],
            steps: monitored
                .iter()
                .map(|m| RolloutStep {
                    t: 0.0,
                    regular: true,
                    mode: ModeId(0),
                    x: Vector::zeros(1),
                    u: Vector::zeros(1),
                    monitored: m.to_vec(),
                    solver_failed: false,
                    kkt: 0.0,
                    alpha: 0.5,
                    max_backoff: 0.0,
                    planned_event: None,
                })
                .collect(),
            events: Vec::new(),
            outcome: Outcome::Success,
            max_violation: 0.0,
            solver_failures: 0,
        }
    }

    #[test]
    fn node_frequencies_count_rollouts_per_node() {
        // node 1 row b violated in 1 of 4 rollouts
        let mut recs = vec![record(&[[1.0, 1.0], [1.0, 1.0]]); 3];
        recs.push(record(&[[1.0, 1.0], [1.0, -0.01]]));
        let s = summarize(Variant::Mpc, &recs, 1e-3, 0.9);
        assert_eq!(s.max_node_violation_frequency, 0.25);
        assert_eq!(s.max_node_samples, 4);
        let se = (0.09f64 / 4.0).sqrt();
        assert!((s.max_node_excess - (0.25 - 0.1 - 3.0 * se)).abs() < 1e-12);
        assert_eq!(s.constraint_violation_frequency[0].1, 0.0);
        assert_eq!(s.constraint_violation_frequency[1].1, 0.25);
        assert_eq!(s.mean_alpha, 0.5);
    }

    #[test]
    fn violations_within_tolerance_are_not_counted() {
        let recs = vec![record(&[[-5e-4, f64::INFINITY]]); 2];
        let s = summarize(Variant::GsSmpc, &recs, 1e-3, 0.9);
        assert_eq!(s.max_node_violation_frequency, 0.0);
        assert!(s.node_bound_holds());
    }
}
