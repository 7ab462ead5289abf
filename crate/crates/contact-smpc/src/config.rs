//! Experiment configuration: one TOML file per experiment.
//!
//! Every field has a default, unknown keys are rejected and
//! [`ExperimentConfig::emit`] writes the canonical form that parses back to
//! the same value and the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::marker::PhantomData;

use contact_smpc_core::runtime::{Motion, Variant};
use contact_smpc_core::scenario::{HopParams, WalkParams};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::CliError;

/// Enums spelled by their label in the file.
pub trait Label: Sized + Copy + 'static {
    const KIND: &'static str;
    fn label(&self) -> &'static str;
    fn parse(s: &str) -> Option<Self>;
    fn all() -> &'static [Self];
}

impl Label for Variant {
    const KIND: &'static str = "variant";
    fn label(&self) -> &'static str {
        Variant::label(self)
    }
    fn parse(s: &str) -> Option<Self> {
        Variant::parse(s)
    }
    fn all() -> &'static [Self] {
        &Variant::ALL
    }
}

impl Label for Motion {
    const KIND: &'static str = "motion";
    fn label(&self) -> &'static str {
        Motion::label(self)
    }
    fn parse(s: &str) -> Option<Self> {
        Motion::parse(s)
    }
    fn all() -> &'static [Self] {
        &Motion::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Named<T>(pub T);

impl<T: Label> Serialize for Named<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.label())
    }
}

impl<'de, T: Label> Deserialize<'de> for Named<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<T>(PhantomData<T>);
        impl<T: Label> Visitor<'_> for V<T> {
            type Value = Named<T>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a {} name", T::KIND)
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Named<T>, E> {
                T::parse(s).map(Named).ok_or_else(|| {
                    let names: Vec<_> = T::all().iter().map(Label::label).collect();
                    E::custom(format!("unknown {} '{s}', expected one of {}", T::KIND, names.join(", ")))
                })
            }
        }
        d.deserialize_str(V(PhantomData))
    }
}

fn named<T: Label>(values: &[T]) -> Vec<Named<T>> {
    values.iter().copied().map(Named).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    DoubleIntegrator,
    Biped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gait {
    /// Single mode, no events.
    None,
    /// Alternating single support.
    Walk,
    /// Double stance and flight with two-guard events.
    Hop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetKind {
    Uniform,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub id: String,
    pub model: ModelName,
    pub seed: u64,
    pub out: String,
    pub schedule: ScheduleSection,
    pub uncertainty: UncertaintySection,
    pub solver: SolverSection,
    pub double_integrator: DoubleIntegratorSection,
    pub walk: WalkSection,
    pub hop: HopSection,
    pub covcompare: CovCompareSection,
    pub montecarlo: MonteCarloSection,
    pub bench: BenchSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            model: ModelName::Biped,
            seed: 0,
            out: "out".into(),
            schedule: ScheduleSection::default(),
            uncertainty: UncertaintySection::default(),
            solver: SolverSection::default(),
            double_integrator: DoubleIntegratorSection::default(),
            walk: WalkSection::default(),
            hop: HopSection::default(),
            covcompare: CovCompareSection::default(),
            montecarlo: MonteCarloSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub gait: Gait,
    /// Node spacing and controller sample period, seconds.
    pub dt: f64,
    /// Prediction horizon, seconds; the hop gait derives its own.
    pub horizon: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            gait: Gait::Walk,
            dt: 0.025,
            horizon: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    pub variant: Named<Variant>,
    /// `C_g`, variance of each guard component.
    pub guard_variance: f64,
    /// Diagonal of the flow noise `W`.
    pub flow_noise: f64,
    /// Diagonal of the jump noise `W_j`.
    pub jump_noise: f64,
    /// Chance constraint satisfaction probability `p`.
    pub probability: f64,
    /// Diagonal of `P₀`.
    pub initial_variance: f64,
    /// Fixed backoffs per constraint name for the margin variant.
    pub margins: BTreeMap<String, f64>,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self {
            variant: Named(Variant::GsSmpc),
            guard_variance: 1e-3,
            flow_noise: 1e-6,
            jump_noise: 1e-6,
            probability: 0.9,
            initial_variance: 0.0,
            margins: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Iteration budget of offline solves.
    pub max_iterations: usize,
    pub tolerance: f64,
    pub mu_init: f64,
    pub line_search: bool,
    /// Iterations per controller sample.
    pub rti_iterations: usize,
    /// Iteration budget of the first controller solve.
    pub init_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            mu_init: 1e-3,
            line_search: true,
            rti_iterations: 1,
            init_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubleIntegratorSection {
    pub x0: [f64; 2],
    pub input_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_max: Option<f64>,
}

impl Default for DoubleIntegratorSection {
    fn default() -> Self {
        Self {
            x0: [1.0, 0.0],
            input_max: 10.0,
            position_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    pub step_period: f64,
    pub speed: f64,
    pub height: f64,
    pub stride: f64,
    pub rise: f64,
    pub flat_steps: usize,
    pub stairs: usize,
    pub curvature: f64,
    pub clearance: f64,
    pub reach_front: f64,
    pub reach_back: f64,
    pub swing_rate_weight: f64,
    pub backoff_clip: f64,
    pub seek_depth: f64,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for WalkSection {
    fn default() -> Self {
        let p = WalkParams::default();
        Self {
            step_period: p.step_period,
            speed: p.speed,
            height: p.height,
            stride: p.stride,
            rise: p.rise,
            flat_steps: p.flat_steps,
            stairs: p.stairs,
            curvature: p.curvature,
            clearance: p.clearance,
            reach_front: p.reach_front,
            reach_back: p.reach_back,
            swing_rate_weight: p.swing_rate_weight,
            backoff_clip: p.backoff_clip,
            seek_depth: p.seek_depth,
            min_height: p.min_height,
            max_height: p.max_height,
        }
    }
}

impl WalkSection {
    pub fn params(&self, u: &UncertaintySection) -> WalkParams {
        WalkParams {
            step_period: self.step_period,
            speed: self.speed,
            height: self.height,
            stride: self.stride,
            rise: self.rise,
            flat_steps: self.flat_steps,
            stairs: self.stairs,
            curvature: self.curvature,
            clearance: self.clearance,
            reach_front: self.reach_front,
            reach_back: self.reach_back,
            probability: u.probability,
            swing_rate_weight: self.swing_rate_weight,
            backoff_clip: self.backoff_clip,
            seek_depth: self.seek_depth,
            guard_variance: u.guard_variance,
            flow_noise: u.flow_noise,
            jump_noise: u.jump_noise,
            min_height: self.min_height,
            max_height: self.max_height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopSection {
    pub hops: usize,
    pub stance_time: f64,
    pub flight_time: f64,
    pub speed: f64,
    pub height: f64,
    pub rest_length: f64,
    pub foot_width: f64,
    pub clearance: f64,
    pub tail: f64,
}

impl Default for HopSection {
    fn default() -> Self {
        let p = HopParams::default();
        Self {
            hops: p.hops,
            stance_time: p.stance_time,
            flight_time: p.flight_time,
            speed: p.speed,
            height: p.height,
            rest_length: p.rest_length,
            foot_width: p.foot_width,
            clearance: p.clearance,
            tail: p.tail,
        }
    }
}

impl HopSection {
    pub fn params(&self, u: &UncertaintySection) -> HopParams {
        HopParams {
            hops: self.hops,
            stance_time: self.stance_time,
            flight_time: self.flight_time,
            speed: self.speed,
            height: self.height,
            rest_length: self.rest_length,
            foot_width: self.foot_width,
            clearance: self.clearance,
            tail: self.tail,
            guard_variance: u.guard_variance,
            flow_noise: u.flow_noise,
            jump_noise: u.jump_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovCompareSection {
    pub motions: Vec<Named<Motion>>,
    /// `C_g` values for methods (a) and (b).
    pub guard_variances: Vec<f64>,
    /// `W_j` values for method (c).
    pub jump_noises: Vec<f64>,
    /// Adds one (c) cell per `C_g` whose `W_j` matches the trace of (a).
    pub trace_match: bool,
    /// Horizon of the walking motions, seconds.
    pub horizon: f64,
    /// Path curvature of the curved motion, 1/m.
    pub curvature: f64,
}

impl Default for CovCompareSection {
    fn default() -> Self {
        Self {
            motions: named(&Motion::ALL),
            guard_variances: vec![1e-4, 1e-3, 1e-2],
            jump_noises: vec![1e-5, 1e-4, 1e-3],
            trace_match: true,
            horizon: 1.5,
            curvature: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub variants: Vec<Named<Variant>>,
    pub n_envs: usize,
    /// Simulated time per rollout, seconds.
    pub duration: f64,
    pub offsets: OffsetKind,
    /// Half width of the uniform terrain offsets, metres.
    pub offset_range: f64,
    /// Standard deviation of the gaussian terrain offsets, clipped at
    /// `offset_range`.
    pub offset_std: f64,
    pub plant_noise: bool,
    pub substeps: usize,
    pub violation_tolerance: f64,
    /// Quantile of the calibration backoffs used as fixed margins when
    /// none are configured.
    pub margin_quantile: f64,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            variants: named(&Variant::ALL),
            n_envs: 20,
            duration: 2.0,
            offsets: OffsetKind::Uniform,
            offset_range: 0.04,
            offset_std: 0.02,
            plant_noise: true,
            substeps: 4,
            violation_tolerance: 1e-3,
            margin_quantile: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub repetitions: usize,
    /// Newton iterations timed per repetition and mode.
    pub iterations: usize,
    /// Untimed repetitions before measuring.
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            repetitions: 30,
            iterations: 5,
            warmup: 3,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the line and key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical form.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Config(what.to_string()));
        match (self.model, self.schedule.gait) {
            (ModelName::DoubleIntegrator, Gait::None) | (ModelName::Biped, Gait::Walk | Gait::Hop) => {}
            (m, g) => {
                return Err(CliError::Config(format!(
                    "schedule.gait '{}' is not available for model '{}'",
                    label_of(&g),
                    label_of(&m)
                )))
            }
        }
        if !(self.schedule.dt > 0.0) || !(self.schedule.horizon >= self.schedule.dt) {
            return bad("schedule: need 0 < dt <= horizon");
        }
        let u = &self.uncertainty;
        if !(u.probability > 0.0 && u.probability < 1.0) {
            return bad("uncertainty.probability must lie in (0, 1)");
        }
        let variances = [u.guard_variance, u.flow_noise, u.jump_noise, u.initial_variance];
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("uncertainty: variances must be finite and non-negative");
        }
        if u.margins.values().any(|m| !(*m >= 0.0)) {
            return bad("uncertainty.margins must be non-negative");
        }
        let s = &self.solver;
        if s.max_iterations == 0 || s.rti_iterations == 0 || s.init_iterations == 0 {
            return bad("solver: iteration budgets must be positive");
        }
        if !(s.tolerance > 0.0) || !(s.mu_init > 0.0) {
            return bad("solver: tolerance and mu_init must be positive");
        }
        let c = &self.covcompare;
        if c.guard_variances.iter().chain(&c.jump_noises).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("covcompare: sweep values must be finite and non-negative");
        }
        let m = &self.montecarlo;
        if m.n_envs == 0 || m.substeps == 0 {
            return bad("montecarlo: n_envs and substeps must be positive");
        }
        if !(m.duration > 0.0) || !(m.offset_range >= 0.0) || !(m.offset_std >= 0.0) {
            return bad("montecarlo: duration must be positive and offsets non-negative");
        }
        if !(0.0..=1.0).contains(&m.margin_quantile) {
            return bad("montecarlo.margin_quantile must lie in [0, 1]");
        }
        if self.bench.repetitions < 30 {
            return bad("bench.repetitions must be at least 30");
        }
        if self.bench.iterations == 0 {
            return bad("bench.iterations must be positive");
        }
        Ok(())
    }
}

fn label_of<T: Serialize>(v: &T) -> String {
    toml::Value::try_from(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips_byte_for_byte() {
        let mut cfg = ExperimentConfig::default();
        cfg.uncertainty.margins.insert("reach".into(), 0.023);
        cfg.double_integrator.position_max = Some(0.5);
        cfg.montecarlo.variants = named(&[Variant::Mpc, Variant::GsSmpc]);
        let text = cfg.emit();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.emit(), text);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = ExperimentConfig::parse("[solver]\nmax_iteration = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("max_iteration"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_labels_list_the_alternatives() {
        let err = ExperimentConfig::parse("[uncertainty]\nvariant = \"lqr\"\n").unwrap_err();
        assert!(err.to_string().contains("gs-smpc, smpc, hmpc, mpc"), "{err}");
    }

    #[test]
    fn gait_must_fit_the_model() {
        let err = ExperimentConfig::parse("model = \"double-integrator\"\n").unwrap_err();
        assert!(err.to_string().contains("schedule.gait"), "{err}");
        let ok = "model = \"double-integrator\"\n[schedule]\ngait = \"none\"\n";
        assert!(ExperimentConfig::parse(ok).is_ok());
    }

    #[test]
    fn bench_needs_thirty_repetitions() {
        assert!(ExperimentConfig::parse("[bench]\nrepetitions = 29\n").is_err());
    }

    #[test]
    fn walk_section_defaults_match_the_library() {
        let u = UncertaintySection::default();
        assert_eq!(WalkSection::default().params(&u), WalkParams::default());
        assert_eq!(HopSection::default().params(&u), HopParams::default());
    }
}
