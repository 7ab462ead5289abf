//! Node layout of a discretized horizon with a predetermined contact sequence.
//!
//! Node `i` is a flow node (`x_{i+1} = F_m(x_i, u_i)` over `t_{i+1} − t_i`),
//! a jump node (`x_{j+1} = R(x_j)` with `t_{j+1} = t_j`) or the terminal node
//! `N`. Jump nodes carry no input.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{HybridModel, ModeId, TransitionId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Flow(ModeId),
    Jump(TransitionId),
    Terminal,
}

impl NodeKind {
    pub fn is_flow(&self) -> bool {
        matches!(self, NodeKind::Flow(_))
    }

    pub fn is_jump(&self) -> bool {
        matches!(self, NodeKind::Jump(_))
    }
}

/// A planned switch at a given time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannedEvent {
    pub time: f64,
    pub transition: TransitionId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSchedule {
    times: Vec<f64>,
    kinds: Vec<NodeKind>,
    modes: Vec<ModeId>,
}

impl ModeSchedule {
    /// Builds a schedule from explicit node times and kinds and validates it
    /// against `model`.
    pub fn new(model: &HybridModel, times: Vec<f64>, kinds: Vec<NodeKind>) -> Result<Self> {
        if times.len() != kinds.len() {
            return Err(Error::Schedule("times and kinds differ in length".into()));
        }
        if times.len() < 2 {
            return Err(Error::Schedule("horizon must have at least one interval".into()));
        }
        let n = times.len() - 1;
        if kinds[n] != NodeKind::Terminal || kinds[..n].contains(&NodeKind::Terminal) {
            return Err(Error::Schedule("exactly the last node must be terminal".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Schedule("non-finite node time".into()));
        }
        let mut modes = Vec::with_capacity(n + 1);
        let mut current = None;
        for i in 0..n {
            match kinds[i] {
                NodeKind::Flow(m) => {
                    if m.0 >= model.num_modes() {
                        return Err(Error::UnknownMode(m.0));
                    }
                    if let Some(c) = current {
                        if c != m && !kinds[i - 1].is_jump() {
                            return Err(Error::Schedule(format!(
                                "mode changes at node {i} without a jump node"
                            )));
                        }
                    }
                    if !(times[i + 1] > times[i]) {
                        return Err(Error::Schedule(format!(
                            "flow node {i} has non-positive duration"
                        )));
                    }
                    current = Some(m);
                    modes.push(m);
                }
                NodeKind::Jump(tr) => {
                    let tr_def = model.transition(tr)?;
                    if i == 0 || !kinds[i - 1].is_flow() {
                        return Err(Error::Schedule(format!(
                            "jump node {i} has no preceding flow node"
                        )));
                    }
                    if i + 1 >= n || !kinds[i + 1].is_flow() {
                        return Err(Error::Schedule(format!(
                            "jump node {i} has no following flow node"
                        )));
                    }
                    if current != Some(tr_def.from) {
                        return Err(Error::Schedule(format!(
                            "jump node {i} leaves mode {} but the schedule is in {:?}",
                            tr_def.from.0, current
                        )));
                    }
                    if kinds[i + 1] != NodeKind::Flow(tr_def.to) {
                        return Err(Error::Schedule(format!(
                            "jump node {i} enters mode {} but the next node differs",
                            tr_def.to.0
                        )));
                    }
                    if times[i + 1] != times[i] {
                        return Err(Error::Schedule(format!(
                            "jump node {i} must share its time with node {}",
                            i + 1
                        )));
                    }
                    modes.push(tr_def.from);
                }
                NodeKind::Terminal => unreachable!(),
            }
        }
        modes.push(current.expect("node 0 is a flow node"));
        Ok(Self {
            times,
            kinds,
            modes,
        })
    }

    /// Uniform grid `t0, t0 + dt, …` over `horizon` with events spliced in.
    ///
    /// Events within `0.1·dt` of either end are dropped; grid points within
    /// `0.1·dt` of an event are removed so no interval degenerates.
    pub fn from_events(
        model: &HybridModel,
        t0: f64,
        dt: f64,
        horizon: f64,
        initial_mode: ModeId,
        events: &[PlannedEvent],
    ) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(Error::Argument(format!(
                "dt {dt} and horizon {horizon} must be positive"
            )));
        }
        let steps = libm::round(horizon / dt) as usize;
        if steps == 0 {
            return Err(Error::Schedule("horizon shorter than one step".into()));
        }
        let t_end = t0 + steps as f64 * dt;
        let tol = 0.1 * dt;
        let mut kept: Vec<PlannedEvent> = events
            .iter()
            .copied()
            .filter(|e| e.time >= t0 + tol && e.time <= t_end - tol)
            .collect();
        kept.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in kept.windows(2) {
            if w[1].time - w[0].time < tol {
                return Err(Error::Schedule(format!(
                    "events at {} and {} are closer than 0.1·dt",
                    w[0].time, w[1].time
                )));
            }
        }

        let mut times = Vec::with_capacity(steps + 2 * kept.len() + 1);
        let mut kinds = Vec::with_capacity(times.capacity());
        let mut mode = initial_mode;
        let mut next_event = 0;
        for k in 0..=steps {
            let t = if k == steps { t_end } else { t0 + k as f64 * dt };
            while k > 0 && next_event < kept.len() && kept[next_event].time <= t + tol {
                let e = kept[next_event];
                next_event += 1;
                let tr = model.transition(e.transition)?;
                times.push(e.time);
                kinds.push(NodeKind::Jump(e.transition));
                times.push(e.time);
                mode = tr.to;
                kinds.push(NodeKind::Flow(mode));
            }
            let near_event = kept
                .iter()
                .any(|e| (e.time - t).abs() < tol);
            if near_event && k != 0 && k != steps {
                continue;
            }
            times.push(t);
            kinds.push(if k == steps {
                NodeKind::Terminal
            } else {
                NodeKind::Flow(mode)
            });
        }
        Self::new(model, times, kinds)
    }

    /// Number of intervals `N`.
    pub fn horizon_len(&self) -> usize {
        self.times.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    /// Mode active at node `i`; for a jump node, the pre-event mode.
    pub fn mode(&self, i: usize) -> ModeId {
        self.modes[i]
    }

    /// Duration of flow node `i`, zero for jump and terminal nodes.
    pub fn dt(&self, i: usize) -> f64 {
        match self.kinds[i] {
            NodeKind::Flow(_) => self.times[i + 1] - self.times[i],
            _ => 0.0,
        }
    }

    pub fn jump_nodes(&self) -> impl Iterator<Item = (usize, TransitionId)> + '_ {
        self.kinds.iter().enumerate().filter_map(|(i, k)| match k {
            NodeKind::Jump(tr) => Some((i, *tr)),
            _ => None,
        })
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_nodes().count()
    }

    pub fn num_flow_nodes(&self) -> usize {
        self.kinds.iter().filter(|k| k.is_flow()).count()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Index of the last node with `t_i ≤ t`, preferring flow nodes when a
    /// jump node shares the time.
    pub fn node_at(&self, t: f64) -> usize {
        let mut idx = 0;
        for (i, ti) in self.times.iter().enumerate() {
            if *ti <= t {
                idx = i;
            } else {
                break;
            }
        }
        idx
    }
}
