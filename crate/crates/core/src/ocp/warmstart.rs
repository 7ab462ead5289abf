//! Shifting an iterate onto a new schedule.

use alloc::vec::Vec;

use crate::linalg::{Matrix, Vector};
use crate::schedule::NodeKind;

use super::problem::OcpProblem;
use super::solver::{row_layout, SolverOptions, SolverState};

/// Index of the last sample with time `≤ t` (the first one among equal
/// times unless `after_event`).
fn bracket(times: &[f64], t: f64, after_event: bool) -> usize {
    let mut idx = 0;
    for (i, ti) in times.iter().enumerate() {
        if *ti < t || (*ti == t && (after_event || times[idx] != t)) {
            idx = i;
        } else if *ti > t {
            break;
        }
    }
    idx
}

fn lerp_vec(a: &Vector, b: &Vector, w: f64) -> Vector {
    a * (1.0 - w) + b * w
}

fn lerp_mat(a: &Matrix, b: &Matrix, w: f64) -> Matrix {
    a * (1.0 - w) + b * w
}

fn weight(t0: f64, t1: f64, t: f64) -> f64 {
    if t1 > t0 {
        ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Warm start for `problem` from an iterate on another schedule.
///
/// States, inputs and gains are interpolated linearly in time and held
/// beyond the old horizon. Slacks and duals are copied from the nearest old
/// node with the same row layout, otherwise reinitialized.
pub fn shift(old: &SolverState, problem: &OcpProblem, options: &SolverOptions) -> SolverState {
    shift_aligned(old, problem, options, 0.0)
}

/// Like [`shift`], with the old iterate moved by `offset` seconds first.
///
/// Used to line up planned events with realized ones.
pub fn shift_aligned(
    old: &SolverState,
    problem: &OcpProblem,
    options: &SolverOptions,
    offset: f64,
) -> SolverState {
    let old_times: Vec<f64> = old.times.iter().map(|t| t + offset).collect();
    let sched = &problem.schedule;
    let n = problem.num_nodes();
    let nx = problem.model.nx();

    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        let t = sched.time(i);
        let after = i > 0 && sched.kind(i - 1).is_jump();
        let a = bracket(&old_times, t, after);
        let x = if a + 1 < old_times.len() && old_times[a + 1] > old_times[a] {
            lerp_vec(&old.xs[a], &old.xs[a + 1], weight(old_times[a], old_times[a + 1], t))
        } else {
            old.xs[a].clone()
        };
        xs.push(x);
    }
    xs[0] = problem.x0.clone();

    let flow: Vec<usize> = (0..old.kinds.len()).filter(|&k| old.kinds[k].is_flow()).collect();
    let flow_times: Vec<f64> = flow.iter().map(|&k| old_times[k]).collect();
    let nu = problem.model.nu();
    let mut us = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        if !sched.kind(i).is_flow() || flow.is_empty() {
            us.push(Vector::zeros(problem.input_dim(i)));
            gains.push(Matrix::zeros(problem.input_dim(i), nx));
            continue;
        }
        let t = sched.time(i);
        let a = bracket(&flow_times, t, true);
        let ka = flow[a];
        let (u, k) = if a + 1 < flow.len() && flow_times[a] <= t {
            let kb = flow[a + 1];
            let w = weight(flow_times[a], flow_times[a + 1], t);
            (lerp_vec(&old.us[ka], &old.us[kb], w), lerp_mat(&old.gains[ka], &old.gains[kb], w))
        } else {
            (old.us[ka].clone(), old.gains[ka].clone())
        };
        debug_assert_eq!(u.len(), nu);
        us.push(u);
        gains.push(k);
    }

    let mut st = SolverState::with_primal(problem, options, xs, us);
    st.gains = gains;
    st.mu = old.mu;
    let layout = row_layout(problem);
    for i in 0..n {
        if layout[i].is_empty() {
            st.fresh[i] = false;
            continue;
        }
        let t = sched.time(i);
        let flow_node = matches!(sched.kind(i), NodeKind::Flow(_));
        let best = (0..old_times.len())
            .filter(|&k| old.layout[k] == layout[i] && old.kinds[k].is_flow() == flow_node)
            .min_by(|&p, &q| {
                (old_times[p] - t)
                    .abs()
                    .partial_cmp(&(old_times[q] - t).abs())
                    .unwrap_or(core::cmp::Ordering::Equal)
            });
        if let Some(k) = best {
            st.slacks[i] = old.slacks[k].clone();
            st.duals[i] = old.duals[k].clone();
            st.fresh[i] = old.fresh[k];
            st.backoffs[i] = old.backoffs[k].clone();
            st.backoff_seeded[i] = old.backoff_seeded[k];
        }
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_prefers_pre_event_sample_unless_asked() {
        let times = [0.0, 0.1, 0.1, 0.2];
        assert_eq!(bracket(&times, 0.1, false), 1);
        assert_eq!(bracket(&times, 0.1, true), 2);
        assert_eq!(bracket(&times, 0.15, false), 2);
        assert_eq!(bracket(&times, 0.5, false), 3);
        assert_eq!(bracket(&times, -1.0, false), 0);
    }
}
