//! Barrier terms reducing inequality rows into the stage cost.

/// Value, slope and curvature of the relaxed log barrier `−μ ln c`,
/// continued quadratically below `δ`.
pub fn relaxed_log_barrier(c: f64, mu: f64, delta: f64) -> (f64, f64, f64) {
    if c > delta {
        (-mu * libm::log(c), -mu / c, mu / (c * c))
    } else {
        let r = c - delta;
        let d2 = delta * delta;
        (
            -mu * libm::log(delta) - mu / delta * r + 0.5 * mu / d2 * r * r,
            mu * (c - 2.0 * delta) / d2,
            mu / d2,
        )
    }
}

/// Condensed contribution of one hard row with slack `s` and dual `z`:
/// `(curvature z/s, gradient weight)` such that the row adds
/// `∇cᵀ (z/s) ∇c` to the Hessian and `−∇cᵀ (μ/s − (z/s)(c − s))` to the
/// gradient.
pub fn primal_dual_row(c: f64, s: f64, z: f64, mu: f64) -> (f64, f64) {
    let w = z / s;
    (w, -(mu / s - w * (c - s)))
}

/// Slack and dual steps recovered from the primal step `∇c·Δw`.
pub fn slack_dual_step(c: f64, s: f64, z: f64, mu: f64, dc: f64) -> (f64, f64) {
    let ds = dc + (c - s);
    let dz = -z + mu / s - (z / s) * ds;
    (ds, dz)
}

/// Largest `α ≤ 1` keeping `v + α Δv ≥ (1 − τ) v` for all entries.
pub fn fraction_to_boundary(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha = 1.0f64;
    for (x, dx) in v.iter().zip(dv) {
        if *dx < 0.0 {
            alpha = alpha.min(-tau * x / dx);
        }
    }
    alpha
}
