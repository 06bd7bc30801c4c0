//! Closed-form sufficient conditions on the OW weight `alpha` and on the kernel
//! bandwidth `sigma` for recovering the greedy-optimal joint action.
//!
//! These are diagnostics only: training never enforces them.

use crate::error::{Error, Result};

/// Gap between the largest value and the largest strictly smaller value.
pub fn delta_s(values: &[f64]) -> Result<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let second = values
        .iter()
        .copied()
        .filter(|&v| v < max)
        .fold(f64::NEG_INFINITY, f64::max);
    if second == f64::NEG_INFINITY {
        return Err(Error::UndefinedGap(values.len()));
    }
    Ok(max - second)
}

/// Reward range `max r - min r`.
pub fn reward_range(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub delta_s: f64,
    pub gamma: f64,
    pub r_max: f64,
    pub n_actions: usize,
    pub n_agents: usize,
}

/// `|A|^N` as a float, or a range error when it is not finite.
pub fn joint_action_space(n_actions: usize, n_agents: usize) -> Result<f64> {
    let exp = i32::try_from(n_agents)
        .map_err(|_| Error::Range(format!("{n_agents} agents is too many")))?;
    let size = (n_actions as f64).powi(exp);
    if size.is_finite() && size > 0.0 {
        Ok(size)
    } else {
        Err(Error::Range(format!(
            "{n_actions}^{n_agents} is not representable"
        )))
    }
}

fn check_gap(delta_s: f64) -> Result<()> {
    if delta_s > 0.0 && delta_s.is_finite() {
        Ok(())
    } else {
        Err(Error::config("delta_s", "must be positive and finite"))
    }
}

/// Strict upper bound `delta_s^2 (1-gamma)^2 / (r_max^2 |A|^N)` on alpha.
pub fn alpha_bound(inputs: &BoundInputs) -> Result<f64> {
    check_gap(inputs.delta_s)?;
    if !(0.0..1.0).contains(&inputs.gamma) {
        return Err(Error::config("gamma", "must lie in [0, 1)"));
    }
    if !(inputs.r_max > 0.0) {
        return Err(Error::config("r_max", "must be positive"));
    }
    let space = joint_action_space(inputs.n_actions, inputs.n_agents)?;
    let d = inputs.delta_s * (1.0 - inputs.gamma) / inputs.r_max;
    Ok(d * d / space)
}

/// Strict upper bound `delta_s * sqrt(e / (2 |A|^N))` on sigma. Independent of
/// the reward range and of gamma.
pub fn sigma_bound(delta_s: f64, n_actions: usize, n_agents: usize) -> Result<f64> {
    check_gap(delta_s)?;
    let space = joint_action_space(n_actions, n_agents)?;
    Ok(delta_s * (std::f64::consts::E / (2.0 * space)).sqrt())
}
