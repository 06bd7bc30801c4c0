//! Cooperative environments sharing one stepping interface.
//!
//! All environments hand out a single team reward per step and every action is
//! always available.

mod gridnav;
mod matrix;
mod particle;

pub use gridnav::{gridnav_step, GridAction, GridLayout, GridNav, GridNavState, GridStep};
pub use matrix::{MatrixGame, MatrixGameEnv};
pub use particle::{ParticleNav, ParticleNavState, ParticleParams};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type EnvRng = ChaCha8Rng;

/// Largest joint action space we are willing to enumerate.
pub const ENUMERATION_CAP: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;

    fn reset(&mut self, rng: &mut EnvRng);

    /// Global state vector, visible only during centralised training.
    fn state(&self) -> Vec<f64>;

    fn observations(&self) -> Vec<Vec<f64>>;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome>;

    fn available_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.n_actions()]
    }

    /// The payoff table, for single-state matrix games.
    fn matrix_game(&self) -> Option<&MatrixGame> {
        None
    }
}

pub(crate) fn check_joint_action(
    joint_action: &[usize],
    n_agents: usize,
    n_actions: usize,
) -> Result<()> {
    if joint_action.len() != n_agents {
        return Err(Error::Usage(format!(
            "joint action has {} entries for {n_agents} agents",
            joint_action.len()
        )));
    }
    if let Some(a) = joint_action.iter().find(|&&a| a >= n_actions) {
        return Err(Error::Usage(format!(
            "action {a} out of range for {n_actions} actions"
        )));
    }
    Ok(())
}

/// `n_actions^n_agents`, or a range error if that exceeds the enumeration cap.
pub fn joint_action_count(n_agents: usize, n_actions: usize) -> Result<usize> {
    let count = u32::try_from(n_agents)
        .ok()
        .and_then(|n| n_actions.checked_pow(n))
        .filter(|&c| c <= ENUMERATION_CAP);
    count.ok_or_else(|| {
        Error::Usage(format!(
            "{n_actions}^{n_agents} joint actions exceed the enumeration cap of {ENUMERATION_CAP}"
        ))
    })
}

/// Every joint action in row-major order (agent 0 varies slowest).
pub fn enumerate_joint_actions(n_agents: usize, n_actions: usize) -> Result<Vec<Vec<usize>>> {
    let total = joint_action_count(n_agents, n_actions)?;
    Ok((0..total)
        .map(|mut flat| {
            let mut joint = vec![0; n_agents];
            for slot in joint.iter_mut().rev() {
                *slot = flat % n_actions;
                flat /= n_actions;
            }
            joint
        })
        .collect())
}

pub(crate) fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}
