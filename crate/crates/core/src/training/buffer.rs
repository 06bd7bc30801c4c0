use rand::Rng;

use crate::error::{Error, Result};

/// One environment step as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    /// Each agent's previous action (`None` at the first step).
    pub last_actions: Vec<Option<usize>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    slots: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    state_dim: usize,
    obs_dim: usize,
    n_agents: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, obs_dim: usize, n_agents: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_size", "must be positive"));
        }
        Ok(ReplayBuffer {
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
            state_dim,
            obs_dim,
            n_agents,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        let dims_ok = t.state.len() == self.state_dim
            && t.next_state.len() == self.state_dim
            && t.observations.len() == self.n_agents
            && t.next_observations.len() == self.n_agents
            && t.actions.len() == self.n_agents
            && t.last_actions.len() == self.n_agents
            && t
                .observations
                .iter()
                .chain(&t.next_observations)
                .all(|o| o.len() == self.obs_dim);
        if !dims_ok {
            return Err(Error::Usage(
                "transition dimensions differ from the buffer's environment".into(),
            ));
        }
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `batch_size` i.i.d. uniform draws, or `None` while fewer than
    /// `batch_size` transitions are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch_size == 0 || self.slots.len() < batch_size {
            return None;
        }
        Some(
            (0..batch_size)
                .map(|_| &self.slots[rng.gen_range(0..self.slots.len())])
                .collect(),
        )
    }
}
