use rand::Rng;

use super::{check_joint_action, EnvRng, Environment, StepOutcome};
use crate::error::{Error, Result};

const ARENA: f64 = 1.0;

/// Acceleration direction for each of the five discrete actions.
const DIRECTIONS: [[f64; 2]; 5] = [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleParams {
    /// Agents and landmarks come in equal numbers.
    pub n_agents: usize,
    pub dt: f64,
    pub damping: f64,
    pub accel_gain: f64,
    pub radius: f64,
    pub episode_limit: usize,
    /// Added once per overlapping agent pair, before averaging over agents.
    pub collision_penalty: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        ParticleParams {
            n_agents: 3,
            dt: 0.1,
            damping: 0.25,
            accel_gain: 5.0,
            radius: 0.1,
            episode_limit: 25,
            collision_penalty: -10.0,
        }
    }
}

impl ParticleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::config("n_agents", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("particle_dt", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::config("particle_damping", "must lie in [0, 1]"));
        }
        if !(self.radius >= 0.0) {
            return Err(Error::config("particle_radius", "must be non-negative"));
        }
        if self.episode_limit == 0 {
            return Err(Error::config("episode_limit", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleNavState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
    pub steps: usize,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl ParticleNavState {
    pub fn overlapping_pairs(&self, radius: f64) -> usize {
        let p = &self.positions;
        (0..p.len())
            .flat_map(|i| (i + 1..p.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| distance(p[i], p[j]) < 2.0 * radius)
            .count()
    }

    /// `(-sum over landmarks of nearest-agent distance + penalty * overlaps) / N`.
    pub fn reward(&self, params: &ParticleParams) -> f64 {
        let coverage: f64 = self
            .landmarks
            .iter()
            .map(|&l| {
                self.positions
                    .iter()
                    .map(|&p| distance(p, l))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let collisions = self.overlapping_pairs(params.radius) as f64;
        (-coverage + params.collision_penalty * collisions) / self.positions.len() as f64
    }
}

/// Continuous cooperative navigation in `[-1, 1]^2` with discrete accelerations.
#[derive(Clone, Debug)]
pub struct ParticleNav {
    params: ParticleParams,
    state: ParticleNavState,
}

impl ParticleNav {
    pub fn new(params: ParticleParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_agents;
        Ok(ParticleNav {
            state: ParticleNavState {
                positions: vec![[0.0; 2]; n],
                velocities: vec![[0.0; 2]; n],
                landmarks: vec![[0.0; 2]; n],
                steps: 0,
            },
            params,
        })
    }

    pub fn params(&self) -> &ParticleParams {
        &self.params
    }

    pub fn current(&self) -> &ParticleNavState {
        &self.state
    }

    pub fn set_state(&mut self, state: ParticleNavState) -> Result<()> {
        let n = self.params.n_agents;
        if state.positions.len() != n || state.velocities.len() != n || state.landmarks.len() != n
        {
            return Err(Error::Usage(format!("state must describe {n} agents and landmarks")));
        }
        self.state = state;
        Ok(())
    }
}

impl Environment for ParticleNav {
    fn n_agents(&self) -> usize {
        self.params.n_agents
    }

    fn n_actions(&self) -> usize {
        DIRECTIONS.len()
    }

    fn state_dim(&self) -> usize {
        6 * self.params.n_agents
    }

    fn obs_dim(&self) -> usize {
        let n = self.params.n_agents;
        4 + 2 * n + 2 * (n - 1)
    }

    fn episode_limit(&self) -> usize {
        self.params.episode_limit
    }

    fn reset(&mut self, rng: &mut EnvRng) {
        let n = self.params.n_agents;
        let mut sample = || [rng.gen_range(-ARENA..=ARENA), rng.gen_range(-ARENA..=ARENA)];
        let positions = (0..n).map(|_| sample()).collect();
        let landmarks = (0..n).map(|_| sample()).collect();
        self.state = ParticleNavState {
            positions,
            velocities: vec![[0.0; 2]; n],
            landmarks,
            steps: 0,
        };
    }

    /// Positions, then velocities, then landmark positions.
    fn state(&self) -> Vec<f64> {
        let s = &self.state;
        s.positions
            .iter()
            .chain(&s.velocities)
            .chain(&s.landmarks)
            .flatten()
            .copied()
            .collect()
    }

    /// Own position and velocity, then landmark offsets, then offsets to the
    /// other agents.
    fn observations(&self) -> Vec<Vec<f64>> {
        let s = &self.state;
        s.positions
            .iter()
            .enumerate()
            .map(|(i, &me)| {
                let mut obs = Vec::with_capacity(self.obs_dim());
                obs.extend(me);
                obs.extend(s.velocities[i]);
                for l in &s.landmarks {
                    obs.extend([l[0] - me[0], l[1] - me[1]]);
                }
                for (j, other) in s.positions.iter().enumerate() {
                    if j != i {
                        obs.extend([other[0] - me[0], other[1] - me[1]]);
                    }
                }
                obs
            })
            .collect()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        check_joint_action(joint_action, self.params.n_agents, DIRECTIONS.len())?;
        let p = &self.params;
        let s = &mut self.state;
        for ((pos, vel), &a) in s.positions.iter_mut().zip(&mut s.velocities).zip(joint_action) {
            let dir = DIRECTIONS[a];
            for k in 0..2 {
                vel[k] = (1.0 - p.damping) * vel[k] + p.accel_gain * dir[k] * p.dt;
                pos[k] = (pos[k] + vel[k] * p.dt).clamp(-ARENA, ARENA);
            }
        }
        s.steps += 1;
        Ok(StepOutcome {
            reward: s.reward(p),
            terminal: s.steps >= p.episode_limit,
        })
    }
}
