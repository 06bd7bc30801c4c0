//! Experience collection, batched updates, target syncing and evaluation.

mod buffer;
mod learner;

pub use buffer::{ReplayBuffer, Transition};
pub use learner::{BatchTargets, EnvDims, Learner, TrainMetrics};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{TargetUpdateUnit, TrainingConfig};
use crate::decomposition::{argmax, greedy_joint_action, AgentQNet};
use crate::env::{EnvRng, Environment, MatrixGame};
use crate::error::{Error, Result};

/// Linear anneal from `max` to `min` over `anneal_steps`, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub max: f64,
    pub min: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn from_config(config: &TrainingConfig) -> Self {
        EpsilonSchedule {
            max: config.max_epsilon,
            min: config.min_epsilon,
            anneal_steps: config.anneal_steps,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.min;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.max - (self.max - self.min) * frac
    }
}

pub fn epsilon_at(step: u64, schedule: &EpsilonSchedule) -> f64 {
    schedule.at(step)
}

/// Epsilon-greedy joint action: each agent independently explores uniformly
/// with probability `epsilon`, otherwise takes its greedy action.
pub fn select_actions<R: Rng + ?Sized>(
    agents: &AgentQNet,
    observations: &[Vec<f64>],
    last_actions: &[Option<usize>],
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Usage(format!("epsilon {epsilon} outside [0, 1]")));
    }
    (0..agents.n_agents())
        .map(|i| {
            if rng.gen::<f64>() < epsilon {
                Ok(rng.gen_range(0..agents.n_actions()))
            } else {
                Ok(argmax(&agents.q_values(&observations[i], last_actions[i], i)?))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub length: usize,
}

/// Plays one episode, storing each transition in `buffer` when given.
pub fn run_episode(
    env: &mut dyn Environment,
    agents: &AgentQNet,
    epsilon: f64,
    mut buffer: Option<&mut ReplayBuffer>,
    rng: &mut EnvRng,
) -> Result<EpisodeStats> {
    env.reset(rng);
    let n = env.n_agents();
    let mut state = env.state();
    let mut observations = env.observations();
    let mut last_actions: Vec<Option<usize>> = vec![None; n];
    let mut stats = EpisodeStats {
        episode_return: 0.0,
        length: 0,
    };
    loop {
        let actions = select_actions(agents, &observations, &last_actions, epsilon, rng)?;
        let outcome = env.step(&actions)?;
        let next_state = env.state();
        let next_observations = env.observations();
        stats.episode_return += outcome.reward;
        stats.length += 1;
        let terminal = outcome.terminal || stats.length >= env.episode_limit();
        let next_last: Vec<Option<usize>> = actions.iter().copied().map(Some).collect();
        if let Some(buf) = buffer.as_deref_mut() {
            buf.push(Transition {
                state: std::mem::take(&mut state),
                observations: std::mem::take(&mut observations),
                last_actions,
                actions,
                reward: outcome.reward,
                next_state: next_state.clone(),
                next_observations: next_observations.clone(),
                terminal,
            })?;
        }
        if terminal {
            return Ok(stats);
        }
        state = next_state;
        observations = next_observations;
        last_actions = next_last;
    }
}

/// Learned values over every joint action of a single-state game.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTables {
    pub n_actions: usize,
    /// Per-agent Q-vector at the game's only state.
    pub agent_q: Vec<Vec<f64>>,
    /// Mixed joint values, row-major over joint actions.
    pub q_jt: Vec<f64>,
    /// Joint approximation values, when a joint network is trained.
    pub q_hat: Option<Vec<f64>>,
    pub greedy: Vec<usize>,
}

impl MatrixTables {
    pub fn compute(learner: &Learner, game: &MatrixGame) -> Result<Self> {
        let n = game.n_agents();
        let observations = vec![vec![0.0]; n];
        let last = vec![None; n];
        let state = [0.0];
        let agent_q = learner.agents.all_q_values(&observations, &last)?;
        let joints = game.joint_actions();
        let q_jt = joints
            .iter()
            .map(|a| {
                let chosen: Vec<f64> = agent_q.iter().zip(a).map(|(q, &a)| q[a]).collect();
                learner.mixer.mix(&state, &chosen)
            })
            .collect::<Result<_>>()?;
        let q_hat = learner
            .joint
            .as_ref()
            .map(|j| joints.iter().map(|a| j.q(&state, a)).collect::<Result<Vec<_>>>())
            .transpose()?;
        Ok(MatrixTables {
            n_actions: game.n_actions(),
            greedy: greedy_joint_action(&agent_q),
            agent_q,
            q_jt,
            q_hat,
        })
    }

    pub fn index(&self, joint_action: &[usize]) -> usize {
        joint_action
            .iter()
            .fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn q_jt_at(&self, joint_action: &[usize]) -> f64 {
        self.q_jt[self.index(joint_action)]
    }

    pub fn q_hat_at(&self, joint_action: &[usize]) -> Option<f64> {
        self.q_hat.as_ref().map(|t| t[self.index(joint_action)])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Greedy joint action at the first evaluation episode's initial state.
    pub greedy_joint_action: Vec<usize>,
    pub tables: Option<MatrixTables>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Greedy rollouts with no learning.
pub fn evaluate(
    env: &mut dyn Environment,
    learner: &Learner,
    episodes: usize,
    rng: &mut EnvRng,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut probe = None;
    for _ in 0..episodes {
        if probe.is_none() {
            let mut peek = rng.clone();
            env.reset(&mut peek);
            let q = learner
                .agents
                .all_q_values(&env.observations(), &vec![None; env.n_agents()])?;
            probe = Some(greedy_joint_action(&q));
        }
        returns.push(run_episode(env, &learner.agents, 0.0, None, rng)?.episode_return);
    }
    let (mean_return, std_return) = mean_std(&returns);
    let tables = env
        .matrix_game()
        .map(|g| MatrixTables::compute(learner, g))
        .transpose()?;
    Ok(EvalReport {
        step: 0,
        mean_return,
        std_return,
        greedy_joint_action: probe.unwrap_or_default(),
        tables,
    })
}

/// Mean and standard deviation of the return of a uniformly random policy.
pub fn evaluate_random(
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut EnvRng,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(rng);
        let mut total = 0.0;
        for t in 1.. {
            let actions: Vec<usize> = (0..env.n_agents())
                .map(|_| rng.gen_range(0..env.n_actions()))
                .collect();
            let out = env.step(&actions)?;
            total += out.reward;
            if out.terminal || t >= env.episode_limit() {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Mean training losses since the previous point (0 when no update ran).
    pub loss_td: f64,
    pub loss_jt: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub learner: Learner,
    pub curve: Vec<CurvePoint>,
    pub reports: Vec<EvalReport>,
    pub episodes: u64,
    pub steps: u64,
}

impl RunArtifacts {
    pub fn final_report(&self) -> &EvalReport {
        self.reports.last().expect("a run always evaluates at step 0")
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_EXPLORE: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A training run in progress. All randomness derives from the config seed,
/// so a run is reproducible from `(config, seed)`.
pub struct Trainer {
    config: TrainingConfig,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    pub learner: Learner,
    buffer: ReplayBuffer,
    schedule: EpsilonSchedule,
    explore_rng: EnvRng,
    sample_rng: ChaCha8Rng,
    episodes: u64,
    steps: u64,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let env = config.build_env()?;
        let eval_env = config.build_env()?;
        let dims = EnvDims {
            n_agents: env.n_agents(),
            n_actions: env.n_actions(),
            obs_dim: env.obs_dim(),
            state_dim: env.state_dim(),
        };
        let learner = Learner::new(&config, dims, &mut stream_rng(config.seed, STREAM_INIT))?;
        let buffer = ReplayBuffer::new(config.buffer_size, dims.state_dim, dims.obs_dim, dims.n_agents)?;
        Ok(Trainer {
            schedule: EpsilonSchedule::from_config(&config),
            explore_rng: stream_rng(config.seed, STREAM_EXPLORE),
            sample_rng: stream_rng(config.seed, STREAM_SAMPLE),
            env,
            eval_env,
            learner,
            buffer,
            episodes: 0,
            steps: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Evaluation on a fixed set of episodes (the eval stream restarts each time).
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let mut rng = stream_rng(self.config.seed, STREAM_EVAL);
        let mut report = evaluate(
            self.eval_env.as_mut(),
            &self.learner,
            self.config.evaluate_epoch,
            &mut rng,
        )?;
        report.step = self.steps;
        Ok(report)
    }

    /// Collects one episode, then trains and syncs targets when due.
    pub fn step_episode(&mut self) -> Result<Option<TrainMetrics>> {
        let epsilon = self.schedule.at(self.steps);
        let stats = run_episode(
            self.env.as_mut(),
            &self.learner.agents,
            epsilon,
            Some(&mut self.buffer),
            &mut self.explore_rng,
        )?;
        let prev_steps = self.steps;
        self.steps += stats.length as u64;
        self.episodes += 1;

        let mut metrics = None;
        if self.episodes.is_multiple_of(self.config.train_fre) {
            if let Some(batch) = self.buffer.sample(self.config.batch_size, &mut self.sample_rng) {
                let m = self.learner.train_step(&batch).map_err(|e| match e {
                    Error::NonFinite { what, .. } => Error::NonFinite {
                        what,
                        episode: self.episodes,
                        step: self.steps,
                    },
                    other => other,
                })?;
                if self.learner.has_non_finite_params() {
                    return Err(Error::NonFinite {
                        what: "network parameter".into(),
                        episode: self.episodes,
                        step: self.steps,
                    });
                }
                metrics = Some(m);
            }
        }

        let cycle = self.config.target_update_cycle;
        let due = match self.config.target_update_unit {
            TargetUpdateUnit::Episodes => self.episodes.is_multiple_of(cycle),
            TargetUpdateUnit::Steps => self.steps / cycle > prev_steps / cycle,
        };
        if due {
            self.learner.sync_targets()?;
        }
        Ok(metrics)
    }

    /// Runs until `n_steps` environment steps, evaluating at step 0 and at every
    /// multiple of `evaluate_fre`.
    pub fn run(mut self) -> Result<RunArtifacts> {
        let fre = self.config.evaluate_fre;
        let n_steps = self.config.n_steps;
        let mut reports = Vec::new();
        let mut curve = Vec::new();
        let (mut td_sum, mut jt_sum, mut updates) = (0.0, 0.0, 0u64);

        let first = self.evaluate()?;
        curve.push(CurvePoint {
            step: 0,
            mean_return: first.mean_return,
            std_return: first.std_return,
            loss_td: 0.0,
            loss_jt: 0.0,
            epsilon: self.schedule.at(0),
        });
        reports.push(first);

        let mut next_eval = fre;
        while self.steps < n_steps {
            if let Some(m) = self.step_episode()? {
                td_sum += m.loss_td;
                jt_sum += m.loss_jt;
                updates += 1;
            }
            if self.steps >= next_eval && next_eval <= n_steps {
                let mut report = self.evaluate()?;
                let mean = |s: f64| if updates > 0 { s / updates as f64 } else { 0.0 };
                // one row per crossed threshold
                while next_eval <= self.steps.min(n_steps) {
                    report.step = next_eval;
                    curve.push(CurvePoint {
                        step: next_eval,
                        mean_return: report.mean_return,
                        std_return: report.std_return,
                        loss_td: mean(td_sum),
                        loss_jt: mean(jt_sum),
                        epsilon: self.schedule.at(self.steps),
                    });
                    next_eval += fre;
                }
                reports.push(report);
                td_sum = 0.0;
                jt_sum = 0.0;
                updates = 0;
            }
        }
        Ok(RunArtifacts {
            learner: self.learner,
            curve,
            reports,
            episodes: self.episodes,
            steps: self.steps,
        })
    }
}

/// Full training run from a config.
pub fn train_run(config: TrainingConfig) -> Result<RunArtifacts> {
    Trainer::new(config)?.run()
}
