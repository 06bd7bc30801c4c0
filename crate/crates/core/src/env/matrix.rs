use super::{check_joint_action, enumerate_joint_actions, EnvRng, Environment, StepOutcome};
use crate::error::{Error, Result};

/// A single-state cooperative game with one payoff per joint action.
///
/// Payoffs are stored row-major over an `n_actions^n_agents` table.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGame {
    n_agents: usize,
    n_actions: usize,
    payoff: Vec<f64>,
}

impl MatrixGame {
    pub fn new(n_agents: usize, n_actions: usize, payoff: Vec<f64>) -> Result<Self> {
        if n_agents == 0 || n_actions == 0 {
            return Err(Error::config("payoff", "needs at least one agent and one action"));
        }
        let expected = super::joint_action_count(n_agents, n_actions)
            .map_err(|e| Error::config("payoff", e.to_string()))?;
        if payoff.len() != expected {
            return Err(Error::config(
                "payoff",
                format!(
                    "{n_agents} agents with {n_actions} actions need {expected} entries, got {}",
                    payoff.len()
                ),
            ));
        }
        if payoff.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("payoff", "entries must be finite"));
        }
        Ok(MatrixGame {
            n_agents,
            n_actions,
            payoff,
        })
    }

    /// The non-monotonic 3x3 game whose optimum (A,A)=8 is surrounded by -12.
    pub fn omg() -> Self {
        MatrixGame::new(
            2,
            3,
            vec![8.0, -12.0, -12.0, -12.0, 6.0, 6.0, -12.0, 6.0, 6.0],
        )
        .expect("static table is valid")
    }

    /// Parses rows separated by `;` with entries separated by `,`. The row width is
    /// the number of actions; the total entry count must be `width^n_agents`.
    pub fn parse(text: &str, n_agents: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .split(';')
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .map(|row| {
                row.split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|_| {
                            Error::config("payoff", format!("`{}` is not a number", v.trim()))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::config("payoff", "rows must be non-empty and equally long"));
        }
        MatrixGame::new(n_agents, width, rows.concat())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.payoff
    }

    pub fn joint_index(&self, joint_action: &[usize]) -> Result<usize> {
        check_joint_action(joint_action, self.n_agents, self.n_actions)?;
        Ok(joint_action
            .iter()
            .fold(0, |acc, &a| acc * self.n_actions + a))
    }

    pub fn payoff(&self, joint_action: &[usize]) -> Result<f64> {
        Ok(self.payoff[self.joint_index(joint_action)?])
    }

    /// Reward for one joint action; the episode always terminates.
    pub fn step(&self, joint_action: &[usize]) -> Result<StepOutcome> {
        Ok(StepOutcome {
            reward: self.payoff(joint_action)?,
            terminal: true,
        })
    }

    pub fn joint_actions(&self) -> Vec<Vec<usize>> {
        enumerate_joint_actions(self.n_agents, self.n_actions)
            .expect("table size was validated at construction")
    }

    /// First joint action (row-major) attaining the maximum payoff.
    pub fn optimal_joint_action(&self) -> Vec<usize> {
        let best = self
            .payoff
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.payoff[best] { i } else { best });
        self.joint_actions().swap_remove(best)
    }
}

#[derive(Clone, Debug)]
pub struct MatrixGameEnv {
    game: MatrixGame,
}

impl MatrixGameEnv {
    pub fn new(game: MatrixGame) -> Self {
        MatrixGameEnv { game }
    }
}

impl Environment for MatrixGameEnv {
    fn n_agents(&self) -> usize {
        self.game.n_agents
    }

    fn n_actions(&self) -> usize {
        self.game.n_actions
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn episode_limit(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut EnvRng) {}

    fn state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0]; self.game.n_agents]
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        self.game.step(joint_action)
    }

    fn matrix_game(&self) -> Option<&MatrixGame> {
        Some(&self.game)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;

    #[test]
    fn omg_payoffs() {
        let g = MatrixGame::omg();
        assert_eq!(g.step(&[A, A]).unwrap(), StepOutcome { reward: 8.0, terminal: true });
        assert_eq!(g.payoff(&[A, B]).unwrap(), -12.0);
        assert_eq!(g.payoff(&[B, C]).unwrap(), 6.0);
        assert_eq!(g.optimal_joint_action(), vec![A, A]);
    }

    #[test]
    fn out_of_range_action() {
        let g = MatrixGame::omg();
        assert!(matches!(g.step(&[3, 0]), Err(Error::Usage(_))));
        assert!(matches!(g.step(&[0]), Err(Error::Usage(_))));
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let g = MatrixGame::parse("8,-12,-12; -12,6,6; -12,6,6", 2).unwrap();
        assert_eq!(g, MatrixGame::omg());
        assert!(MatrixGame::parse("1,2;3", 2).is_err());
        assert!(MatrixGame::parse("1,x;3,4", 2).is_err());
        // 2 actions, 3 agents -> 8 entries
        let g3 = MatrixGame::parse("1,2;3,4;5,6;7,8", 3).unwrap();
        assert_eq!(g3.payoff(&[1, 1, 1]).unwrap(), 8.0);
        assert_eq!(g3.payoff(&[1, 0, 0]).unwrap(), 5.0);
    }

    #[test]
    fn env_episode_is_single_step() {
        let mut env = MatrixGameEnv::new(MatrixGame::omg());
        let mut rng = <EnvRng as rand::SeedableRng>::seed_from_u64(0);
        for joint in MatrixGame::omg().joint_actions() {
            env.reset(&mut rng);
            assert_eq!(env.state(), vec![0.0]);
            assert_eq!(env.observations(), vec![vec![0.0], vec![0.0]]);
            assert!(env.step(&joint).unwrap().terminal);
        }
    }
}
