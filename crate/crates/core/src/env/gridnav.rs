use std::fmt;

use super::{check_joint_action, one_hot, EnvRng, Environment, StepOutcome};
use crate::error::{Error, Result};

/// Movement actions. Displayed 1-based (`1: still` .. `5: right`), indexed 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    Still,
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 5] = [
        GridAction::Still,
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// (row delta, col delta); rows grow downwards.
    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Still => (0, 0),
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
        }
    }
}

impl fmt::Display for GridAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

pub type Cell = (usize, usize);

/// Grid size plus the initial agent cells and the landmark cells.
///
/// Text form: rows separated by `/`, one character per cell. `.` is empty, `G`
/// is a landmark and any other upper-case letter is an agent; agents are
/// numbered in alphabetical order of their letters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub agents: Vec<Cell>,
    pub landmarks: Vec<Cell>,
}

impl GridLayout {
    /// Two rows, three columns: `G A .` over `. B G`.
    pub fn two_agent_example() -> Self {
        GridLayout::parse("GA./.BG").expect("static layout is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.trim().split('/').map(str::trim).collect();
        let cols = rows[0].chars().count();
        if cols == 0 || rows.iter().any(|r| r.chars().count() != cols) {
            return Err(Error::config("grid_layout", "rows must be non-empty and equally long"));
        }
        let mut agents = Vec::new();
        let mut landmarks = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '.' => {}
                    'G' => landmarks.push((r, c)),
                    'A'..='Z' => agents.push((ch, (r, c))),
                    other => {
                        return Err(Error::config(
                            "grid_layout",
                            format!("unexpected cell character `{other}`"),
                        ))
                    }
                }
            }
        }
        agents.sort_by_key(|&(ch, _)| ch);
        if agents.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::config("grid_layout", "agent letters must be unique"));
        }
        if agents.is_empty() || landmarks.is_empty() {
            return Err(Error::config("grid_layout", "needs at least one agent and one landmark"));
        }
        Ok(GridLayout {
            rows: rows.len(),
            cols,
            agents: agents.into_iter().map(|(_, cell)| cell).collect(),
            landmarks,
        })
    }

    pub fn initial_state(&self) -> GridNavState {
        GridNavState {
            agents: self.agents.clone(),
            landmarks: self.landmarks.clone(),
            steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridNavState {
    pub agents: Vec<Cell>,
    pub landmarks: Vec<Cell>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStep {
    pub state: GridNavState,
    pub reward: f64,
    pub terminal: bool,
    pub collisions: usize,
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

fn nearest(agents: &[Cell], landmark: Cell) -> usize {
    agents
        .iter()
        .map(|&a| manhattan(a, landmark))
        .min()
        .unwrap_or(0)
}

/// One step of the grid world.
///
/// Moves off the grid leave the agent in place. Two agents ending in the same
/// cell, or exchanging cells, is a collision: each colliding pair adds
/// `collision_penalty` and every agent reverts to its previous cell. Otherwise
/// each landmark contributes `+1`, `0` or `-1` as its nearest-agent distance
/// shrinks, stays or grows.
pub fn gridnav_step(
    state: &GridNavState,
    rows: usize,
    cols: usize,
    joint_action: &[usize],
    collision_penalty: f64,
    episode_limit: usize,
) -> Result<GridStep> {
    check_joint_action(joint_action, state.agents.len(), GridAction::ALL.len())?;
    let moved: Vec<Cell> = state
        .agents
        .iter()
        .zip(joint_action)
        .map(|(&(r, c), &a)| {
            let (dr, dc) = GridAction::ALL[a].delta();
            let nr = r as isize + dr;
            let nc = c as isize + dc;
            if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                (r, c)
            } else {
                (nr as usize, nc as usize)
            }
        })
        .collect();

    let n = moved.len();
    let mut collisions = 0;
    for i in 0..n {
        for j in i + 1..n {
            let same_cell = moved[i] == moved[j];
            let swapped = moved[i] == state.agents[j] && moved[j] == state.agents[i];
            if same_cell || swapped {
                collisions += 1;
            }
        }
    }

    let steps = state.steps + 1;
    let (agents, reward) = if collisions > 0 {
        (state.agents.clone(), collision_penalty * collisions as f64)
    } else {
        let reward = state
            .landmarks
            .iter()
            .map(|&l| {
                let before = nearest(&state.agents, l) as f64;
                let after = nearest(&moved, l) as f64;
                (before - after).signum() * f64::from(before != after)
            })
            .sum();
        (moved, reward)
    };
    Ok(GridStep {
        state: GridNavState {
            agents,
            landmarks: state.landmarks.clone(),
            steps,
        },
        reward,
        terminal: steps >= episode_limit,
        collisions,
    })
}

#[derive(Clone, Debug)]
pub struct GridNav {
    layout: GridLayout,
    state: GridNavState,
    episode_limit: usize,
    collision_penalty: f64,
}

impl GridNav {
    pub fn new(layout: GridLayout, episode_limit: usize, collision_penalty: f64) -> Result<Self> {
        if episode_limit == 0 {
            return Err(Error::config("episode_limit", "must be positive"));
        }
        Ok(GridNav {
            state: layout.initial_state(),
            layout,
            episode_limit,
            collision_penalty,
        })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn current(&self) -> &GridNavState {
        &self.state
    }

    pub fn step_detailed(&mut self, joint_action: &[usize]) -> Result<GridStep> {
        let out = gridnav_step(
            &self.state,
            self.layout.rows,
            self.layout.cols,
            joint_action,
            self.collision_penalty,
            self.episode_limit,
        )?;
        self.state = out.state.clone();
        Ok(out)
    }

    fn scale(&self) -> f64 {
        self.layout.rows.max(self.layout.cols) as f64
    }
}

impl Environment for GridNav {
    fn n_agents(&self) -> usize {
        self.layout.agents.len()
    }

    fn n_actions(&self) -> usize {
        GridAction::ALL.len()
    }

    fn state_dim(&self) -> usize {
        self.n_agents() * self.layout.rows * self.layout.cols
    }

    fn obs_dim(&self) -> usize {
        2 + 2 * self.layout.landmarks.len() + 2 * (self.n_agents() - 1)
    }

    fn episode_limit(&self) -> usize {
        self.episode_limit
    }

    fn reset(&mut self, _rng: &mut EnvRng) {
        self.state = self.layout.initial_state();
    }

    /// One-hot cell index per agent, concatenated.
    fn state(&self) -> Vec<f64> {
        let cells = self.layout.rows * self.layout.cols;
        self.state
            .agents
            .iter()
            .flat_map(|&(r, c)| one_hot(r * self.layout.cols + c, cells))
            .collect()
    }

    /// Own cell, then offsets to every landmark and every other agent, all
    /// divided by the larger grid side.
    fn observations(&self) -> Vec<Vec<f64>> {
        let s = self.scale();
        let offset = |from: Cell, to: Cell| {
            [
                (to.0 as f64 - from.0 as f64) / s,
                (to.1 as f64 - from.1 as f64) / s,
            ]
        };
        let agents = &self.state.agents;
        agents
            .iter()
            .enumerate()
            .map(|(i, &me)| {
                let mut obs = vec![me.0 as f64 / s, me.1 as f64 / s];
                for &l in &self.state.landmarks {
                    obs.extend(offset(me, l));
                }
                for (j, &other) in agents.iter().enumerate() {
                    if j != i {
                        obs.extend(offset(me, other));
                    }
                }
                obs
            })
            .collect()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        let out = self.step_detailed(joint_action)?;
        Ok(StepOutcome {
            reward: out.reward,
            terminal: out.terminal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GridAction::*;

    fn step_example(a: GridAction, b: GridAction) -> GridStep {
        let layout = GridLayout::two_agent_example();
        gridnav_step(&layout.initial_state(), 2, 3, &[a.index(), b.index()], -10.0, 25).unwrap()
    }

    #[test]
    fn layout_parse() {
        let l = GridLayout::two_agent_example();
        assert_eq!((l.rows, l.cols), (2, 3));
        assert_eq!(l.agents, vec![(0, 1), (1, 1)]);
        assert_eq!(l.landmarks, vec![(0, 0), (1, 2)]);
        assert!(GridLayout::parse("GA/.").is_err());
        assert!(GridLayout::parse("Ga./..G").is_err());
        assert!(GridLayout::parse("AA./..G").is_err());
    }

    #[test]
    fn reference_payoffs() {
        let out = step_example(Down, Still);
        assert_eq!(out.reward, -10.0);
        assert_eq!(out.state.agents, GridLayout::two_agent_example().agents);
        assert_eq!(step_example(Left, Still).reward, 1.0);
        assert_eq!(step_example(Left, Left).reward, 0.0);
        assert_eq!(step_example(Down, Left).reward, 0.0);
    }

    #[test]
    fn swap_counts_as_collision() {
        // A above B; A moves down while B moves up.
        let out = step_example(Down, Up);
        assert_eq!(out.collisions, 1);
        assert_eq!(out.reward, -10.0);
    }

    #[test]
    fn collision_reward_symmetric_under_relabeling() {
        let layout = GridLayout::two_agent_example();
        let swapped = GridNavState {
            agents: vec![layout.agents[1], layout.agents[0]],
            ..layout.initial_state()
        };
        for a in GridAction::ALL {
            for b in GridAction::ALL {
                let r1 = gridnav_step(&layout.initial_state(), 2, 3, &[a.index(), b.index()], -10.0, 25)
                    .unwrap()
                    .reward;
                let r2 = gridnav_step(&swapped, 2, 3, &[b.index(), a.index()], -10.0, 25)
                    .unwrap()
                    .reward;
                assert_eq!(r1, r2, "{a} {b}");
            }
        }
    }

    #[test]
    fn walls_block_and_limit_terminates() {
        let out = step_example(Up, Still);
        assert_eq!(out.state.agents[0], (0, 1));
        assert_eq!(out.reward, 0.0);
        let layout = GridLayout::two_agent_example();
        let mut env = GridNav::new(layout, 2, -10.0).unwrap();
        assert!(!env.step(&[0, 0]).unwrap().terminal);
        assert!(env.step(&[0, 0]).unwrap().terminal);
        assert!(matches!(env.step(&[5, 0]), Err(Error::Usage(_))));
    }

    #[test]
    fn dims() {
        let env = GridNav::new(GridLayout::two_agent_example(), 25, -10.0).unwrap();
        assert_eq!(env.state_dim(), 12);
        assert_eq!(env.state().len(), 12);
        assert_eq!(env.state().iter().sum::<f64>(), 2.0);
        assert_eq!(env.obs_dim(), 8);
        assert!(env.observations().iter().all(|o| o.len() == 8));
    }
}
