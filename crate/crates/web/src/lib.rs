//! Browser bindings: kernel weight curves, the bound calculator and an
//! incremental matrix-game trainer that the page in `www/` drives.

use mcvd::bounds::{alpha_bound, delta_s, reward_range, sigma_bound, BoundInputs};
use mcvd::config::{EnvKind, TrainingConfig};
use mcvd::env::MatrixGame;
use mcvd::losses::{mcvd_weight, ow_weight, KernelBandwidth};
use mcvd::training::{MatrixTables, Trainer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(e: mcvd::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Samples `w(e)` for `e` in `[-e_max, e_max]`, with `e = q_jt - y`.
/// `loss` is `mcvd` (param = sigma), `ow` (param = alpha) or `mse`.
pub fn weight_samples(loss: &str, param: f64, e_max: f64, points: usize) -> mcvd::Result<Vec<f64>> {
    let points = points.max(2);
    let sigma = match loss {
        "mcvd" => Some(KernelBandwidth::new(param)?),
        "ow" | "mse" => None,
        other => return Err(mcvd::Error::config("loss", format!("unknown loss `{other}`"))),
    };
    (0..points)
        .map(|k| {
            let e = -e_max + 2.0 * e_max * k as f64 / (points - 1) as f64;
            match (loss, sigma) {
                ("mcvd", Some(s)) => Ok(mcvd_weight(e, 0.0, s)),
                ("ow", _) => ow_weight(e, 0.0, param),
                _ => Ok(1.0),
            }
        })
        .collect()
}

#[wasm_bindgen]
pub fn weight_curve(loss: &str, param: f64, e_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    weight_samples(loss, param, e_max, points).map_err(js)
}

#[derive(Serialize)]
struct Bounds {
    n_actions: usize,
    delta_s: f64,
    r_max: f64,
    alpha_bound: f64,
    sigma_bound: f64,
}

/// Bounds for a payoff table written as `a,b,c; d,e,f; ...`, as JSON.
pub fn bounds_for(payoff: &str, n_agents: usize, gamma: f64) -> mcvd::Result<String> {
    let game = MatrixGame::parse(payoff, n_agents)?;
    let values = game.values();
    let delta = delta_s(values)?;
    let r_max = reward_range(values);
    let bounds = Bounds {
        n_actions: game.n_actions(),
        delta_s: delta,
        r_max,
        alpha_bound: alpha_bound(&BoundInputs {
            delta_s: delta,
            gamma,
            r_max,
            n_actions: game.n_actions(),
            n_agents,
        })?,
        sigma_bound: sigma_bound(delta, game.n_actions(), n_agents)?,
    };
    Ok(serde_json::to_string(&bounds).expect("plain numbers serialize"))
}

#[wasm_bindgen]
pub fn bounds_json(payoff: &str, n_agents: usize, gamma: f64) -> Result<String, JsError> {
    bounds_for(payoff, n_agents, gamma).map_err(js)
}

#[derive(Serialize)]
struct TablesView<'a> {
    steps: u64,
    epsilon: f64,
    n_actions: usize,
    payoff: &'a [f64],
    agent_q: &'a [Vec<f64>],
    q_jt: &'a [f64],
    q_hat: Option<&'a [f64]>,
    greedy: &'a [usize],
    optimal: bool,
}

/// Two-agent matrix game trained a batch of episodes at a time, so the page
/// can redraw between batches.
#[wasm_bindgen]
pub struct MatrixDemo {
    trainer: Trainer,
    game: MatrixGame,
}

impl MatrixDemo {
    pub fn build(payoff: &str, loss: &str, mixer: &str, param: f64, seed: u64) -> mcvd::Result<Self> {
        let mut config = TrainingConfig::defaults(EnvKind::MatrixGame);
        config.set("payoff", payoff)?;
        config.set("loss", loss)?;
        config.set("mixer", mixer)?;
        match config.loss.as_str() {
            "mcvd" => config.sigma = param,
            "ow" => config.alpha = param,
            _ => {}
        }
        config.seed = seed;
        // A single hidden layer keeps the page responsive.
        config.hidden_layers = 1;
        let game = config.matrix_game()?;
        Ok(MatrixDemo {
            trainer: Trainer::new(config)?,
            game,
        })
    }

    pub fn tables(&self) -> mcvd::Result<MatrixTables> {
        MatrixTables::compute(&self.trainer.learner, &self.game)
    }

    pub fn snapshot(&self) -> mcvd::Result<String> {
        let t = self.tables()?;
        let view = TablesView {
            steps: self.trainer.steps(),
            epsilon: mcvd::training::EpsilonSchedule::from_config(self.trainer.config()).at(self.trainer.steps()),
            n_actions: t.n_actions,
            payoff: self.game.values(),
            agent_q: &t.agent_q,
            q_jt: &t.q_jt,
            q_hat: t.q_hat.as_deref(),
            greedy: &t.greedy,
            optimal: t.greedy == self.game.optimal_joint_action(),
        };
        Ok(serde_json::to_string(&view).expect("plain numbers serialize"))
    }

    pub fn advance(&mut self, episodes: u32) -> mcvd::Result<u64> {
        for _ in 0..episodes {
            self.trainer.step_episode()?;
        }
        Ok(self.trainer.steps())
    }
}

#[wasm_bindgen]
impl MatrixDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(payoff: &str, loss: &str, mixer: &str, param: f64, seed: u32) -> Result<MatrixDemo, JsError> {
        MatrixDemo::build(payoff, loss, mixer, param, u64::from(seed)).map_err(js)
    }

    /// Trains `episodes` more episodes and returns the total step count.
    pub fn train(&mut self, episodes: u32) -> Result<f64, JsError> {
        self.advance(episodes).map(|s| s as f64).map_err(js)
    }

    #[wasm_bindgen(js_name = tablesJson)]
    pub fn tables_json(&self) -> Result<String, JsError> {
        self.snapshot().map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcvd::config::OMG_PAYOFF;

    #[test]
    fn weight_curve_shapes() {
        let w = weight_samples("mcvd", 1.0, 2.0, 5).unwrap();
        assert_eq!(w[..3], [1.0, 1.0, 1.0]);
        assert!((w[4] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(weight_samples("ow", 0.5, 1.0, 3).unwrap(), vec![1.0, 0.5, 0.5]);
        assert_eq!(weight_samples("mse", 0.0, 1.0, 2).unwrap(), vec![1.0, 1.0]);
        assert!(weight_samples("huber", 1.0, 1.0, 3).is_err());
        assert!(weight_samples("mcvd", 0.0, 1.0, 3).is_err());
    }

    #[test]
    fn bounds_json_on_default_game() {
        let v: serde_json::Value = serde_json::from_str(&bounds_for(OMG_PAYOFF, 2, 0.0).unwrap()).unwrap();
        assert_eq!(v["delta_s"], 2.0);
        assert_eq!(v["r_max"], 20.0);
        assert!((v["sigma_bound"].as_f64().unwrap() - 0.7772146605).abs() < 1e-9);
    }

    #[test]
    fn demo_trains_and_reports() {
        let mut demo = MatrixDemo::build(OMG_PAYOFF, "mcvd", "sum", 1.0, 3).unwrap();
        assert_eq!(demo.advance(200).unwrap(), 200);
        let v: serde_json::Value = serde_json::from_str(&demo.snapshot().unwrap()).unwrap();
        assert_eq!(v["steps"], 200);
        assert_eq!(v["q_jt"].as_array().unwrap().len(), 9);
        assert_eq!(v["payoff"][0], 8.0);
        assert!(MatrixDemo::build("1,2;3", "mcvd", "sum", 1.0, 0).is_err());
    }
}
