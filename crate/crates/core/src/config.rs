//! Training configuration and its plain-text `key = value` format.
//!
//! Defaults follow the reference hyperparameter table; a handful depend on the
//! environment (`gamma`, `alpha`, `n_steps`, `n_agents`), so the environment is
//! resolved first and every other key is applied on top of its defaults.

use std::fmt;
use std::str::FromStr;

use crate::env::{Environment, GridLayout, GridNav, MatrixGame, MatrixGameEnv, ParticleNav, ParticleParams};
use crate::error::{Error, Result};
use crate::losses::{check_alpha, KernelBandwidth, TdWeighting};

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$($text),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("expected one of {}", Self::NAMES.join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(EnvKind {
    MatrixGame => "matrix_game",
    GridNav => "gridnav",
    ParticleNav => "particlenav",
});

keyword_enum!(LossKind {
    Mse => "mse",
    Ow => "ow",
    Mcvd => "mcvd",
});

keyword_enum!(MixerKind {
    Sum => "sum",
    Monotonic => "monotonic",
});

keyword_enum!(
    /// Which individual networks pick the bootstrap joint action.
    ArgmaxSource {
        Target => "target",
        Online => "online",
    }
);

keyword_enum!(TargetUpdateUnit {
    Episodes => "episodes",
    Steps => "steps",
});

/// Default payoff table (2 agents, 3 actions).
pub const OMG_PAYOFF: &str = "8,-12,-12; -12,6,6; -12,6,6";
pub const DEFAULT_GRID_LAYOUT: &str = "GA./.BG";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub env: EnvKind,
    pub payoff: String,
    pub n_agents: usize,
    pub grid_layout: String,
    pub episode_limit: usize,
    pub particle_dt: f64,
    pub particle_damping: f64,
    pub particle_accel: f64,
    pub particle_radius: f64,
    pub collision_penalty: f64,

    pub loss: LossKind,
    pub mixer: MixerKind,
    pub use_joint_net: bool,
    pub alpha: f64,
    pub sigma: f64,

    pub seed: u64,
    pub n_steps: u64,
    pub train_fre: u64,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub max_epsilon: f64,
    pub min_epsilon: f64,
    pub anneal_steps: u64,
    pub target_update_cycle: u64,
    pub target_update_unit: TargetUpdateUnit,
    pub grad_norm_clip: f64,
    pub evaluate_fre: u64,
    pub evaluate_epoch: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub mixer_embed_dim: usize,
    pub last_action: bool,
    pub reuse_network: bool,
    pub double_q_argmax_source: ArgmaxSource,
    pub rms_decay: f64,
    pub rms_eps: f64,
}

/// Every accepted key, in the order `config.resolved` lists them.
pub const KEYS: &[&str] = &[
    "env",
    "payoff",
    "n_agents",
    "grid_layout",
    "episode_limit",
    "particle_dt",
    "particle_damping",
    "particle_accel",
    "particle_radius",
    "collision_penalty",
    "loss",
    "mixer",
    "use_joint_net",
    "alpha",
    "sigma",
    "seed",
    "n_steps",
    "train_fre",
    "gamma",
    "lr",
    "batch_size",
    "buffer_size",
    "max_epsilon",
    "min_epsilon",
    "anneal_steps",
    "target_update_cycle",
    "target_update_unit",
    "grad_norm_clip",
    "evaluate_fre",
    "evaluate_epoch",
    "hidden_dim",
    "hidden_layers",
    "mixer_embed_dim",
    "last_action",
    "reuse_network",
    "double_q_argmax_source",
    "rms_decay",
    "rms_eps",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_count(key: &str, value: &str) -> Result<u64> {
    let cleaned = value.replace('_', "");
    if let Ok(v) = cleaned.parse::<u64>() {
        return Ok(v);
    }
    match cleaned.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f < 9.0e15 => Ok(f as u64),
        _ => Err(Error::config(
            key,
            format!("expected a non-negative integer, got `{value}`"),
        )),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_keyword<T: FromStr<Err = String>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: String| Error::config(key, e))
}

/// Splits `key = value` lines, dropping `#` comments and blank lines.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            Some(match line.split_once('=') {
                Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
                None => Err(Error::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                )),
            })
        })
        .collect()
}

/// Parses `--key value` / `--key=value` flags. Dashes inside keys become
/// underscores, so `--grad-norm-clip` and `--grad_norm_clip` are equivalent.
pub fn parse_override_flags(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Usage(format!("expected `--key value`, got `{arg}`")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = iter
                    .next()
                    .ok_or_else(|| Error::Usage(format!("flag `{arg}` needs a value")))?;
                (flag.to_string(), value.clone())
            }
        };
        pairs.push((key.replace('-', "_"), value));
    }
    Ok(pairs)
}

impl TrainingConfig {
    /// Reference defaults for one environment.
    pub fn defaults(env: EnvKind) -> Self {
        let navigation = env != EnvKind::MatrixGame;
        TrainingConfig {
            env,
            payoff: OMG_PAYOFF.to_string(),
            n_agents: match env {
                EnvKind::MatrixGame | EnvKind::GridNav => 2,
                EnvKind::ParticleNav => 3,
            },
            grid_layout: DEFAULT_GRID_LAYOUT.to_string(),
            episode_limit: 25,
            particle_dt: 0.1,
            particle_damping: 0.25,
            particle_accel: 5.0,
            particle_radius: 0.1,
            collision_penalty: -10.0,
            loss: LossKind::Mcvd,
            mixer: MixerKind::Sum,
            use_joint_net: true,
            alpha: if navigation { 0.1 } else { 0.5 },
            sigma: 1.0,
            seed: 123,
            n_steps: if navigation { 500_000 } else { 20_000 },
            train_fre: 1,
            gamma: if navigation { 0.9 } else { 0.99 },
            lr: 5e-4,
            batch_size: 32,
            buffer_size: 5000,
            max_epsilon: 1.0,
            min_epsilon: 0.05,
            anneal_steps: 50_000,
            target_update_cycle: 200,
            target_update_unit: TargetUpdateUnit::Episodes,
            grad_norm_clip: 10.0,
            evaluate_fre: 5000,
            evaluate_epoch: 32,
            hidden_dim: 64,
            hidden_layers: 2,
            mixer_embed_dim: 32,
            last_action: true,
            reuse_network: true,
            double_q_argmax_source: ArgmaxSource::Target,
            rms_decay: 0.99,
            rms_eps: 1e-5,
        }
    }

    /// Builds a validated config from ordered key/value pairs; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let env = match pairs.iter().rev().find(|(k, _)| k == "env") {
            Some((k, v)) => parse_keyword(k, v)?,
            None => EnvKind::MatrixGame,
        };
        let mut config = TrainingConfig::defaults(env);
        for (key, value) in pairs {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// File contents first, then command-line overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut pairs = parse_config_text(text)?;
        pairs.extend(parse_override_flags(overrides)?);
        TrainingConfig::from_pairs(&pairs)
    }

    /// Assigns one key without cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "env" => self.env = parse_keyword(key, v)?,
            "payoff" => self.payoff = v.to_string(),
            "n_agents" => self.n_agents = parse_count(key, v)? as usize,
            "grid_layout" => self.grid_layout = v.to_string(),
            "episode_limit" => self.episode_limit = parse_count(key, v)? as usize,
            "particle_dt" => self.particle_dt = parse_value(key, v)?,
            "particle_damping" => self.particle_damping = parse_value(key, v)?,
            "particle_accel" => self.particle_accel = parse_value(key, v)?,
            "particle_radius" => self.particle_radius = parse_value(key, v)?,
            "collision_penalty" => self.collision_penalty = parse_value(key, v)?,
            "loss" => self.loss = parse_keyword(key, v)?,
            "mixer" => self.mixer = parse_keyword(key, v)?,
            "use_joint_net" => self.use_joint_net = parse_bool(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "sigma" => self.sigma = parse_value(key, v)?,
            "seed" => self.seed = parse_count(key, v)?,
            "n_steps" => self.n_steps = parse_count(key, v)?,
            "train_fre" => self.train_fre = parse_count(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_count(key, v)? as usize,
            "buffer_size" => self.buffer_size = parse_count(key, v)? as usize,
            "max_epsilon" => self.max_epsilon = parse_value(key, v)?,
            "min_epsilon" => self.min_epsilon = parse_value(key, v)?,
            "anneal_steps" => self.anneal_steps = parse_count(key, v)?,
            "target_update_cycle" => self.target_update_cycle = parse_count(key, v)?,
            "target_update_unit" => self.target_update_unit = parse_keyword(key, v)?,
            "grad_norm_clip" => self.grad_norm_clip = parse_value(key, v)?,
            "evaluate_fre" => self.evaluate_fre = parse_count(key, v)?,
            "evaluate_epoch" => self.evaluate_epoch = parse_count(key, v)? as usize,
            "hidden_dim" => self.hidden_dim = parse_count(key, v)? as usize,
            "hidden_layers" => self.hidden_layers = parse_count(key, v)? as usize,
            "mixer_embed_dim" => self.mixer_embed_dim = parse_count(key, v)? as usize,
            "last_action" => self.last_action = parse_bool(key, v)?,
            "reuse_network" => self.reuse_network = parse_bool(key, v)?,
            "double_q_argmax_source" => self.double_q_argmax_source = parse_keyword(key, v)?,
            "rms_decay" => self.rms_decay = parse_value(key, v)?,
            "rms_eps" => self.rms_eps = parse_value(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Current value of `key` in the same text form `config.resolved` uses.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "env" => self.env.to_string(),
            "payoff" => self.payoff.clone(),
            "n_agents" => self.n_agents.to_string(),
            "grid_layout" => self.grid_layout.clone(),
            "episode_limit" => self.episode_limit.to_string(),
            "particle_dt" => self.particle_dt.to_string(),
            "particle_damping" => self.particle_damping.to_string(),
            "particle_accel" => self.particle_accel.to_string(),
            "particle_radius" => self.particle_radius.to_string(),
            "collision_penalty" => self.collision_penalty.to_string(),
            "loss" => self.loss.to_string(),
            "mixer" => self.mixer.to_string(),
            "use_joint_net" => self.use_joint_net.to_string(),
            "alpha" => self.alpha.to_string(),
            "sigma" => self.sigma.to_string(),
            "seed" => self.seed.to_string(),
            "n_steps" => self.n_steps.to_string(),
            "train_fre" => self.train_fre.to_string(),
            "gamma" => self.gamma.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "buffer_size" => self.buffer_size.to_string(),
            "max_epsilon" => self.max_epsilon.to_string(),
            "min_epsilon" => self.min_epsilon.to_string(),
            "anneal_steps" => self.anneal_steps.to_string(),
            "target_update_cycle" => self.target_update_cycle.to_string(),
            "target_update_unit" => self.target_update_unit.to_string(),
            "grad_norm_clip" => self.grad_norm_clip.to_string(),
            "evaluate_fre" => self.evaluate_fre.to_string(),
            "evaluate_epoch" => self.evaluate_epoch.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "mixer_embed_dim" => self.mixer_embed_dim.to_string(),
            "last_action" => self.last_action.to_string(),
            "reuse_network" => self.reuse_network.to_string(),
            "double_q_argmax_source" => self.double_q_argmax_source.to_string(),
            "rms_decay" => self.rms_decay.to_string(),
            "rms_eps" => self.rms_eps.to_string(),
            _ => return None,
        })
    }

    /// Every key with its value, one `key = value` line each.
    pub fn to_resolved_string(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("KEYS lists known keys")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        KernelBandwidth::new(self.sigma)?;
        check_alpha(self.alpha)?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(
            self.buffer_size >= self.batch_size,
            "buffer_size",
            "must be at least batch_size",
        )?;
        check(
            (0.0..=1.0).contains(&self.max_epsilon),
            "max_epsilon",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..=self.max_epsilon).contains(&self.min_epsilon),
            "min_epsilon",
            "must lie in [0, max_epsilon]",
        )?;
        check(self.grad_norm_clip > 0.0, "grad_norm_clip", "must be positive")?;
        check(self.n_steps >= 1, "n_steps", "must be positive")?;
        check(self.train_fre >= 1, "train_fre", "must be positive")?;
        check(self.evaluate_fre >= 1, "evaluate_fre", "must be positive")?;
        check(self.evaluate_epoch >= 1, "evaluate_epoch", "must be positive")?;
        check(self.target_update_cycle >= 1, "target_update_cycle", "must be positive")?;
        check(self.hidden_dim >= 1, "hidden_dim", "must be positive")?;
        check(self.hidden_layers >= 1, "hidden_layers", "must be positive")?;
        check(self.mixer_embed_dim >= 1, "mixer_embed_dim", "must be positive")?;
        check(self.n_agents >= 1, "n_agents", "must be positive")?;
        check(
            self.rms_decay > 0.0 && self.rms_decay < 1.0,
            "rms_decay",
            "must lie in (0, 1)",
        )?;
        check(self.rms_eps >= 0.0, "rms_eps", "must be non-negative")?;
        self.build_env().map(|_| ())
    }

    pub fn td_weighting(&self) -> Result<TdWeighting> {
        Ok(match self.loss {
            LossKind::Mse => TdWeighting::Mse,
            LossKind::Ow => {
                check_alpha(self.alpha)?;
                TdWeighting::Optimistic { alpha: self.alpha }
            }
            LossKind::Mcvd => TdWeighting::Correntropy {
                sigma: KernelBandwidth::new(self.sigma)?,
            },
        })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        vec![self.hidden_dim; self.hidden_layers]
    }

    pub fn particle_params(&self) -> ParticleParams {
        ParticleParams {
            n_agents: self.n_agents,
            dt: self.particle_dt,
            damping: self.particle_damping,
            accel_gain: self.particle_accel,
            radius: self.particle_radius,
            episode_limit: self.episode_limit,
            collision_penalty: self.collision_penalty,
        }
    }

    pub fn matrix_game(&self) -> Result<MatrixGame> {
        MatrixGame::parse(&self.payoff, self.n_agents)
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        Ok(match self.env {
            EnvKind::MatrixGame => Box::new(MatrixGameEnv::new(self.matrix_game()?)),
            EnvKind::GridNav => {
                let layout = GridLayout::parse(&self.grid_layout)?;
                if layout.agents.len() != self.n_agents {
                    return Err(Error::config(
                        "n_agents",
                        format!("grid layout places {} agents", layout.agents.len()),
                    ));
                }
                Box::new(GridNav::new(layout, self.episode_limit, self.collision_penalty)?)
            }
            EnvKind::ParticleNav => Box::new(ParticleNav::new(self.particle_params())?),
        })
    }
}
