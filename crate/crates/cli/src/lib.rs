//! Command implementations behind the `mcvd` binary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mcvd::bounds::{alpha_bound, delta_s, reward_range, sigma_bound, BoundInputs};
use mcvd::config::{parse_config_text, parse_override_flags, EnvKind, TrainingConfig};
use mcvd::env::{GridAction, GridLayout, GridNav};
use mcvd::gradcheck::{self, GradCheck};
use mcvd::report::{curve_csv, final_tables};
use mcvd::training::{train_run, RunArtifacts};
use mcvd::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Inlines `payoff = @file` references. The file holds one row per line
/// (or `;`-separated rows) of comma-separated values.
fn inline_payoff(pairs: &mut [(String, String)], base: &Path) -> Result<()> {
    for (key, value) in pairs.iter_mut() {
        if key != "payoff" {
            continue;
        }
        if let Some(rel) = value.strip_prefix('@') {
            let path = base.join(rel.trim());
            let text = read_file(&path)?;
            let rows: Vec<&str> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .collect();
            *value = rows.join(";");
        }
    }
    Ok(())
}

/// Config file (optional) plus `--key value` overrides; overrides win.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainingConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = path {
        let mut file_pairs = parse_config_text(&read_file(path)?)?;
        inline_payoff(&mut file_pairs, path.parent().unwrap_or(Path::new(".")))?;
        pairs.extend(file_pairs);
    }
    let mut flag_pairs = parse_override_flags(overrides)?;
    inline_payoff(&mut flag_pairs, Path::new("."))?;
    pairs.extend(flag_pairs);
    Ok(TrainingConfig::from_pairs(&pairs)?)
}

/// What a finished run reports back to the caller.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub artifacts: RunArtifacts,
    /// For matrix games: whether the greedy joint action is the payoff argmax.
    pub greedy_correct: Option<bool>,
}

impl TrainOutcome {
    pub fn final_mean_return(&self) -> f64 {
        self.artifacts.final_report().mean_return
    }
}

pub fn train(config: &TrainingConfig) -> Result<TrainOutcome> {
    let artifacts = train_run(config.clone())?;
    let greedy_correct = match (&artifacts.final_report().tables, config.env) {
        (Some(t), EnvKind::MatrixGame) => Some(t.greedy == config.matrix_game()?.optimal_joint_action()),
        _ => None,
    };
    Ok(TrainOutcome {
        artifacts,
        greedy_correct,
    })
}

/// Trains and writes `curve.csv`, `config.resolved` and, for matrix games,
/// `final_tables.txt` into `out`.
pub fn cmd_train(config: &TrainingConfig, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("config.resolved"), &config.to_resolved_string())?;
    let outcome = train(config)?;
    write_file(&out.join("curve.csv"), &curve_csv(&outcome.artifacts.curve))?;
    if let Some(tables) = &outcome.artifacts.final_report().tables {
        write_file(&out.join("final_tables.txt"), &final_tables(tables))?;
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub final_mean_return: Option<f64>,
    pub greedy_correct: Option<bool>,
    pub status: String,
}

pub const SUMMARY_HEADER: &str = "value,final_mean_return,greedy_correct,status";

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let ret = r.final_mean_return.map_or_else(String::new, |v| format!("{v:.6}"));
        let ok = r.greedy_correct.map_or_else(String::new, |v| v.to_string());
        let status = r.status.replace([',', '\n'], ";");
        let _ = writeln!(out, "{},{},{},{}", r.value, ret, ok, status);
    }
    out
}

fn cell_dir_name(axis: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{axis}={clean}")
}

/// One training run per value of `axis`, each in its own directory under
/// `out`. Cells run in parallel; a failing cell is recorded and the rest
/// continue. `summary.csv` is written after every cell has finished.
pub fn cmd_sweep(base: &TrainingConfig, axis: &str, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;

    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()).into());
    }
    if base.get(axis).is_none() {
        return Err(Error::config(axis, "unknown sweep axis").into());
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|value| {
            let run = || -> Result<TrainOutcome> {
                let mut config = base.clone();
                config.set(axis, value)?;
                config.validate()?;
                cmd_train(&config, &out.join(cell_dir_name(axis, value)))
            };
            match run() {
                Ok(o) => SweepRow {
                    value: value.clone(),
                    final_mean_return: Some(o.final_mean_return()),
                    greedy_correct: o.greedy_correct,
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    value: value.clone(),
                    final_mean_return: None,
                    greedy_correct: None,
                    status: format!("error: {e}"),
                },
            }
        })
        .collect();
    write_file(&out.join("summary.csv"), &summary_csv(&rows))?;
    Ok(rows)
}

/// Inputs of the `bounds` report: either a payoff table or an explicit gap.
#[derive(Clone, Debug)]
pub struct BoundsRequest {
    pub payoff: Option<Vec<f64>>,
    pub delta_s: Option<f64>,
    pub r_max: Option<f64>,
    pub gamma: f64,
    pub n_actions: usize,
    pub n_agents: usize,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub delta_s: f64,
    pub r_max: f64,
    pub alpha_bound: f64,
    pub sigma_bound: f64,
    pub text: String,
}

pub fn cmd_bounds(req: &BoundsRequest) -> Result<BoundsReport> {
    let (delta, r_max) = match (&req.payoff, req.delta_s) {
        (Some(values), None) => (delta_s(values)?, req.r_max.unwrap_or_else(|| reward_range(values))),
        (None, Some(d)) => {
            let r = req
                .r_max
                .ok_or_else(|| Error::Usage("--r-max is required with --delta-s".into()))?;
            (d, r)
        }
        (Some(_), Some(_)) => return Err(Error::Usage("give either a payoff or --delta-s, not both".into()).into()),
        (None, None) => return Err(Error::Usage("give a payoff or --delta-s".into()).into()),
    };
    let inputs = BoundInputs {
        delta_s: delta,
        gamma: req.gamma,
        r_max,
        n_actions: req.n_actions,
        n_agents: req.n_agents,
    };
    let a_bound = alpha_bound(&inputs)?;
    let s_bound = sigma_bound(delta, req.n_actions, req.n_agents)?;

    let mut text = String::new();
    let _ = writeln!(text, "delta_s      = {delta}");
    let _ = writeln!(text, "r_max        = {r_max}");
    let _ = writeln!(text, "gamma        = {}", req.gamma);
    let _ = writeln!(text, "|A|^N        = {}^{}", req.n_actions, req.n_agents);
    let _ = writeln!(text, "alpha_bound  = {a_bound:.10e}");
    let _ = writeln!(text, "sigma_bound  = {s_bound:.10}");
    let verdict = |name: &str, v: f64, bound: f64| {
        if v <= bound {
            format!("{name} = {v} is within the advisory bound {bound:.6e}")
        } else {
            format!("{name} = {v} exceeds advisory bound {bound:.6e} (advisory only)")
        }
    };
    if let Some(a) = req.alpha {
        let _ = writeln!(text, "{}", verdict("alpha", a, a_bound));
    }
    if let Some(s) = req.sigma {
        let _ = writeln!(text, "{}", verdict("sigma", s, s_bound));
    }
    Ok(BoundsReport {
        delta_s: delta,
        r_max,
        alpha_bound: a_bound,
        sigma_bound: s_bound,
        text,
    })
}

/// One reference joint action of the two-agent grid layout.
#[derive(Clone, Copy, Debug)]
pub struct OracleCase {
    pub a: GridAction,
    pub b: GridAction,
    pub expected: f64,
    /// Whether both agents must end where they started.
    pub expect_revert: bool,
}

pub fn oracle_cases(collision_penalty: f64) -> [OracleCase; 4] {
    use GridAction::*;
    [
        OracleCase {
            a: Down,
            b: Still,
            expected: collision_penalty,
            expect_revert: true,
        },
        OracleCase {
            a: Down,
            b: Left,
            expected: 0.0,
            expect_revert: false,
        },
        OracleCase {
            a: Left,
            b: Still,
            expected: 1.0,
            expect_revert: false,
        },
        OracleCase {
            a: Left,
            b: Left,
            expected: 0.0,
            expect_revert: false,
        },
    ]
}

/// Steps the two-agent layout through the reference joint actions with the
/// given collision penalty and compares against the reference payoffs
/// (collision penalty −10). Returns the printed report and whether all match.
pub fn cmd_gridnav_oracle(collision_penalty: f64) -> Result<(String, bool)> {
    let layout = GridLayout::two_agent_example();
    let mut text = String::new();
    let mut all_ok = true;
    for case in oracle_cases(-10.0) {
        let mut env = GridNav::new(layout.clone(), 25, collision_penalty)?;
        let start = env.current().agents.clone();
        let step = env.step_detailed(&[case.a.index(), case.b.index()])?;
        let reverted = step.state.agents == start;
        let ok = step.reward == case.expected && (!case.expect_revert || reverted);
        all_ok &= ok;
        let _ = writeln!(
            text,
            "(A:{},B:{}) expected {:+} actual {:+}{} {}",
            case.a,
            case.b,
            case.expected,
            step.reward,
            if case.expect_revert {
                if reverted { " reverted" } else { " not-reverted" }
            } else {
                ""
            },
            if ok { "ok" } else { "MISMATCH" }
        );
    }
    Ok((text, all_ok))
}

pub fn cmd_gradcheck(seeds: u64) -> Result<(String, Vec<GradCheck>)> {
    let checks = gradcheck::run_suite(seeds)?;
    let mut text = String::new();
    for c in &checks {
        let _ = writeln!(
            text,
            "{:<24} seed {:>2}  max_rel_error {:.3e}  {}",
            c.name,
            c.seed,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok((text, checks))
}
