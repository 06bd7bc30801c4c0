use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcvd::config::TrainingConfig;
use mcvd::env::MatrixGame;
use mcvd_cli::{
    cmd_bounds, cmd_gradcheck, cmd_gridnav_oracle, cmd_sweep, cmd_train, load_config, BoundsRequest, Result,
};

#[derive(Parser)]
#[command(name = "mcvd", version, about = "Correntropy-weighted value decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write curve.csv, config.resolved and (matrix games) final_tables.txt.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Config overrides as `--key value` pairs.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Train once per value of one config key.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Weight bounds that keep the optimal joint action greedy.
    Bounds {
        /// Payoff table, rows separated by `;`, entries by `,`.
        #[arg(long, allow_hyphen_values = true)]
        payoff: Option<String>,
        #[arg(long)]
        delta_s: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        r_max: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long)]
        n_actions: Option<usize>,
        #[arg(long, default_value_t = 2)]
        n_agents: usize,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Check the grid world against its reference payoffs.
    GridnavOracle {
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        collision_penalty: f64,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn print_config_summary(config: &TrainingConfig) {
    eprintln!(
        "env={} loss={} mixer={} joint_net={} sigma={} alpha={} seed={} n_steps={}",
        config.env,
        config.loss,
        config.mixer,
        config.use_joint_net,
        config.sigma,
        config.alpha,
        config.seed,
        config.n_steps
    );
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            out,
            overrides,
        } => {
            let config = load_config(config.as_deref(), &overrides)?;
            print_config_summary(&config);
            let outcome = cmd_train(&config, &out)?;
            println!("final mean return {:.4}", outcome.final_mean_return());
            if let Some(ok) = outcome.greedy_correct {
                println!("greedy joint action optimal: {ok}");
            }
            println!("results in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
        } => {
            let base = load_config(config.as_deref(), &overrides)?;
            print_config_summary(&base);
            let rows = cmd_sweep(&base, &axis, &values, &out)?;
            print!("{}", mcvd_cli::summary_csv(&rows));
            let failed = rows.iter().any(|r| r.status != "ok");
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Bounds {
            payoff,
            delta_s,
            r_max,
            gamma,
            n_actions,
            n_agents,
            alpha,
            sigma,
        } => {
            let game = payoff
                .as_deref()
                .map(|p| MatrixGame::parse(p, n_agents))
                .transpose()?;
            let n_actions = match (&game, n_actions) {
                (Some(g), _) => g.n_actions(),
                (None, Some(n)) => n,
                (None, None) => {
                    return Err(mcvd::Error::Usage("--n-actions is required with --delta-s".into()).into())
                }
            };
            let report = cmd_bounds(&BoundsRequest {
                payoff: game.map(|g| g.values().to_vec()),
                delta_s,
                r_max,
                gamma,
                n_actions,
                n_agents,
                alpha,
                sigma,
            })?;
            print!("{}", report.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::GridnavOracle { collision_penalty } => {
            let (text, ok) = cmd_gridnav_oracle(collision_penalty)?;
            print!("{text}");
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Gradcheck { seeds } => {
            let (text, checks) = cmd_gradcheck(seeds)?;
            print!("{text}");
            let failed = checks.iter().filter(|c| !c.passed()).count();
            println!("{} checks, {} failed", checks.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
