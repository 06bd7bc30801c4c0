//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Training cells run in parallel. A failing criterion is reported, not
//! turned into a process failure, unless `MCVD_ACCEPTANCE_STRICT=1` is set.
//! Errors while running a check (as opposed to a failed check) always fail.

use std::path::Path;
use std::time::Instant;

use mcvd::bounds::{alpha_bound, sigma_bound, BoundInputs};
use mcvd::config::{EnvKind, TrainingConfig};
use mcvd::decomposition::MonotonicMixer;
use mcvd::env::EnvRng;
use mcvd::gradcheck;
use mcvd::losses::{mcvd_td_loss, mcvd_weight, mse_td_loss, KernelBandwidth};
use mcvd::training::{evaluate_random, train_run, RunArtifacts};
use mcvd_cli::{cmd_gridnav_oracle, cmd_train};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const AA: [usize; 2] = [0, 0];
const CC: [usize; 2] = [2, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = Result<Verdict, String>;

fn bandwidth(s: f64) -> KernelBandwidth {
    KernelBandwidth::new(s).expect("positive bandwidth")
}

fn grid_oracle() -> Check {
    let start = Instant::now();
    let (text, ok) = cmd_gridnav_oracle(-10.0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let summary = text.lines().collect::<Vec<_>>().join("; ");
    Ok(verdict(ok && secs < 1.0, format!("{summary}; {secs:.3}s")))
}

fn loss_suite() -> Check {
    let mut failures = Vec::new();

    let closed_form = [
        (mcvd_weight(1.0, 1.0, bandwidth(1.0)), 1.0),
        (mcvd_weight(-3.0, 1.0, bandwidth(0.5)), 1.0),
        (mcvd_weight(3.0, 1.0, bandwidth(1.0)), (-2.0f64).exp()),
    ];
    for (got, want) in closed_form {
        if (got - want).abs() > 1e-15 {
            failures.push(format!("weight {got} != {want}"));
        }
    }

    let q = [3.0, -1.5, 0.25, 12.0];
    let y = [1.0, 2.0, 0.25, -8.0];
    let mse = mse_td_loss(&q, &y).map_err(|e| e.to_string())?;
    let wide = mcvd_td_loss(&q, &y, bandwidth(1e6)).map_err(|e| e.to_string())?;
    let limit_err = (wide.loss - mse.loss)
        .abs()
        .max(wide.grad.iter().zip(&mse.grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    if limit_err > 1e-6 {
        failures.push(format!("wide-kernel gap {limit_err:.3e}"));
    }

    let mut rng = EnvRng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..10_000 {
        let y: f64 = rng.gen_range(-20.0..20.0);
        let q: f64 = rng.gen_range(-20.0..20.0);
        let s = bandwidth(rng.gen_range(0.05..20.0));
        let dq: f64 = rng.gen_range(0.0..5.0);
        let (w, w_further) = (mcvd_weight(q, y, s), mcvd_weight(q + dq, y, s));
        let ok = (0.0..=1.0).contains(&w)
            && w_further <= w
            && (q > y || w == 1.0)
            && mcvd_weight(y - (q - y).abs(), y, s) == 1.0;
        if !ok {
            violations += 1;
        }
    }
    if violations > 0 {
        failures.push(format!("{violations} monotonicity violations"));
    }

    // The kernel-weighted squared overestimate w(e) e^2 is largest at
    // e = sigma * sqrt(2). Scan the implemented per-sample loss for it.
    let mut worst_peak: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let analytic = s * 2f64.sqrt();
        let n = 200_000;
        let (mut best_e, mut best) = (0.0, f64::NEG_INFINITY);
        for k in 1..=n {
            let e = 5.0 * s * k as f64 / n as f64;
            let v = mcvd_td_loss(&[e], &[0.0], bandwidth(s)).map_err(|e| e.to_string())?.loss;
            if v > best {
                best = v;
                best_e = e;
            }
        }
        worst_peak = worst_peak.max((best_e - analytic).abs() / analytic);
    }
    if worst_peak > 0.01 {
        failures.push(format!("peak off by {:.3}%", worst_peak * 100.0));
    }

    let detail = format!(
        "closed forms, wide-kernel gap {limit_err:.1e}, 10000 triples, peak rel. error {worst_peak:.1e}"
    );
    Ok(if failures.is_empty() {
        verdict(true, detail)
    } else {
        verdict(false, format!("{detail}: {}", failures.join(", ")))
    })
}

fn gradient_suite() -> Check {
    let checks = gradcheck::run_suite(10).map_err(|e| e.to_string())?;
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed = checks.iter().filter(|c| !c.passed()).count();
    Ok(verdict(
        failed == 0 && worst < 1e-4,
        format!("{} checks over 10 seeds, max relative error {worst:.2e}", checks.len()),
    ))
}

fn bound_calculators() -> Check {
    // Closed forms evaluated at 30 digits outside this code base.
    const ALPHA_REF: f64 = 0.001_111_111_111_111_111_1;
    const SIGMA_REF: f64 = 0.777_214_660_532_374_7;
    let inputs = BoundInputs {
        delta_s: 2.0,
        gamma: 0.0,
        r_max: 20.0,
        n_actions: 3,
        n_agents: 2,
    };
    let a = alpha_bound(&inputs).map_err(|e| e.to_string())?;
    let s = sigma_bound(2.0, 3, 2).map_err(|e| e.to_string())?;
    let a_err = (a - ALPHA_REF).abs() / ALPHA_REF;
    let s_err = (s - SIGMA_REF).abs() / SIGMA_REF;

    // sigma_bound^2 / alpha_bound = e r_max^2 / (2 (1 - gamma)^2), whatever |A| and N.
    let mut ratio_err: f64 = 0.0;
    for (delta, r_max, gamma) in [(2.0, 20.0, 0.0), (0.5, 3.0, 0.9), (7.0, 100.0, 0.99)] {
        let expected = std::f64::consts::E * r_max * r_max / (2.0 * (1.0 - gamma) * (1.0f64 - gamma));
        for n_actions in 2..=8 {
            for n_agents in 1..=5 {
                let a = alpha_bound(&BoundInputs {
                    delta_s: delta,
                    gamma,
                    r_max,
                    n_actions,
                    n_agents,
                })
                .map_err(|e| e.to_string())?;
                let s = sigma_bound(delta, n_actions, n_agents).map_err(|e| e.to_string())?;
                ratio_err = ratio_err.max((s * s / a - expected).abs() / expected);
            }
        }
    }
    Ok(verdict(
        a_err < 5e-11 && s_err < 5e-11 && ratio_err < 1e-12,
        format!("alpha {a:.10e} (rel {a_err:.1e}), sigma {s:.10} (rel {s_err:.1e}), ratio rel {ratio_err:.1e}"),
    ))
}

fn mixer_probe() -> Check {
    let (state_dim, n_agents, embed) = (6, 3, 8);
    let h = 1e-6;
    let mut worst = f64::INFINITY;
    for mixer_seed in 0..10u64 {
        let mut rng = EnvRng::seed_from_u64(100 + mixer_seed);
        let mixer = MonotonicMixer::new(state_dim, n_agents, embed, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let state: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..n_agents).map(|_| rng.gen_range(-15.0..15.0)).collect();
            for i in 0..n_agents {
                let (mut up, mut down) = (q.clone(), q.clone());
                up[i] += h;
                down[i] -= h;
                let d = (mixer.mix(&state, &up).map_err(|e| e.to_string())?
                    - mixer.mix(&state, &down).map_err(|e| e.to_string())?)
                    / (2.0 * h);
                worst = worst.min(d);
            }
        }
    }
    Ok(verdict(
        worst >= -1e-9,
        format!("100 states x 3 agents, min dQ_jt/dQ_i {worst:.3e}"),
    ))
}

fn determinism() -> Check {
    let dirs: Vec<tempfile::TempDir> = (0..4).map(|_| tempfile::tempdir().expect("tempdir")).collect();
    let mut omg = TrainingConfig::defaults(EnvKind::MatrixGame);
    omg.n_steps = 3000;
    omg.evaluate_fre = 500;
    omg.seed = 9;
    let mut nav = TrainingConfig::defaults(EnvKind::ParticleNav);
    nav.n_steps = 3000;
    nav.evaluate_fre = 1000;
    nav.seed = 9;
    let files = |dir: &Path, names: &[&str]| -> Vec<Vec<u8>> {
        names.iter().map(|n| std::fs::read(dir.join(n)).expect("result file")).collect()
    };
    for dir in &dirs[..2] {
        cmd_train(&omg, dir.path()).map_err(|e| e.to_string())?;
    }
    for dir in &dirs[2..] {
        cmd_train(&nav, dir.path()).map_err(|e| e.to_string())?;
    }
    let omg_names = ["curve.csv", "final_tables.txt", "config.resolved"];
    let nav_names = ["curve.csv", "config.resolved"];
    let same_omg = files(dirs[0].path(), &omg_names) == files(dirs[1].path(), &omg_names);
    let same_nav = files(dirs[2].path(), &nav_names) == files(dirs[3].path(), &nav_names);
    Ok(verdict(
        same_omg && same_nav,
        format!("matrix game identical: {same_omg}, particle nav identical: {same_nav}"),
    ))
}

/// Final learned values of one matrix-game run.
#[derive(Clone, Debug)]
struct OmgResult {
    seed: u64,
    success: bool,
    q_jt_aa: f64,
    q_hat_aa: Option<f64>,
    q_jt_cc: f64,
}

fn omg_result(seed: u64, artifacts: &RunArtifacts) -> Result<OmgResult, String> {
    let tables = artifacts
        .final_report()
        .tables
        .as_ref()
        .ok_or("matrix game run without tables")?;
    Ok(OmgResult {
        seed,
        success: tables.greedy == AA,
        q_jt_aa: tables.q_jt_at(&AA),
        q_hat_aa: tables.q_hat_at(&AA),
        q_jt_cc: tables.q_jt_at(&CC),
    })
}

fn successes(runs: &[OmgResult]) -> usize {
    runs.iter().filter(|r| r.success).count()
}

/// Mean |Q_jt(A,A) - 8| over successful seeds.
fn mean_aa_error(runs: &[OmgResult]) -> Option<f64> {
    let errs: Vec<f64> = runs.iter().filter(|r| r.success).map(|r| (r.q_jt_aa - 8.0).abs()).collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

fn describe(runs: &[OmgResult]) -> String {
    runs.iter()
        .map(|r| {
            let hat = r.q_hat_aa.map_or_else(String::new, |h| format!("/{h:.2}"));
            format!("s{}:{}{:.2}{}", r.seed, if r.success { "+" } else { "-" }, r.q_jt_aa, hat)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Cell {
    Mcvd(u32),
    Ow(u32),
    NoJointNet,
    MonotonicMcvd,
}

fn cell_config(cell: Cell, seed: u64) -> TrainingConfig {
    let mut c = TrainingConfig::defaults(EnvKind::MatrixGame);
    c.seed = seed;
    match cell {
        Cell::Mcvd(sigma) => c.sigma = f64::from(sigma),
        Cell::Ow(alpha_percent) => {
            c.loss = "ow".parse().expect("loss name");
            c.mixer = "monotonic".parse().expect("mixer name");
            c.alpha = f64::from(alpha_percent) / 100.0;
        }
        Cell::NoJointNet => c.use_joint_net = false,
        Cell::MonotonicMcvd => c.mixer = "monotonic".parse().expect("mixer name"),
    }
    c
}

fn run_cells(cells: &[Cell]) -> Result<Vec<(Cell, Vec<OmgResult>)>, String> {
    let jobs: Vec<(Cell, u64)> = cells.iter().flat_map(|&c| SEEDS.map(|s| (c, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let artifacts = train_run(cell_config(cell, seed)).map_err(|e| format!("{cell:?} seed {seed}: {e}"))?;
            omg_result(seed, &artifacts)
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(cells
        .iter()
        .map(|&c| {
            let runs = jobs
                .iter()
                .zip(&results)
                .filter(|((cell, _), _)| *cell == c)
                .map(|(_, r)| r.clone())
                .collect();
            (c, runs)
        })
        .collect())
}

fn runs_of(cells: &[(Cell, Vec<OmgResult>)], cell: Cell) -> &[OmgResult] {
    &cells.iter().find(|(c, _)| *c == cell).expect("cell ran").1
}

fn omg_success(cells: &[(Cell, Vec<OmgResult>)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for sigma in [1, 2, 5] {
        let runs = runs_of(cells, Cell::Mcvd(sigma));
        let wins = successes(runs);
        let values_ok = runs.iter().filter(|r| r.success).all(|r| {
            (r.q_jt_aa - 8.0).abs() <= 0.5 && r.q_hat_aa.is_some_and(|h| (h - 8.0).abs() <= 0.5)
        });
        pass &= wins >= 4 && values_ok;
        parts.push(format!("sigma={sigma}: {wins}/5 [{}]", describe(runs)));
    }
    verdict(pass, parts.join("; "))
}

fn omg_wide_kernel(cells: &[(Cell, Vec<OmgResult>)]) -> Verdict {
    let runs = runs_of(cells, Cell::Mcvd(10));
    let fails = 5 - successes(runs);
    verdict(fails >= 4, format!("sigma=10 fails {fails}/5 [{}]", describe(runs)))
}

fn omg_ow(cells: &[(Cell, Vec<OmgResult>)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [10, 50] {
        let runs = runs_of(cells, Cell::Ow(alpha));
        let fails = 5 - successes(runs);
        pass &= fails >= 4;
        let mut part = format!("alpha=0.{alpha:02}: fails {fails}/5");
        if alpha == 50 {
            let pinned = runs.iter().filter(|r| r.q_jt_aa < r.q_jt_cc).count();
            pass &= pinned >= 4;
            let pairs: Vec<String> = runs
                .iter()
                .map(|r| format!("s{}:{:.2}<{:.2}", r.seed, r.q_jt_aa, r.q_jt_cc))
                .collect();
            part.push_str(&format!(", Q_jt(A,A)<Q_jt(C,C) in {pinned}/5 [{}]", pairs.join(" ")));
        }
        parts.push(part);
    }
    verdict(pass, parts.join("; "))
}

fn ablations(cells: &[(Cell, Vec<OmgResult>)]) -> Verdict {
    let base = runs_of(cells, Cell::Mcvd(1));
    let (base_wins, base_err) = (successes(base), mean_aa_error(base));
    let mut pass = true;
    let mut parts = vec![format!(
        "baseline {base_wins}/5 err {}",
        base_err.map_or("-".into(), |e| format!("{e:.3}"))
    )];
    for (name, cell) in [("no joint net", Cell::NoJointNet), ("monotonic mixer", Cell::MonotonicMcvd)] {
        let runs = runs_of(cells, cell);
        let (wins, err) = (successes(runs), mean_aa_error(runs));
        let fewer = wins < base_wins;
        let worse = matches!((err, base_err), (Some(e), Some(b)) if e >= 2.0 * b);
        pass &= fewer || worse;
        parts.push(format!(
            "{name} {wins}/5 err {}",
            err.map_or("-".into(), |e| format!("{e:.3}"))
        ));
    }
    verdict(pass, parts.join("; "))
}

fn particle_nav() -> Check {
    let rows = SEEDS
        .par_iter()
        .map(|&seed| {
            let mut config = TrainingConfig::defaults(EnvKind::ParticleNav);
            config.n_agents = 3;
            config.sigma = 1.0;
            config.n_steps = 200_000;
            config.seed = seed;
            let mut env = config.build_env().map_err(|e| e.to_string())?;
            let mut rng = EnvRng::seed_from_u64(seed);
            let (random, _) = evaluate_random(env.as_mut(), 1000, &mut rng).map_err(|e| e.to_string())?;
            let trained = train_run(config).map_err(|e| e.to_string())?.final_report().mean_return;
            Ok((seed, trained, random))
        })
        .collect::<Result<Vec<(u64, f64, f64)>, String>>()?;
    // Both returns are negative; "1.5x" is read as at least 50% closer to zero.
    let wins = rows.iter().filter(|(_, t, r)| t.abs() <= 0.5 * r.abs()).count();
    let lenient = rows.iter().filter(|(_, t, r)| t.abs() <= r.abs() / 1.5).count();
    let parts: Vec<String> = rows
        .iter()
        .map(|(s, t, r)| format!("s{s}:{t:.2} vs {r:.2}"))
        .collect();
    Ok(verdict(
        wins >= 3,
        format!(
            "{wins}/5 within half the random return ({lenient}/5 within 2/3) [{}]",
            parts.join(" ")
        ),
    ))
}

fn timed(check: fn() -> Check) -> (Check, f64) {
    let start = Instant::now();
    let result = check();
    (result, start.elapsed().as_secs_f64())
}

fn main() {
    let strict = std::env::var("MCVD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut lines: Vec<(u8, &str, Check, f64)> = Vec::new();
    let quick: [(u8, &str, fn() -> Check); 6] = [
        (1, "grid oracle", grid_oracle),
        (5, "loss operators", loss_suite),
        (6, "gradient check", gradient_suite),
        (7, "bound calculators", bound_calculators),
        (8, "monotonic mixer", mixer_probe),
        (10, "determinism", determinism),
    ];
    for (id, name, check) in quick {
        let (result, secs) = timed(check);
        lines.push((id, name, result, secs));
    }

    let start = Instant::now();
    let cells = run_cells(&[
        Cell::Mcvd(1),
        Cell::Mcvd(2),
        Cell::Mcvd(5),
        Cell::Mcvd(10),
        Cell::Ow(10),
        Cell::Ow(50),
        Cell::NoJointNet,
        Cell::MonotonicMcvd,
    ]);
    let secs = start.elapsed().as_secs_f64();
    let matrix: [(u8, &str, fn(&[(Cell, Vec<OmgResult>)]) -> Verdict); 4] = [
        (2, "matrix game MCVD success", omg_success),
        (3, "matrix game wide kernel", omg_wide_kernel),
        (4, "matrix game OW-QMIX", omg_ow),
        (11, "ablation direction", ablations),
    ];
    for (id, name, judge) in matrix {
        let result = cells.as_ref().map(|c| judge(c)).map_err(Clone::clone);
        lines.push((id, name, result, secs));
    }

    let (result, secs) = timed(particle_nav);
    lines.push((9, "particle navigation", result, secs));

    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    let mut errored = 0;
    for (id, name, result, secs) in &lines {
        match result {
            Ok(v) => {
                failed += usize::from(!v.pass);
                let tag = if v.pass { "PASS" } else { "FAIL" };
                println!("criterion {id:>2} {tag} {name} ({secs:.1}s): {}", v.detail);
            }
            Err(e) => {
                errored += 1;
                println!("criterion {id:>2} FAIL {name} ({secs:.1}s): error: {e}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed, {} errored",
        lines.len() - failed - errored,
        failed,
        errored
    );
    if errored > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
