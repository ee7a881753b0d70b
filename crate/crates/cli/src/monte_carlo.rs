//! Repeated estimation on the ill-conditioned family across δ.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use udkf::mle::{minimize, MinimizeOptions, Objective};
use udkf::models::{check_derivative_gate, IllConditionedModel};
use udkf::trajectory::{derive_seed, simulate};
use udkf::Engine;

use crate::config::{ExperimentConfig, MonteCarloConfig, FULL_REPLICATIONS};
use crate::report::{self, num, Check, Outcome, Provenance, Report};
use crate::CliError;

/// Published UD-engine `(δ, mean, RMSE, MAPE)` at 250 replications.
pub const REFERENCE_UD: [(f64, f64, f64, f64); 5] = [
    (1e-2, 6.9984, 0.1243, 1.4438),
    (1e-3, 7.0012, 0.1227, 1.4011),
    (1e-4, 7.0083, 0.1111, 1.2794),
    (1e-5, 6.9966, 0.1274, 1.4706),
    (1e-6, 6.9981, 0.1264, 1.4555),
];

/// Published conventional-engine values, same layout. Not gated: they
/// depend on the platform's rounding.
pub const REFERENCE_CONV: [(f64, f64, f64, f64); 5] = [
    (1e-2, 6.9984, 0.1243, 1.4438),
    (1e-3, 7.0035, 0.1233, 1.4096),
    (1e-4, 7.5116, 1.1953, 10.8291),
    (1e-5, 5.4700, 5.1658, 72.0857),
    (1e-6, 4.0378, 12.1748, 157.6825),
];

pub const FULL_SCALE_BAND: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication {
    pub delta: f64,
    pub engine: Engine,
    pub index: usize,
    pub seed: u64,
    pub theta_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub delta: f64,
    pub engine: Engine,
    pub replications: usize,
    pub mean: f64,
    pub rmse: f64,
    pub mape: f64,
    /// Monte-Carlo standard error of the MAPE.
    pub mape_stderr: f64,
    pub failures: usize,
}

/// `(mean, RMSE, MAPE, stderr of MAPE)` of estimates of `truth`.
pub fn aggregate(estimates: &[f64], truth: f64) -> (f64, f64, f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let rmse = (estimates.iter().map(|t| (t - truth).powi(2)).sum::<f64>() / n).sqrt();
    let ape: Vec<f64> = estimates.iter().map(|t| (t - truth).abs() / truth * 100.0).collect();
    let mape = ape.iter().sum::<f64>() / n;
    let stderr = if estimates.len() > 1 {
        (ape.iter().map(|a| (a - mape).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    (mean, rmse, mape, stderr)
}

pub fn summarize(mc: &MonteCarloConfig, engines: &[Engine], reps: &[Replication]) -> Vec<Summary> {
    let mut out = Vec::new();
    for &delta in &mc.deltas {
        for &engine in engines {
            let group: Vec<&Replication> = reps.iter().filter(|r| r.delta == delta && r.engine == engine).collect();
            let est: Vec<f64> = group.iter().map(|r| r.theta_hat).collect();
            let (mean, rmse, mape, mape_stderr) = aggregate(&est, mc.theta_true);
            out.push(Summary {
                delta,
                engine,
                replications: group.len(),
                mean,
                rmse,
                mape,
                mape_stderr,
                failures: group.iter().filter(|r| !r.converged).count(),
            });
        }
    }
    out
}

fn one(
    mc: &MonteCarloConfig,
    engines: &[Engine],
    delta: f64,
    index: usize,
    seed: u64,
) -> Result<Vec<Replication>, CliError> {
    let model = IllConditionedModel::new(delta)?;
    let z = simulate(&model, &[mc.theta_true], mc.steps, seed)?.measurements;
    Ok(engines
        .iter()
        .map(|&engine| {
            let r = minimize(&Objective::new(&model, &z, engine), &[mc.theta0], &MinimizeOptions::default());
            Replication {
                delta,
                engine,
                index,
                seed,
                theta_hat: r.theta_hat[0],
                converged: r.converged,
                iterations: r.iterations,
                evaluations: r.evaluations,
                failure: r.failure_reason,
            }
        })
        .collect())
}

/// Runs every `(δ, replication)` pair. Replication `r` uses the same data
/// seed for every δ.
pub fn replicate(mc: &MonteCarloConfig, engines: &[Engine], root_seed: u64) -> Result<Vec<Replication>, CliError> {
    for &delta in &mc.deltas {
        check_derivative_gate(&IllConditionedModel::new(delta)?, &[mc.theta_true])?;
    }
    let jobs: Vec<(f64, usize)> = mc.deltas.iter().flat_map(|&d| (0..mc.replications).map(move |r| (d, r))).collect();
    let runs: Vec<Result<Vec<Replication>, CliError>> =
        jobs.par_iter().map(|&(d, r)| one(mc, engines, d, r, derive_seed(root_seed, r as u64))).collect();
    let mut out = Vec::with_capacity(jobs.len() * engines.len());
    for run in runs {
        out.extend(run?);
    }
    Ok(out)
}

fn find(s: &[Summary], delta: f64, engine: Engine) -> Option<&Summary> {
    s.iter().find(|x| x.delta == delta && x.engine == engine)
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

/// The reference setup the statistical checks are calibrated for.
pub fn is_reference_setup(mc: &MonteCarloConfig) -> bool {
    mc.steps == 1000 && mc.theta_true == 7.0 && mc.theta0 == 1.0
}

pub fn checks(mc: &MonteCarloConfig, s: &[Summary]) -> Vec<Check> {
    let mut out = Vec::new();
    if !is_reference_setup(mc) {
        return out;
    }
    if let Some(u) = find(s, 1e-2, Engine::Ud) {
        out.push(Check::new(
            "ud delta=1e-2 mean in [6.9, 7.1]",
            in_band(u.mean, 6.9, 7.1),
            format!("mean {:.4}", u.mean),
        ));
        out.push(Check::new(
            "ud delta=1e-2 RMSE in [0.08, 0.18]",
            in_band(u.rmse, 0.08, 0.18),
            format!("RMSE {:.4}", u.rmse),
        ));
        out.push(Check::new(
            "ud delta=1e-2 MAPE in [1.0, 2.0]",
            in_band(u.mape, 1.0, 2.0),
            format!("MAPE {:.4}", u.mape),
        ));
    }
    if let (Some(u), Some(c)) = (find(s, 1e-6, Engine::Ud), find(s, 1e-6, Engine::Conv)) {
        out.push(Check::new(
            "delta=1e-6 ud MAPE < 5 and conv MAPE > 50",
            u.mape < 5.0 && c.mape > 50.0,
            format!("ud {:.4}, conv {:.4}", u.mape, c.mape),
        ));
    }
    let ud: Vec<&Summary> = s.iter().filter(|x| x.engine == Engine::Ud).collect();
    if !ud.is_empty() {
        let worst = ud.iter().map(|x| x.mape).fold(0.0, f64::max);
        out.push(Check::new("ud MAPE < 5 at every delta", worst < 5.0, format!("largest {worst:.4}")));
    }
    let mut conv: Vec<&Summary> = s.iter().filter(|x| x.engine == Engine::Conv).collect();
    conv.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    if conv.len() >= 2 {
        // Adjacent drops up to one standard error are sampling noise.
        let ordered = conv.windows(2).all(|w| w[1].mape >= w[0].mape - w[0].mape_stderr.max(w[1].mape_stderr));
        let trail: Vec<String> = conv.iter().map(|x| format!("{}:{:.4}", num(x.delta), x.mape)).collect();
        out.push(Check::new("conv MAPE non-decreasing as delta shrinks", ordered, trail.join(" ")));
        let first_over = conv.iter().find(|x| x.mape > 10.0).map(|x| x.delta);
        out.push(Check::new(
            "conv MAPE crosses 10 at delta <= 1e-4",
            first_over.is_some_and(|d| d <= 1e-4),
            format!("first delta over 10: {}", first_over.map(num).unwrap_or_else(|| "none".into())),
        ));
    }
    if mc.replications >= FULL_REPLICATIONS {
        for (delta, _, rmse, mape) in REFERENCE_UD {
            if let Some(u) = find(s, delta, Engine::Ud) {
                let ok =
                    (u.rmse / rmse - 1.0).abs() <= FULL_SCALE_BAND && (u.mape / mape - 1.0).abs() <= FULL_SCALE_BAND;
                out.push(Check::new(
                    format!("full scale ud delta={} within 20%", num(delta)),
                    ok,
                    format!("RMSE {:.4} (ref {rmse}), MAPE {:.4} (ref {mape})", u.rmse, u.mape),
                ));
            }
        }
    }
    out
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn write_replications(path: &Path, reps: &[Replication]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "delta",
        "engine",
        "replication",
        "seed",
        "theta_hat",
        "converged",
        "iterations",
        "evaluations",
        "failure",
    ])
    .map_err(csv_err)?;
    for r in reps {
        w.write_record([
            num(r.delta),
            r.engine.name().to_string(),
            r.index.to_string(),
            r.seed.to_string(),
            num(r.theta_hat),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.evaluations.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn write_summary(path: &Path, s: &[Summary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["delta", "engine", "mean", "rmse", "mape", "failures"]).map_err(csv_err)?;
    for x in s {
        w.write_record([
            num(x.delta),
            x.engine.name().to_string(),
            num(x.mean),
            num(x.rmse),
            num(x.mape),
            x.failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// MAPE per δ, one column per engine, for plotting.
fn write_mape_table(path: &Path, mc: &MonteCarloConfig, engines: &[Engine], s: &[Summary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["delta".to_string()];
    header.extend(engines.iter().map(|e| format!("{}_mape", e.name())));
    w.write_record(&header).map_err(csv_err)?;
    for &delta in &mc.deltas {
        let mut rec = vec![num(delta)];
        rec.extend(engines.iter().map(|&e| find(s, delta, e).map(|x| num(x.mape)).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
struct Results<'a> {
    summary: &'a [Summary],
    reference_ud: Vec<[f64; 4]>,
    reference_conv: Vec<[f64; 4]>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mc = &cfg.monte_carlo;
    let engines = cfg.engine.engines();
    let reps = replicate(mc, &engines, cfg.seed)?;
    let summary = summarize(mc, &engines, &reps);
    let checks = checks(mc, &summary);
    println!("{:>8} {:>5} {:>10} {:>10} {:>10} {:>9}", "delta", "eng", "mean", "rmse", "mape", "failures");
    for x in &summary {
        println!(
            "{:>8} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>9}",
            num(x.delta),
            x.engine.name(),
            x.mean,
            x.rmse,
            x.mape,
            x.failures
        );
    }

    report::ensure_dir(&cfg.out)?;
    let raw = cfg.out.join("monte_carlo_replications.csv");
    let sum = cfg.out.join("monte_carlo_summary.csv");
    let mape = cfg.out.join("monte_carlo_mape.csv");
    let gp = cfg.out.join("monte_carlo.gp");
    let json = cfg.out.join("monte_carlo.json");
    write_replications(&raw, &reps)?;
    write_summary(&sum, &summary)?;
    write_mape_table(&mape, mc, &engines, &summary)?;
    let labels: Vec<String> = engines.iter().map(|e| format!("{} MAPE", e.name())).collect();
    let series: Vec<(usize, &str)> = labels.iter().enumerate().map(|(i, l)| (i + 2, l.as_str())).collect();
    report::write_text(&gp, &report::gnuplot_script("monte_carlo_mape.csv", "MAPE, percent", "delta", &series, true))?;
    let rows = |t: &[(f64, f64, f64, f64)]| t.iter().map(|r| [r.0, r.1, r.2, r.3]).collect();
    report::write_json(
        &json,
        &Report {
            provenance: Provenance::new("monte-carlo", cfg),
            checks: &checks,
            results: Results {
                summary: &summary,
                reference_ud: rows(&REFERENCE_UD),
                reference_conv: rows(&REFERENCE_CONV),
            },
        },
    )?;
    Ok(Outcome { checks, files: vec![raw, sum, mape, gp, json] })
}
