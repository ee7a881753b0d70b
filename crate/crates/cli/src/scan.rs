//! Likelihood and gradient scan of the INS model.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use udkf::mle::{scan_row, uniform_grid, Objective, ScanRow, ScanTable};
use udkf::models::{check_derivative_gate, InsModel};
use udkf::trajectory::simulate;
use udkf::Engine;

use crate::config::ExperimentConfig;
use crate::report::{self, num, opt_num, Check, Outcome, Provenance, Report};
use crate::CliError;

/// Cross-engine agreement, `|a − b| / (1 + |b|)`.
pub const ENGINE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct EngineSummary {
    pub engine: Engine,
    pub argmin: Option<f64>,
    pub zero_crossing: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub sign_changes: usize,
    pub failed_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanResults {
    pub gamma_true: f64,
    pub steps: usize,
    pub seed: u64,
    pub engines: Vec<EngineSummary>,
    pub max_engine_difference: Option<f64>,
    pub max_pointwise_difference: Option<f64>,
}

pub fn tabulate(model: &InsModel, z: &[udkf::Vector], engine: Engine, grid: &[f64]) -> ScanTable {
    let obj = Objective::new(model, z, engine);
    let rows: Vec<ScanRow> = grid.par_iter().map(|&t| scan_row(&obj, t)).collect();
    ScanTable::from_rows(rows)
}

pub fn summarize(engine: Engine, t: &ScanTable) -> EngineSummary {
    EngineSummary {
        engine,
        argmin: t.argmin.map(|i| t.rows[i].theta),
        zero_crossing: t.zero_crossing(),
        bracket: t.bracket.map(|(i, j)| (t.rows[i].theta, t.rows[j].theta)),
        sign_changes: t.sign_changes(),
        failed_points: t.rows.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Column agreement `max|a − b| / (1 + max|b|)` over `−L` and `−∇L`.
/// Near the gradient's zero a pointwise ratio only measures the rounding
/// floor of the sum.
pub fn engine_difference(a: &ScanTable, b: &ScanTable) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for pick in [|r: &ScanRow| r.neg_loglik, |r: &ScanRow| r.neg_gradient] {
        let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            let (p, q) = (pick(x)?, pick(y)?);
            diff = diff.max((p - q).abs());
            scale = scale.max(q.abs());
        }
        worst = worst.max(diff / (1.0 + scale));
    }
    Some(worst)
}

/// Largest pointwise `|a − b| / (1 + |b|)`, reported only.
pub fn pointwise_difference(a: &ScanTable, b: &ScanTable) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        for (p, q) in [(x.neg_loglik?, y.neg_loglik?), (x.neg_gradient?, y.neg_gradient?)] {
            worst = worst.max((p - q).abs() / (1.0 + q.abs()));
        }
    }
    Some(worst)
}

pub fn checks(s: &EngineSummary, gamma_true: f64, step: f64) -> Vec<Check> {
    let e = s.engine.name();
    let in_bracket = match (s.argmin, s.bracket) {
        (Some(a), Some((lo, hi))) => a == lo || a == hi,
        _ => false,
    };
    let near = s.argmin.is_some_and(|a| (a - gamma_true).abs() <= step * (1.0 + 1e-9));
    vec![
        Check::new(
            format!("{e} single gradient sign change"),
            s.sign_changes == 1,
            format!("{} sign changes", s.sign_changes),
        ),
        Check::new(
            format!("{e} argmin at the gradient zero crossing"),
            in_bracket,
            format!("argmin {}, bracket {:?}", opt_num(s.argmin), s.bracket),
        ),
        Check::new(
            format!("{e} argmin within one grid step of truth"),
            near,
            format!("argmin {}, truth {}", opt_num(s.argmin), num(gamma_true)),
        ),
    ]
}

fn write_csv(path: &Path, grid: &[f64], tables: &[(Engine, ScanTable)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    let mut header = vec!["gamma1".to_string()];
    for (e, _) in tables {
        for col in ["neg_loglik", "neg_grad", "status"] {
            header.push(format!("{}_{col}", e.name()));
        }
    }
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for (k, g) in grid.iter().enumerate() {
        let mut rec = vec![num(*g)];
        for (_, t) in tables {
            let r = &t.rows[k];
            rec.push(opt_num(r.neg_loglik));
            rec.push(opt_num(r.neg_gradient));
            rec.push(r.error.clone().unwrap_or_else(|| "ok".into()));
        }
        w.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = &cfg.scan;
    let model = InsModel::new(s.constants)?;
    check_derivative_gate(&model, &[s.gamma_true])?;
    let z = simulate(&model, &[s.gamma_true], s.steps, cfg.seed)?.measurements;
    let grid = uniform_grid(s.grid_start, s.grid_step, s.grid_points);
    let tables: Vec<(Engine, ScanTable)> =
        cfg.engine.engines().into_iter().map(|e| (e, tabulate(&model, &z, e, &grid))).collect();

    let engines: Vec<EngineSummary> = tables.iter().map(|(e, t)| summarize(*e, t)).collect();
    let mut checks: Vec<Check> = engines.iter().flat_map(|e| checks(e, s.gamma_true, s.grid_step)).collect();
    let (max_engine_difference, max_pointwise_difference) = match tables.as_slice() {
        [(_, a), (_, b)] => {
            let d = engine_difference(a, b);
            checks.push(Check::new(
                "engine columns agree",
                d.is_some_and(|d| d <= ENGINE_TOL),
                format!("max column difference {} (limit {ENGINE_TOL:e})", opt_num(d)),
            ));
            (d, pointwise_difference(a, b))
        }
        _ => (None, None),
    };
    let results = ScanResults {
        gamma_true: s.gamma_true,
        steps: s.steps,
        seed: cfg.seed,
        engines,
        max_engine_difference,
        max_pointwise_difference,
    };
    for e in &results.engines {
        println!(
            "{}: argmin {} zero crossing {} sign changes {}",
            e.engine.name(),
            opt_num(e.argmin),
            opt_num(e.zero_crossing),
            e.sign_changes
        );
    }

    report::ensure_dir(&cfg.out)?;
    let csv_path = cfg.out.join("scan.csv");
    write_csv(&csv_path, &grid, &tables)?;
    let series: Vec<(usize, String)> =
        tables.iter().enumerate().map(|(i, (e, _))| (2 + 3 * i, format!("{} -L", e.name()))).collect();
    let series_ref: Vec<(usize, &str)> = series.iter().map(|(c, l)| (*c, l.as_str())).collect();
    let gp_path = cfg.out.join("scan.gp");
    report::write_text(
        &gp_path,
        &report::gnuplot_script("scan.csv", "negative log-likelihood", "gamma1", &series_ref, false),
    )?;
    let json_path = cfg.out.join("scan.json");
    report::write_json(
        &json_path,
        &Report { provenance: Provenance::new("scan", cfg), checks: &checks, results: &results },
    )?;
    Ok(Outcome { checks, files: vec![csv_path, gp_path, json_path] })
}
