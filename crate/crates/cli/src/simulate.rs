//! Simulation of a catalog model to a measurement file.

use serde::Serialize;
use udkf::models::check_derivative_gate;
use udkf::trajectory::{export, simulate};

use crate::config::ExperimentConfig;
use crate::report::{self, Outcome, Provenance, Report};
use crate::CliError;

pub const STEM: &str = "trajectory";

#[derive(Serialize)]
struct Results {
    model: String,
    seed: u64,
    steps: usize,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let s = &cfg.simulate;
    let model = s.model.build()?;
    if s.theta.len() != model.n_params() {
        return Err(CliError::Usage(format!(
            "{} expects {} parameters, got {}",
            model.name(),
            model.n_params(),
            s.theta.len()
        )));
    }
    check_derivative_gate(model.as_ref(), &s.theta)?;
    let traj = simulate(model.as_ref(), &s.theta, s.steps, cfg.seed)?;
    report::ensure_dir(&cfg.out)?;
    export(&traj, &cfg.out, STEM)?;
    let json_path = cfg.out.join("simulate.json");
    report::write_json(
        &json_path,
        &Report {
            provenance: Provenance::new("simulate", cfg),
            checks: &[],
            results: Results { model: model.name(), seed: cfg.seed, steps: s.steps },
        },
    )?;
    println!("{}: {} steps written to {}", model.name(), s.steps, cfg.out.join(format!("{STEM}.csv")).display());
    Ok(Outcome {
        checks: Vec::new(),
        files: vec![cfg.out.join(format!("{STEM}.csv")), cfg.out.join(format!("{STEM}.json")), json_path],
    })
}
