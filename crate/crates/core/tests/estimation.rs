mod common;

use common::*;
use udkf::mle::{likelihood, minimize, scan, uniform_grid, Engine, MinimizeOptions, Objective};
use udkf::models::{IllConditionedModel, InsConstants, InsModel, ParametricModel};
use udkf::trajectory::{export, import, simulate};
use udkf::Error;

#[test]
fn engines_reach_the_same_estimate_on_well_conditioned_models() {
    for seed in 0..6 {
        let model = affine(seed, 2, 2, 1, 1 + (seed as usize % 2));
        let truth: Vec<f64> = (0..model.n_params()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let z = simulate(&model, &truth, 300, seed).unwrap().measurements;
        let start = vec![0.0; truth.len()];
        let opts = MinimizeOptions::default();
        let ud = minimize(&Objective::new(&model, &z, Engine::Ud), &start, &opts);
        let conv = minimize(&Objective::new(&model, &z, Engine::Conv), &start, &opts);
        assert!(ud.converged && conv.converged, "seed {seed}: {ud:?} {conv:?}");
        for (a, b) in ud.theta_hat.iter().zip(&conv.theta_hat) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn ill_conditioned_estimate_from_a_distant_start() {
    let model = IllConditionedModel::new(1e-2).unwrap();
    let z = simulate(&model, &[7.0], 1000, 2024).unwrap().measurements;
    let r = minimize(&Objective::new(&model, &z, Engine::Ud), &[1.0], &MinimizeOptions::default());
    assert!(r.converged, "{r:?}");
    assert!((r.theta_hat[0] - 7.0).abs() < 0.5, "{r:?}");
    assert!(r.final_gradient_norm <= 1e-8 * (1.0 + r.final_value.abs()));
}

#[test]
fn ins_scan_has_a_single_zero_at_its_minimum() {
    let model = InsModel::new(InsConstants::default()).unwrap();
    let z = simulate(&model, &[2e-4], 2000, 8).unwrap().measurements;
    let grid = uniform_grid(1e-5, 1e-5, 40);
    let ud = scan(&Objective::new(&model, &z, Engine::Ud), &grid).unwrap();
    let conv = scan(&Objective::new(&model, &z, Engine::Conv), &grid).unwrap();
    assert_eq!(ud.rows.len(), 40);
    assert_eq!(ud.sign_changes(), 1);
    let (i, j) = ud.bracket.unwrap();
    let argmin = ud.argmin.unwrap();
    assert!(argmin == i || argmin == j, "{argmin} not in ({i}, {j})");
    for (a, b) in ud.rows.iter().zip(&conv.rows) {
        let (fa, fb) = (a.neg_loglik.unwrap(), b.neg_loglik.unwrap());
        let (ga, gb) = (a.neg_gradient.unwrap(), b.neg_gradient.unwrap());
        assert!(scaled(fa, fb) <= 1e-8);
        assert!(scaled(ga, gb) <= 1e-8, "{ga} vs {gb}");
    }
}

#[test]
fn ins_estimate_from_a_long_record() {
    let model = InsModel::new(InsConstants::default()).unwrap();
    let z = simulate(&model, &[2e-4], 100_000, 1).unwrap().measurements;
    let r = minimize(&Objective::new(&model, &z, Engine::Ud), &[1e-4], &MinimizeOptions::default());
    assert!(r.converged, "{r:?}");
    assert!((r.theta_hat[0] - 2e-4).abs() <= 1e-5, "{r:?}");
}

#[test]
fn conventional_failure_names_the_step() {
    let model = IllConditionedModel::new(1e-9).unwrap();
    let z = simulate(&model, &[7.0], 50, 3).unwrap().measurements;
    match likelihood(&model, &z, Engine::Conv, &[7.0]) {
        Err(Error::Step { step, .. }) => assert!(step < 50),
        Err(Error::NonFinite(_)) => {}
        other => panic!("expected a failure, got {other:?}"),
    }
    assert!(likelihood(&model, &z, Engine::Ud, &[7.0]).is_ok());
}

#[test]
fn exported_record_filters_identically() {
    let model = IllConditionedModel::new(1e-3).unwrap();
    let traj = simulate(&model, &[7.0], 100, 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&traj, dir.path(), "record").unwrap();
    let back = import(&dir.path().join("record.csv")).unwrap();
    assert_eq!(back.measurements, traj.measurements);
    assert_eq!(back.seed, 42);
    let rebuilt = back.model.build().unwrap();
    let a = likelihood(&model, &traj.measurements, Engine::Ud, &[7.0]).unwrap();
    let b = likelihood(rebuilt.as_ref(), &back.measurements, Engine::Ud, &back.theta_true).unwrap();
    assert_eq!(a, b);
}
