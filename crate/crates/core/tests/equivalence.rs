mod common;

use common::*;
use udkf::baseline::{conv_kf_step, diff_kf_step, ConvFilterState};
use udkf::filter::{assemble_pre_arrays, filter_step, loglik, FilterState, ModelAtTheta};
use udkf::linalg::{ud_factor_covariance, Matrix, Vector};
use udkf::mle::{likelihood, Engine};
use udkf::models::{fd_step, ParametricModel, StateSpace};
use udkf::sensitivity::{extended_step, ModelDerivativesAtTheta, SensitivityState};

fn scaled_norm(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

fn scaled_vec(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

#[test]
fn pre_array_gram_is_the_joint_prediction_covariance() {
    for seed in 0..50 {
        let case = random_case(seed);
        let ss = &case.ss;
        let model = ModelAtTheta::from_state_space(ss).unwrap();
        let mut g = rng(seed);
        let n = ss.f.nrows();
        let p = spd(&mut g, n);
        let state = FilterState { k: 0, x_hat: Vector::zeros(n), p_ud: ud_factor_covariance(&p).unwrap() };
        let pre = assemble_pre_arrays(&model, &state).unwrap();
        let (f, h) = (&ss.f, &ss.h);
        let top_left = f * &p * f.transpose() + &ss.g * &ss.q * ss.g.transpose();
        let top_right = f * &p * h.transpose();
        let bottom = h * &p * h.transpose() + &ss.r;
        let m = h.nrows();
        let mut expected = Matrix::zeros(n + m, n + m);
        expected.view_mut((0, 0), (n, n)).copy_from(&top_left);
        expected.view_mut((0, n), (n, m)).copy_from(&top_right);
        expected.view_mut((n, 0), (m, n)).copy_from(&top_right.transpose());
        expected.view_mut((n, n), (m, m)).copy_from(&bottom);
        assert!(rel(&pre.gram(), &expected) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn ud_filter_tracks_the_riccati_recursion() {
    for seed in 0..100 {
        let case = random_case(seed);
        let model = ModelAtTheta::from_state_space(&case.ss).unwrap();
        let mut ud = FilterState::initial(&model);
        let mut conv = ConvFilterState::initial(&case.ss, &[]);
        for (k, z) in case.measurements.iter().enumerate() {
            let (next_ud, out) = filter_step(&model, &ud, z).unwrap();
            let (next_conv, e, r_e) = conv_kf_step(&case.ss, &conv, z).unwrap();
            assert!(scaled_vec(&out.e, &e) <= 1e-10, "seed {seed} step {k}");
            assert!(rel(&out.innovation_covariance(), &r_e) <= 1e-10, "seed {seed} step {k}");
            assert!(scaled_vec(&next_ud.x_hat, &next_conv.x_hat) <= 1e-10, "seed {seed} step {k}");
            assert!(rel(&next_ud.covariance(), &next_conv.p) <= 1e-10, "seed {seed} step {k}");
            assert!(next_ud.p_ud.d.is_positive());
            ud = next_ud;
            conv = next_conv;
        }
    }
}

#[test]
fn sensitivities_agree_with_the_differentiated_filter() {
    for seed in 0..100 {
        let case = random_case(seed);
        let derivs = case.model.derivatives(&case.theta).unwrap();
        let model = ModelAtTheta::from_state_space(&case.ss).unwrap();
        let deriv = ModelDerivativesAtTheta::new(&case.ss, &model, &derivs).unwrap();
        let mut ud = FilterState::initial(&model);
        let mut sens = SensitivityState::initial(&model, &deriv);
        let mut conv = ConvFilterState::initial(&case.ss, &derivs);
        let (mut l_ud, mut l_conv) = (0.0, 0.0);
        let mut g_ud = vec![0.0; derivs.len()];
        let mut g_conv = vec![0.0; derivs.len()];
        for (k, z) in case.measurements.iter().enumerate() {
            let step = extended_step(&model, &deriv, &ud, &sens, z).unwrap();
            let (next_conv, out) = diff_kf_step(&case.ss, &derivs, &conv, z).unwrap();
            l_ud += step.loglik_term;
            l_conv += out.loglik_term;
            for i in 0..derivs.len() {
                g_ud[i] += step.gradient_terms[i];
                g_conv[i] += out.gradient_terms[i];
                let s = &step.sens.params[i];
                let c = &next_conv.sens[i];
                assert!(scaled_vec(&s.x_hat, &c.x_hat) <= 1e-8, "seed {seed} step {k} param {i}");
                let p_prime = s.p_ud.reconstruct(&step.state.p_ud);
                assert!(scaled_norm(&p_prime, &c.p) <= 1e-8, "seed {seed} step {k} param {i}");
                let asym = (&p_prime - p_prime.transpose()).norm();
                assert!(asym <= 1e-11 * p_prime.norm().max(f64::MIN_POSITIVE), "seed {seed} step {k}");
            }
            ud = step.state;
            sens = step.sens;
            conv = next_conv;
        }
        assert!(scaled(l_ud, l_conv) <= 1e-8, "seed {seed}: {l_ud} vs {l_conv}");
        for i in 0..derivs.len() {
            assert!(scaled(g_ud[i], g_conv[i]) <= 1e-8, "seed {seed}: {g_ud:?} vs {g_conv:?}");
        }
    }
}

#[test]
fn loglik_equals_the_conventional_value() {
    for seed in 0..100 {
        let case = random_case(seed);
        let model = ModelAtTheta::from_state_space(&case.ss).unwrap();
        let ud = loglik(&model, &case.measurements).unwrap();
        let conv = likelihood(&case.model, &case.measurements, Engine::Conv, &case.theta).unwrap();
        assert!(scaled(ud, conv.loglik) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..100 {
        let case = random_case(seed);
        for engine in [Engine::Ud, Engine::Conv] {
            let report = likelihood(&case.model, &case.measurements, engine, &case.theta).unwrap();
            for i in 0..case.theta.len() {
                let h = fd_step(case.theta[i]);
                let at = |d: f64| {
                    let mut t = case.theta.clone();
                    t[i] += d;
                    likelihood(&case.model, &case.measurements, engine, &t).unwrap().loglik
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                assert!(
                    scaled(report.gradient[i], fd) <= 1e-6,
                    "seed {seed} {engine:?}: {} vs {fd}",
                    report.gradient[i]
                );
            }
        }
    }
}

fn scalar_model(h: f64, r: f64) -> StateSpace {
    let n = 2;
    StateSpace {
        f: Matrix::identity(n, n),
        g: Matrix::zeros(n, 1),
        h: Matrix::identity(n, n) * h,
        q: Matrix::identity(1, 1),
        r: Matrix::identity(n, n) * r,
        pi0: Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
    }
}

#[test]
fn uninformative_measurements_leave_the_prediction_alone() {
    let ss = scalar_model(1.0, 1e12);
    let model = ModelAtTheta::from_state_space(&ss).unwrap();
    let mut state =
        FilterState { k: 0, x_hat: Vector::from_vec(vec![1.0, -2.0]), p_ud: ud_factor_covariance(&ss.pi0).unwrap() };
    for z in [[3.0, 4.0], [-1.0, 0.5], [10.0, -10.0]] {
        let (next, _) = filter_step(&model, &state, &Vector::from_row_slice(&z)).unwrap();
        assert!((&next.x_hat - &state.x_hat).norm() <= 1e-10);
        let drop = state.covariance() - next.covariance();
        let eig = drop.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|v| *v >= -1e-14), "{eig}");
        state = next;
    }
}

#[test]
fn ill_conditioned_step_matches_the_conventional_filter() {
    use udkf::models::IllConditionedModel;
    let model = IllConditionedModel::new(0.1).unwrap();
    let ss = model.eval(&[7.0]).unwrap();
    let traj = udkf::trajectory::simulate(&model, &[7.0], 1, 11).unwrap();
    let ud_model = ModelAtTheta::from_state_space(&ss).unwrap();
    let (next, out) = filter_step(&ud_model, &FilterState::initial(&ud_model), &traj.measurements[0]).unwrap();
    let (conv, _, r_e) = conv_kf_step(&ss, &ConvFilterState::initial(&ss, &[]), &traj.measurements[0]).unwrap();
    assert!(out.d_re().is_positive());
    assert!(rel(&out.innovation_covariance(), &r_e) <= 1e-10);
    assert!(scaled_vec(&next.x_hat, &conv.x_hat) <= 1e-10);
    assert!(rel(&next.covariance(), &conv.p) <= 1e-10);
}

#[test]
fn normalized_innovations_are_white_at_the_true_parameter() {
    let model = affine(3, 3, 2, 2, 1);
    let theta = [0.4];
    let n_steps = 4000;
    let traj = udkf::trajectory::simulate(&model, &theta, n_steps, 99).unwrap();
    let ud = ModelAtTheta::from_state_space(&model.eval(&theta).unwrap()).unwrap();
    let mut state = FilterState::initial(&ud);
    let mut sums = [0.0; 2];
    let mut lag = 0.0;
    let mut prev: Option<f64> = None;
    for z in &traj.measurements {
        let (next, out) = filter_step(&ud, &state, z).unwrap();
        for j in 0..2 {
            let u = out.e_bar[j] / out.d_re().get(j).sqrt();
            sums[j] += u * u;
            if j == 0 {
                if let Some(p) = prev {
                    lag += p * u;
                }
                prev = Some(u);
            }
        }
        state = next;
    }
    let n = n_steps as f64;
    for s in sums {
        assert!((s / n - 1.0).abs() <= 3.0 / n.sqrt(), "{}", s / n);
    }
    assert!((lag / n).abs() <= 3.0 / n.sqrt(), "{}", lag / n);
}
