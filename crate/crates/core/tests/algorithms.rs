mod common;

use common::*;
use feddr_core::asyncsim::{
    async_constants, async_local_update, async_server_update, measure_delay_stats, run_async,
    Activation, ComputeTime, DelayModel, VersionedModel,
};
use feddr_core::certify::{check_descent, check_rate, DescentRule, RateBound};
use feddr_core::feddr::{
    aggregate_residual, init_feddr, run_feddr, AccuracyTarget, Hyper, RunOptions, SamplingScheme,
    ServerState, UserState,
};
use feddr_core::linalg::{dist, norm};
use feddr_core::numerics::{LossModel, Problem, Regularizer};
use feddr_core::{rng, Problem32, Trace};
use proptest::prelude::*;

fn identical_quads(n: usize, a: &[f64]) -> Problem<f64> {
    Problem::new(
        (0..n).map(|_| LossModel::quadratic(a.to_vec())).collect(),
        Regularizer::Zero,
    )
    .unwrap()
}

#[test]
fn identical_users_reach_the_common_minimizer() {
    let p = identical_quads(3, &[1.0, -2.0, 0.5]);
    let t = run_feddr(
        &p,
        &[0.0; 3],
        &Hyper::new(0.3, 1.0),
        &RunOptions::new(200, 0),
    )
    .unwrap();
    let hit = t.records.iter().find(|r| r.grad_map_sq.sqrt() <= 1e-6);
    assert!(hit.is_some_and(|r| r.k <= 200));
}

#[test]
fn runs_are_deterministic() {
    let inst = quad_instance(6, 5, -0.5, 0.1, 2);
    let mut h = Hyper::new(0.3 / inst.problem.lipschitz(), 0.8);
    h.sampling = SamplingScheme::Bernoulli { p: vec![0.4; 6] };
    let opts = RunOptions::new(60, 17).with_states();
    let a = run_feddr(&inst.problem, &[0.0; 5], &h, &opts).unwrap();
    let b = run_feddr(&inst.problem, &[0.0; 5], &h, &opts).unwrap();
    assert_eq!(a.to_string_lines(), b.to_string_lines());
}

#[test]
fn f32_run_tracks_f64_run() {
    let centers = [[1.0, -1.0], [0.5, 2.0], [-0.3, 0.1]];
    let p64 = Problem::new(
        centers
            .iter()
            .map(|c| LossModel::quadratic(c.to_vec()))
            .collect(),
        Regularizer::l1(0.1).unwrap(),
    )
    .unwrap();
    let p32: Problem32 = Problem::new(
        centers
            .iter()
            .map(|c| LossModel::quadratic(c.iter().map(|&v| v as f32).collect()))
            .collect(),
        Regularizer::l1(0.1f32).unwrap(),
    )
    .unwrap();
    let opts = RunOptions::new(50, 1);
    let a = run_feddr(&p64, &[0.0; 2], &Hyper::new(0.3, 1.0), &opts).unwrap();
    let b = run_feddr(&p32, &[0.0f32; 2], &Hyper::new(0.3f32, 1.0f32), &opts).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.loss - y.loss).abs() < 1e-5 * (1.0 + x.loss.abs()));
    }
    // half the bytes on the wire
    assert_eq!(2 * b.last().unwrap().bytes, a.last().unwrap().bytes);
}

#[test]
fn large_l1_weight_zeroes_the_server_model() {
    let p = Problem::new(
        vec![
            LossModel::quadratic(vec![0.3, -0.2]),
            LossModel::quadratic(vec![0.1, 0.4]),
        ],
        Regularizer::l1(50.0).unwrap(),
    )
    .unwrap();
    let t = run_feddr(
        &p,
        &[0.0; 2],
        &Hyper::new(0.3, 1.0),
        &RunOptions::new(5, 0).with_states(),
    )
    .unwrap();
    for s in t.states.unwrap() {
        assert_eq!(s.xbar, vec![0.0, 0.0]);
    }
}

#[test]
fn invalid_stepsize_produces_flagged_violations() {
    let inst = quad_instance(5, 6, -1.0, 0.0, 9);
    let l = inst.problem.lipschitz();
    let mut h = Hyper::new(0.95 / l, 1.5);
    h.enforce_stepsizes = false;
    h.sampling = SamplingScheme::UniformSubset { b: 2 };
    let t = run_feddr(
        &inst.problem,
        &[0.0; 6],
        &h,
        &RunOptions::new(200, 4).with_states(),
    )
    .unwrap();
    let rule = DescentRule::for_trace(&t).unwrap();
    let rows = check_descent(&t, &rule, 1e-9).unwrap();
    assert!(rows[0].coefficient < 0.0);
    assert!(rows.iter().any(|r| r.violation));
}

#[test]
fn stationary_start_requires_no_decrease() {
    let a = [0.7, -0.4];
    let p = identical_quads(4, &a);
    let t = run_feddr(
        &p,
        &a,
        &Hyper::new(0.3, 1.0),
        &RunOptions::new(20, 0).with_states(),
    )
    .unwrap();
    let rows = check_descent(&t, &DescentRule::for_trace(&t).unwrap(), 1e-12).unwrap();
    assert!(rows.iter().all(|r| r.required == 0.0 && !r.violation));
    // F(x0) = F*: the rate bound forces G = 0
    let rep = check_rate(
        std::slice::from_ref(&t),
        &RateBound::Scaled {
            c: 160.0 * 4.0 / 3.0,
        },
        0.0,
    )
    .unwrap();
    assert!(rep.satisfied);
    assert!(t.records.iter().all(|r| r.grad_map_sq == 0.0));
}

#[test]
fn records_are_ordered_with_monotone_bytes() {
    let inst = quad_instance(5, 3, 0.5, 0.0, 1);
    let mut h = Hyper::new(0.3 / inst.problem.lipschitz(), 0.5);
    h.sampling = SamplingScheme::UniformSubset { b: 2 };
    let t = run_feddr(&inst.problem, &[0.0; 3], &h, &RunOptions::new(30, 2)).unwrap();
    assert_eq!(t.rounds(), 30);
    for w in t.records.windows(2) {
        assert!(w[1].k == w[0].k + 1 && w[1].bytes > w[0].bytes);
    }
    assert_eq!(t.records[0].bytes, 0);
}

#[test]
fn trace_file_round_trip() {
    let inst = quad_instance(3, 2, 0.5, 0.1, 5);
    let h = Hyper::new(0.3 / inst.problem.lipschitz(), 1.0);
    let t = run_feddr(
        &inst.problem,
        &[0.0; 2],
        &h,
        &RunOptions::new(10, 2).with_states(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    t.save(&path).unwrap();
    let back = Trace::load(&path).unwrap();
    assert_eq!(back.to_string_lines(), t.to_string_lines());
}

fn scalar_user(y: f64, x: f64) -> UserState<f64> {
    UserState {
        y: vec![y],
        x: vec![x],
        xhat: vec![2.0 * x - y],
        last_eps: None,
    }
}

#[test]
fn delayed_step_differs_by_the_stale_gap() {
    // f = x^2 / 2, so x = y / (1 + eta)
    let (alpha, eta) = (0.5, 0.4);
    let model = LossModel::quadratic(vec![0.0]);
    let h = Hyper::new(eta, alpha);
    let user = scalar_user(1.2, 1.2 / (1.0 + eta));
    let (fresh, stale) = (0.3, -0.6);
    let mut r = rng::stream(0, &[]);
    let (a, _) =
        async_local_update(&user, &[fresh], &h, &model, AccuracyTarget::Exact, &mut r).unwrap();
    let (b, _) =
        async_local_update(&user, &[stale], &h, &model, AccuracyTarget::Exact, &mut r).unwrap();
    let expected = alpha * (stale - fresh) / (1.0 + eta);
    assert!((b.x[0] - a.x[0] - expected).abs() < 1e-15);
}

#[test]
fn zero_delta_keeps_model_and_advances_version() {
    let mut server = ServerState {
        xtilde: vec![0.4, -1.0],
        xbar: vec![0.4, -1.0],
        round: 3,
    };
    let mut versions = VersionedModel::new(2, server.xbar.clone());
    async_server_update(
        &mut server,
        1,
        vec![0.0, 0.0],
        4,
        &Regularizer::Zero,
        0.5,
        &mut versions,
    )
    .unwrap();
    assert_eq!(server.xbar, vec![0.4, -1.0]);
    assert_eq!(versions.current_version(), 1);
    // g = 0: xbar tracks xtilde exactly
    async_server_update(
        &mut server,
        0,
        vec![0.25, 0.5],
        4,
        &Regularizer::Zero,
        0.5,
        &mut versions,
    )
    .unwrap();
    assert_eq!(server.xbar, server.xtilde);
}

#[test]
fn async_aggregate_stays_consistent() {
    let inst = quad_instance(5, 4, -0.5, 0.1, 8);
    let l = inst.problem.lipschitz();
    let h = Hyper::new(0.2 / l, 0.5);
    let model = DelayModel::new(ComputeTime::default(), 2);
    let t = run_async(
        &inst.problem,
        &[0.0; 4],
        &h,
        Activation::Simulated(&model),
        &RunOptions::new(300, 3).with_states(),
    )
    .unwrap();
    let (server, mut users) = init_feddr(&[0.0; 4], &h, &inst.problem, 3).unwrap();
    assert!(aggregate_residual(&server, &users) < 1e-12);
    // rebuild xtilde from the recorded states after every event
    for s in t.states.as_ref().unwrap() {
        for (u, (x, y)) in users.iter_mut().zip(s.x.iter().zip(&s.y)) {
            u.x = x.clone();
            u.y = y.clone();
            u.xhat = x.iter().zip(y).map(|(a, b)| 2.0 * a - b).collect();
        }
        let fresh: Vec<f64> = (0..4)
            .map(|j| users.iter().map(|u| u.xhat[j]).sum::<f64>() / 5.0)
            .collect();
        let rebuilt = feddr_core::numerics::prox_g(&fresh, h.eta, &inst.problem.reg);
        assert!(dist(&rebuilt, &s.xbar) < 1e-9);
    }
}

#[test]
fn async_converges_on_small_quadratics() {
    let p = Problem::new(
        vec![
            LossModel::quadratic(vec![1.0, 0.0]),
            LossModel::quadratic(vec![-1.0, 2.0]),
            LossModel::quadratic(vec![0.5, 1.0]),
        ],
        Regularizer::Zero,
    )
    .unwrap();
    let b = async_constants(3, 2, 0.4, 0.1, 1.0, 3, 1.0 / 3.0);
    let eta = 0.9 * b.eta_bar;
    let model = DelayModel::new(ComputeTime::default(), 2);
    let t = run_async(
        &p,
        &[0.0; 2],
        &Hyper::new(eta, 0.4),
        Activation::Simulated(&model),
        &RunOptions::new(2000, 0),
    )
    .unwrap();
    assert!(t.records.iter().any(|r| r.grad_map_sq.sqrt() <= 1e-5));
}

#[test]
fn async_rate_bound_holds_with_measured_constants() {
    let inst = quad_instance(6, 5, 0.5, 0.05, 12);
    let l = inst.problem.lipschitz();
    let (alpha, eta) = (0.5, 0.3 / l);
    let model = DelayModel::new(
        ComputeTime::Lognormal {
            mu: 0.0,
            sigma: 0.4,
        },
        2,
    );
    let traces: Vec<Trace> = (0..20)
        .map(|s| {
            run_async(
                &inst.problem,
                &[0.0; 5],
                &Hyper::new(eta, alpha),
                Activation::Simulated(&model),
                &RunOptions::new(600, s),
            )
            .unwrap()
        })
        .collect();
    let stats: Vec<_> = traces
        .iter()
        .map(|t| measure_delay_stats(t).unwrap())
        .collect();
    let window = stats.iter().map(|s| s.window).max().unwrap();
    let p_hat = stats.iter().map(|s| s.p_hat).fold(f64::INFINITY, f64::min);
    assert!(stats.iter().all(|s| s.tau <= 2));
    let c = async_constants(6, 2, alpha, eta, l, window, p_hat).c_hat;
    let rep = check_rate(&traces, &RateBound::Scaled { c }, inst.f_star).unwrap();
    assert!(rep.satisfied, "worst ratio {}", rep.worst_ratio);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn delay_cap_never_exceeded(seed in 0u64..10_000, n in 2usize..7, tau in 0usize..4, sigma in 0.1f64..1.5) {
        let inst = quad_instance(n, 2, 0.5, 0.0, seed);
        let mut h = Hyper::new(0.1 / inst.problem.lipschitz(), 0.3);
        h.enforce_stepsizes = false;
        let model = DelayModel::new(ComputeTime::Lognormal { mu: 0.0, sigma }, tau);
        let t = run_async(&inst.problem, &[0.0; 2], &h, Activation::Simulated(&model), &RunOptions::new(150, seed)).unwrap();
        prop_assert_eq!(t.rounds(), 150);
        prop_assert!(t.records.iter().filter_map(|r| r.delay).all(|d| d <= tau));
    }

    #[test]
    fn lyapunov_dominates_optimal_value(seed in 0u64..1000, lo in -1.0f64..1.0, lambda in 0.0f64..0.3, eta_l in 0.05f64..1.0) {
        let inst = quad_instance(4, 3, lo, lambda, seed);
        let mut h = Hyper::new(eta_l / inst.problem.lipschitz(), 0.5);
        h.enforce_stepsizes = false;
        h.sampling = SamplingScheme::UniformSubset { b: 2 };
        let t = run_feddr(&inst.problem, &[0.0; 3], &h, &RunOptions::new(40, seed)).unwrap();
        for r in &t.records {
            prop_assert!(r.lyapunov.unwrap() >= inst.f_star - 1e-9);
        }
        prop_assert!(norm(&inst.x_star).is_finite());
    }
}
