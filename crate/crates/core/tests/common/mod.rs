//! Shared instances and invariant checks for the integration tests.
#![allow(dead_code)]

use feddr_core::certify::lyapunov_v;
use feddr_core::feddr::{
    aggregate_residual, init_feddr, local_update, reflection_residual, sample_users,
    server_aggregate, yx_residual, AccuracyTarget, Hyper, SamplingScheme,
};
use feddr_core::harness::{gen_quadratic, QuadraticInstance, QuadraticSpec};
use feddr_core::linalg::{dist, dist_sq, norm_sq};
use feddr_core::numerics::{
    soft_threshold, CertifiedProx, LossModel, Regularizer, Samples, StopRule,
};
use feddr_core::rng;

/// Diagonal quadratics with curvature in `[lo, 2]` and an optional l1 term.
pub fn quad_instance(n: usize, dim: usize, lo: f64, lambda: f64, seed: u64) -> QuadraticInstance {
    let spec = QuadraticSpec {
        n,
        dim,
        spread: 1.0,
        curvature: Some((lo, 2.0)),
    };
    let reg = if lambda > 0.0 {
        Regularizer::l1(lambda).unwrap()
    } else {
        Regularizer::Zero
    };
    gen_quadratic(&spec, reg, seed).unwrap()
}

/// Runs exact FedDR step by step and checks the per-round invariants:
/// `y = x + eta grad f(x)`, `xhat = 2x - y`, `xtilde = mean xhat`, the
/// gradient-mapping bound and `V >= F*`.
pub fn check_round_invariants(
    inst: &QuadraticInstance,
    alpha: f64,
    eta_l: f64,
    b: usize,
    rounds: usize,
    seed: u64,
) -> Result<(), String> {
    let p = &inst.problem;
    let l = p.lipschitz();
    let eta = eta_l / l;
    let mut hyper = Hyper::new(eta, alpha);
    hyper.sampling = SamplingScheme::UniformSubset { b };
    let (mut server, mut users) =
        init_feddr(&vec![0.0; p.dim()], &hyper, p, seed).map_err(|e| e.to_string())?;
    let mut sampler = rng::stream(seed, &[7]);
    let n = p.n() as f64;
    for k in 0..=rounds {
        let yx = yx_residual(&users, p, eta).map_err(|e| e.to_string())?;
        if yx > 1e-9 {
            return Err(format!("round {k}: y-x residual {yx}"));
        }
        let refl = reflection_residual(&users);
        if refl > 1e-12 {
            return Err(format!("round {k}: reflection residual {refl}"));
        }
        let agg = aggregate_residual(&server, &users);
        if agg > 1e-10 {
            return Err(format!("round {k}: aggregate residual {agg}"));
        }
        let gm = norm_sq(&p.grad_mapping(&server.xbar, eta).unwrap());
        let spread: f64 = users.iter().map(|u| dist_sq(&u.x, &server.xbar)).sum();
        let bound = (1.0 + eta * l).powi(2) / (n * eta * eta) * spread;
        if gm > bound + 1e-8 {
            return Err(format!("round {k}: |G|^2 = {gm} exceeds {bound}"));
        }
        let v = lyapunov_v(&users, &server.xbar, eta, p).map_err(|e| e.to_string())?;
        if v < inst.f_star - 1e-9 {
            return Err(format!("round {k}: V = {v} below F* = {}", inst.f_star));
        }
        if k == rounds {
            break;
        }
        let (active, _) = sample_users(&hyper.sampling, p.n(), k, &mut sampler);
        let mut deltas = Vec::new();
        for &i in &active {
            let mut r = rng::stream(seed, &[i as u64, k as u64]);
            let (s, d) = local_update(
                &users[i],
                &server.xbar,
                &hyper,
                &p.models[i],
                AccuracyTarget::Exact,
                &mut r,
            )
            .map_err(|e| e.to_string())?;
            users[i] = s;
            deltas.push((i, d));
        }
        server_aggregate(&mut server, &deltas, p.n(), &p.reg, eta).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// The iterative certified prox lands within its certificate of the closed
/// form (quadratics) or of a much tighter solve (softmax).
pub fn check_prox_certificate(
    seed: u64,
    eta_l: f64,
    eps: f64,
    softmax: bool,
) -> Result<(), String> {
    let mut r = rng::stream(seed, &[1]);
    use rand::Rng;
    let model = if softmax {
        let d = 3;
        let m = 12;
        let feats: Vec<f64> = (0..m * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..m).map(|_| r.random_range(0..3)).collect();
        LossModel::softmax(Samples::new(feats, labels, d).unwrap(), 3).unwrap()
    } else {
        let d = 4;
        let a: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..3.0)).collect();
        LossModel::diagonal_quadratic(a, h).unwrap()
    };
    let y: Vec<f64> = (0..model.params_dim())
        .map(|_| r.random_range(-3.0..3.0))
        .collect();
    let eta = eta_l / model.lipschitz();
    let got = CertifiedProx::iterative()
        .solve(&model, &y, eta, StopRule::Absolute(eps), None)
        .map_err(|e| e.to_string())?;
    let cert = got.certified_accuracy.ok_or("no certificate")?;
    // eps = 0 asks for an exact solve, which settles at exact_tol
    if cert > eps.max(CertifiedProx::default().exact_tol) {
        return Err(format!("certificate {cert} above requested {eps}"));
    }
    let (reference, ref_err) = match model.closed_form_prox(&y, eta) {
        Some(p) => (p, 0.0),
        None => {
            let tight = CertifiedProx::iterative()
                .solve(&model, &y, eta, StopRule::Absolute(1e-13), None)
                .map_err(|e| e.to_string())?;
            (tight.point, tight.certified_accuracy.unwrap())
        }
    };
    let err = dist(&got.point, &reference);
    if err > cert + ref_err + 1e-12 {
        return Err(format!("distance {err} exceeds certificate {cert}"));
    }
    Ok(())
}

/// `soft_threshold(v, t)` satisfies the optimality condition of
/// `min_z (z - v)^2 / 2 + t |z|`.
pub fn check_soft_threshold(v: f64, t: f64) -> Result<(), String> {
    let z = soft_threshold(v, t);
    let ok = if z == 0.0 {
        v.abs() <= t
    } else {
        (z - v + t * z.signum()).abs() <= 1e-12 * (1.0 + v.abs())
    };
    let obj = |z: f64| 0.5 * (z - v).powi(2) + t * z.abs();
    let probe = [z - 1e-3, z + 1e-3, 0.0, v];
    if !ok || probe.iter().any(|&q| obj(q) < obj(z) - 1e-15) {
        return Err(format!(
            "soft_threshold({v}, {t}) = {z} is not the minimizer"
        ));
    }
    Ok(())
}
