use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::lyapunov_v;
use crate::error::{Error, Result};
use crate::feddr::sampling::sample_users;
use crate::feddr::schedule::{accuracy_for_round, check_stepsizes};
use crate::feddr::state::{
    init_feddr, local_seed, local_update, server_aggregate, Hyper, ServerState, UserState,
};
use crate::linalg::{all_finite, norm_sq, to_f64};
use crate::numerics::Problem;
use crate::rng::{self, StreamRng, TAG_SAMPLING};
use crate::scalar::Scalar;
use crate::trace::{
    bytes_per_round, AlgorithmTag, ProxModeTag, StateSnapshot, Trace, TraceMeta, TraceRecord,
};

/// Run length, seed and tracing switches shared by all algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Rounds (sync) or events (async).
    pub rounds: usize,
    pub seed: u64,
    /// Store per-round states so descent certificates can be checked.
    pub full_states: bool,
    /// Evaluate the Lyapunov function every round.
    pub lyapunov: bool,
}

impl RunOptions {
    pub fn new(rounds: usize, seed: u64) -> Self {
        Self {
            rounds,
            seed,
            full_states: false,
            lyapunov: true,
        }
    }

    pub fn with_states(mut self) -> Self {
        self.full_states = true;
        self
    }
}

/// Loss, accuracy and squared gradient-mapping norm at the server model.
pub(crate) fn evaluate<T: Scalar>(
    problem: &Problem<T>,
    xbar: &[T],
    eta: T,
) -> Result<(f64, Option<f64>, f64)> {
    let loss = problem.objective(xbar)?.as_f64();
    let gm = norm_sq(&problem.grad_mapping(xbar, eta)?).as_f64();
    Ok((loss, problem.accuracy(xbar), gm))
}

pub(crate) fn snapshot<T: Scalar>(k: usize, xbar: &[T], users: &[UserState<T>]) -> StateSnapshot {
    StateSnapshot {
        k,
        xbar: to_f64(xbar),
        x: users.iter().map(|u| to_f64(&u.x)).collect(),
        y: users.iter().map(|u| to_f64(&u.y)).collect(),
        eps: users
            .iter()
            .map(|u| u.last_eps.map_or(f64::NAN, Scalar::as_f64))
            .collect(),
    }
}

pub(crate) fn base_meta<T: Scalar>(
    algorithm: AlgorithmTag,
    problem: &Problem<T>,
    x0: &[T],
    hyper: &Hyper<T>,
    seed: u64,
) -> Result<TraceMeta> {
    Ok(TraceMeta {
        algorithm,
        n: problem.n(),
        dim: problem.dim(),
        eta: hyper.eta.as_f64(),
        alpha: hyper.alpha.as_f64(),
        lipschitz: problem.lipschitz().as_f64(),
        seed,
        initial_objective: problem.objective(x0)?.as_f64(),
        probabilities: hyper.sampling.probabilities(problem.n()),
        tau: None,
        certified: hyper.prox.is_certified(),
        exact: hyper.prox.is_certified() && hyper.accuracy.is_exact(),
        gammas: hyper.gammas(),
    })
}

/// Gate applied before a synchronous run.
pub fn check_sync_config<T: Scalar>(problem: &Problem<T>, hyper: &Hyper<T>) -> Result<()> {
    hyper.validate(problem.n())?;
    if hyper.enforce_stepsizes {
        if !hyper.prox.is_certified() {
            return Err(Error::Precondition(
                "heuristic prox carries no certificate; disable stepsize enforcement to run it"
                    .into(),
            ));
        }
        let g4 = if hyper.accuracy.is_exact() {
            0.0
        } else {
            hyper.gammas().g4
        };
        check_stepsizes(
            hyper.alpha.as_f64(),
            hyper.eta.as_f64(),
            g4,
            problem.lipschitz().as_f64(),
        )?;
    }
    Ok(())
}

/// Synchronous randomized FedDR for `opts.rounds` rounds.
///
/// Runtime failures (non-finite iterates, prox errors) end the run early and
/// are recorded in the trace footer.
pub fn run_feddr<T: Scalar>(
    problem: &Problem<T>,
    x0: &[T],
    hyper: &Hyper<T>,
    opts: &RunOptions,
) -> Result<Trace> {
    check_sync_config(problem, hyper)?;
    let meta = base_meta(AlgorithmTag::Feddr, problem, x0, hyper, opts.seed)?;
    let mut trace = Trace::new(meta, opts.full_states);
    let (mut server, mut users) = init_feddr(x0, hyper, problem, opts.seed)?;
    let mut sampling: StreamRng = rng::stream(opts.seed, &[TAG_SAMPLING]);
    let n = problem.n();
    let probs: Vec<T> = hyper
        .sampling
        .probabilities(n)
        .iter()
        .map(|&p| T::lit(p))
        .collect();
    let tag = hyper.prox_tag();
    let mut bytes = 0u64;

    let init_eps = users
        .iter()
        .filter_map(|u| u.last_eps)
        .fold(T::zero(), T::max);
    push_record(
        &mut trace,
        problem,
        hyper,
        opts,
        &server,
        &users,
        Vec::new(),
        bytes,
        tag,
        users
            .iter()
            .all(|u| u.last_eps.is_some())
            .then(|| init_eps.as_f64()),
        0,
    )?;

    for k in 0..opts.rounds {
        let (active, resamples) = sample_users(&hyper.sampling, n, k, &mut sampling);
        let step = run_round(
            problem, hyper, &server, &users, &active, &probs, k, opts.seed,
        );
        let updates = match step {
            Ok(u) => u,
            Err(e) => {
                trace.footer.abort = Some(format!("round {k}: {e}"));
                return Ok(trace);
            }
        };
        let mut deltas = Vec::with_capacity(updates.len());
        let mut worst_eps = Some(T::zero());
        for (i, state, delta) in updates {
            worst_eps = match (worst_eps, state.last_eps) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
            users[i] = state;
            deltas.push((i, delta));
        }
        server_aggregate(&mut server, &deltas, n, &problem.reg, hyper.eta)?;
        if !all_finite(&server.xbar) {
            trace.footer.abort = Some(format!("round {k}: non-finite server model"));
            return Ok(trace);
        }
        bytes += bytes_per_round(active.len(), problem.dim(), T::wire_bytes());
        if let Err(e) = push_record(
            &mut trace,
            problem,
            hyper,
            opts,
            &server,
            &users,
            active,
            bytes,
            tag,
            worst_eps.map(Scalar::as_f64),
            resamples,
        ) {
            trace.footer.abort = Some(format!("round {k}: {e}"));
            return Ok(trace);
        }
    }
    Ok(trace)
}

type Update<T> = (usize, UserState<T>, Vec<T>);

#[allow(clippy::too_many_arguments)]
fn run_round<T: Scalar>(
    problem: &Problem<T>,
    hyper: &Hyper<T>,
    server: &ServerState<T>,
    users: &[UserState<T>],
    active: &[usize],
    probs: &[T],
    k: usize,
    seed: u64,
) -> Result<Vec<Update<T>>> {
    active
        .par_iter()
        .map(|&i| {
            let target = accuracy_for_round(&hyper.accuracy, k + 1, probs[i])?;
            let mut rng = rng::stream(local_seed(seed, i, k + 1), &[]);
            let (state, delta) = local_update(
                &users[i],
                &server.xbar,
                hyper,
                &problem.models[i],
                target,
                &mut rng,
            )?;
            Ok((i, state, delta))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn push_record<T: Scalar>(
    trace: &mut Trace,
    problem: &Problem<T>,
    hyper: &Hyper<T>,
    opts: &RunOptions,
    server: &ServerState<T>,
    users: &[UserState<T>],
    active: Vec<usize>,
    bytes: u64,
    tag: ProxModeTag,
    prox_accuracy: Option<f64>,
    resamples: usize,
) -> Result<()> {
    let k = server.round;
    let (loss, train_accuracy, grad_map_sq) = evaluate(problem, &server.xbar, hyper.eta)?;
    let lyapunov = if opts.lyapunov {
        Some(lyapunov_v(users, &server.xbar, hyper.eta, problem)?.as_f64())
    } else {
        None
    };
    trace.records.push(TraceRecord {
        k,
        sim_time: k as f64,
        active,
        loss,
        train_accuracy,
        grad_map_sq,
        lyapunov,
        lyapunov_tilde: None,
        bytes,
        delay: None,
        prox_mode: tag,
        prox_accuracy,
        resamples,
    });
    if let Some(states) = trace.states.as_mut() {
        states.push(snapshot(k, &server.xbar, users));
    }
    Ok(())
}
