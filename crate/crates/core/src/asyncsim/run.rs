use serde::{Deserialize, Serialize};

use crate::asyncsim::bounds::stepsize_bounds_async;
use crate::asyncsim::sim::{Completion, DelayModel, DelaySim};
use crate::asyncsim::versions::{VersionLog, VersionedModel};
use crate::certify::{lyapunov_v, lyapunov_vtilde};
use crate::error::{Error, Result};
use crate::feddr::{
    accuracy_for_round, base_meta, evaluate, init_feddr, local_seed, local_update,
    server_aggregate, snapshot, AccuracyTarget, Hyper, RunOptions, ServerState, UserState,
};
use crate::linalg::all_finite;
use crate::numerics::{LossModel, Problem, Regularizer};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::trace::{bytes_per_round, AlgorithmTag, Trace, TraceRecord};

/// One scripted event: `user` completes having read version `read`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub user: usize,
    pub read: usize,
}

/// Where the event sequence comes from.
#[derive(Debug, Clone, Copy)]
pub enum Activation<'a> {
    Simulated(&'a DelayModel),
    /// Fixed completion order and read versions, bypassing the clock.
    Scripted {
        tau: usize,
        events: &'a [ScriptedEvent],
    },
}

impl Activation<'_> {
    pub fn tau(&self) -> usize {
        match self {
            Activation::Simulated(m) => m.tau,
            Activation::Scripted { tau, .. } => *tau,
        }
    }
}

/// The delayed-read local step: identical algebra to the synchronous
/// update, applied to a possibly stale server model.
pub fn async_local_update<T: Scalar>(
    user: &UserState<T>,
    xbar_delayed: &[T],
    hyper: &Hyper<T>,
    model: &LossModel<T>,
    target: AccuracyTarget<T>,
    rng: &mut StreamRng,
) -> Result<(UserState<T>, Vec<T>)> {
    local_update(user, xbar_delayed, hyper, model, target, rng)
}

/// `xtilde += delta / n`, `xbar = prox_{eta g}(xtilde)`, and the new model is
/// pushed as the next version.
pub fn async_server_update<T: Scalar>(
    server: &mut ServerState<T>,
    user: usize,
    delta: Vec<T>,
    n: usize,
    reg: &Regularizer<T>,
    eta: T,
    versions: &mut VersionedModel<T>,
) -> Result<()> {
    server_aggregate(server, &[(user, delta)], n, reg, eta)?;
    versions.push(server.xbar.clone());
    Ok(())
}

/// Gate applied before an asynchronous run.
pub fn check_async_config<T: Scalar>(
    problem: &Problem<T>,
    hyper: &Hyper<T>,
    tau: usize,
) -> Result<()> {
    hyper.validate(problem.n())?;
    if hyper.enforce_stepsizes {
        if !(hyper.prox.is_certified() && hyper.accuracy.is_exact()) {
            return Err(Error::Precondition(
                "the asynchronous analysis assumes exact prox; disable stepsize enforcement to run otherwise".into(),
            ));
        }
        let n = problem.n();
        stepsize_bounds_async(
            n,
            tau,
            hyper.alpha.as_f64(),
            hyper.eta.as_f64(),
            problem.lipschitz().as_f64(),
            n,
            1.0 / n as f64,
        )?;
    }
    Ok(())
}

/// Asynchronous FedDR for `opts.rounds` server events.
pub fn run_async<T: Scalar>(
    problem: &Problem<T>,
    x0: &[T],
    hyper: &Hyper<T>,
    activation: Activation<'_>,
    opts: &RunOptions,
) -> Result<Trace> {
    run_async_logged(problem, x0, hyper, activation, opts).map(|(t, _)| t)
}

/// [`run_async`] that also returns the version log.
pub fn run_async_logged<T: Scalar>(
    problem: &Problem<T>,
    x0: &[T],
    hyper: &Hyper<T>,
    activation: Activation<'_>,
    opts: &RunOptions,
) -> Result<(Trace, VersionLog)> {
    let n = problem.n();
    let tau = activation.tau();
    check_async_config(problem, hyper, tau)?;
    let mut meta = base_meta(AlgorithmTag::Asyncfeddr, problem, x0, hyper, opts.seed)?;
    meta.tau = Some(tau);
    meta.probabilities = vec![1.0 / n as f64; n];
    let mut trace = Trace::new(meta, opts.full_states);
    let mut log = VersionLog::default();

    let (mut server, mut users) = init_feddr(x0, hyper, problem, opts.seed)?;
    let mut versions = VersionedModel::new(tau, server.xbar.clone());
    let mut sim = match activation {
        Activation::Simulated(model) => Some(DelaySim::new(n, model.clone(), opts.seed)?),
        Activation::Scripted { events, .. } => {
            if events.iter().any(|e| e.user >= n) {
                return Err(Error::Precondition(format!(
                    "script names a user outside 0..{n}"
                )));
            }
            None
        }
    };
    let p_i = T::one() / problem.n_scalar();
    let mut bytes = 0u64;
    let init_eps = users
        .iter()
        .map(|u| u.last_eps)
        .try_fold(0.0f64, |a, e| e.map(|e| a.max(e.as_f64())));
    let rec = make_record(
        problem, hyper, opts, &server, &users, &versions, 0.0, None, bytes, init_eps, tau,
    )?;
    trace.records.push(rec);
    if let Some(states) = trace.states.as_mut() {
        states.push(snapshot(0, &server.xbar, &users));
    }

    for k in 0..opts.rounds {
        let c = match (&mut sim, activation) {
            (Some(sim), _) => sim.next_completion().expect("jobs are always in flight"),
            (None, Activation::Scripted { events, .. }) => {
                let Some(e) = events.get(k) else {
                    trace.footer.abort = Some(format!("script ended after {k} events"));
                    break;
                };
                Completion {
                    user: e.user,
                    version: e.read,
                    time: k as f64 + 1.0,
                }
            }
            (None, Activation::Simulated(_)) => unreachable!(),
        };
        if c.version > k || k - c.version > tau {
            return Err(Error::StaleRead {
                requested: c.version,
                oldest: versions.oldest_version(),
                current: k,
            });
        }
        let read = versions.get(c.version)?.to_vec();
        let target = accuracy_for_round(&hyper.accuracy, k + 1, p_i)?;
        let mut rng = rng::stream(local_seed(opts.seed, c.user, k + 1), &[]);
        let (state, delta) = match async_local_update(
            &users[c.user],
            &read,
            hyper,
            &problem.models[c.user],
            target,
            &mut rng,
        ) {
            Ok(r) => r,
            Err(e) => {
                trace.footer.abort = Some(format!("event {k}: {e}"));
                break;
            }
        };
        let eps = state.last_eps.map(Scalar::as_f64);
        users[c.user] = state;
        async_server_update(
            &mut server,
            c.user,
            delta,
            n,
            &problem.reg,
            hyper.eta,
            &mut versions,
        )?;
        if let Some(sim) = sim.as_mut() {
            sim.finish(c.user);
        }
        log.push(c.user, c.version);
        if !all_finite(&server.xbar) {
            trace.footer.abort = Some(format!("event {k}: non-finite server model"));
            break;
        }
        bytes += bytes_per_round(1, problem.dim(), T::wire_bytes());
        let mut rec = match make_record(
            problem,
            hyper,
            opts,
            &server,
            &users,
            &versions,
            c.time,
            Some(k - c.version),
            bytes,
            eps,
            tau,
        ) {
            Ok(r) => r,
            Err(e) => {
                trace.footer.abort = Some(format!("event {k}: {e}"));
                break;
            }
        };
        rec.active = vec![c.user];
        trace.records.push(rec);
        if let Some(states) = trace.states.as_mut() {
            states.push(snapshot(k + 1, &server.xbar, &users));
        }
    }
    trace.footer.stalls = sim.map_or(0, |s| s.stalls);
    Ok((trace, log))
}

#[allow(clippy::too_many_arguments)]
fn make_record<T: Scalar>(
    problem: &Problem<T>,
    hyper: &Hyper<T>,
    opts: &RunOptions,
    server: &ServerState<T>,
    users: &[UserState<T>],
    versions: &VersionedModel<T>,
    time: f64,
    delay: Option<usize>,
    bytes: u64,
    prox_accuracy: Option<f64>,
    tau: usize,
) -> Result<TraceRecord> {
    let (loss, train_accuracy, grad_map_sq) = evaluate(problem, &server.xbar, hyper.eta)?;
    let (lyapunov, lyapunov_tilde) = if opts.lyapunov {
        let v = lyapunov_v(users, &server.xbar, hyper.eta, problem)?;
        let history: Vec<Vec<T>> = versions.history().cloned().collect();
        let vt = lyapunov_vtilde(v, &history, hyper.eta, problem.n(), tau);
        (Some(v.as_f64()), Some(vt.as_f64()))
    } else {
        (None, None)
    };
    Ok(TraceRecord {
        k: server.round,
        sim_time: time,
        active: Vec::new(),
        loss,
        train_accuracy,
        grad_map_sq,
        lyapunov,
        lyapunov_tilde,
        bytes,
        delay,
        prox_mode: hyper.prox_tag(),
        prox_accuracy,
        resamples: 0,
    })
}
