use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::certify::Gammas;
use crate::error::{Error, Result};
use crate::feddr::sampling::SamplingScheme;
use crate::feddr::schedule::{accuracy_for_round, AccuracySchedule, AccuracyTarget};
use crate::linalg::{all_finite, check_dim, mean};
use crate::numerics::{
    prox_f_heuristic, prox_g, CertifiedProx, LossModel, Problem, ProxResult, Regularizer,
    SgdOptions, StopRule,
};
use crate::rng::{self, StreamRng, TAG_LOCAL};
use crate::scalar::Scalar;
use crate::trace::ProxModeTag;

/// One user's Douglas-Rachford triple.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState<T> {
    pub y: Vec<T>,
    pub x: Vec<T>,
    pub xhat: Vec<T>,
    /// Certified accuracy of the prox that produced `x`; `None` when uncertified.
    pub last_eps: Option<T>,
}

impl<T: Scalar> UserState<T> {
    /// All three vectors at `x0`, as if `x0` were an exact prox point.
    pub fn at(x0: &[T]) -> Self {
        Self {
            y: x0.to_vec(),
            x: x0.to_vec(),
            xhat: x0.to_vec(),
            last_eps: Some(T::zero()),
        }
    }
}

/// Server aggregate `xtilde` and model `xbar = prox_{eta g}(xtilde)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState<T> {
    pub xtilde: Vec<T>,
    pub xbar: Vec<T>,
    pub round: usize,
}

/// Local prox oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ProxMode<T> {
    Certified(CertifiedProx),
    /// Fixed-epoch SGD; any `eta > 0`, no certificate.
    Heuristic(SgdOptions<T>),
}

impl<T> Default for ProxMode<T> {
    fn default() -> Self {
        ProxMode::Certified(CertifiedProx::default())
    }
}

impl<T> ProxMode<T> {
    pub fn is_certified(&self) -> bool {
        matches!(self, ProxMode::Certified(_))
    }
}

/// Algorithm parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper<T> {
    pub eta: T,
    pub alpha: T,
    pub accuracy: AccuracySchedule<T>,
    pub sampling: SamplingScheme,
    pub prox: ProxMode<T>,
    /// Free parameters of the inexact analysis; defaults depend on the schedule.
    pub gammas: Option<Gammas>,
    /// Reject configurations failing the descent gate.
    pub enforce_stepsizes: bool,
}

impl<T: Scalar> Hyper<T> {
    /// Exact certified prox with full participation.
    pub fn new(eta: T, alpha: T) -> Self {
        Self {
            eta,
            alpha,
            accuracy: AccuracySchedule::Exact,
            sampling: SamplingScheme::Full,
            prox: ProxMode::default(),
            gammas: None,
            enforce_stepsizes: true,
        }
    }

    pub fn gammas(&self) -> Gammas {
        self.gammas.unwrap_or(match self.accuracy {
            AccuracySchedule::Exact => Gammas::exact(),
            AccuracySchedule::Absolute { .. } => Gammas::inexact(),
            AccuracySchedule::Relative { .. } => Gammas::relative(),
        })
    }

    pub fn prox_tag(&self) -> ProxModeTag {
        match (&self.prox, &self.accuracy) {
            (ProxMode::Heuristic(_), _) => ProxModeTag::Heuristic,
            (ProxMode::Certified(_), AccuracySchedule::Exact) => ProxModeTag::Exact,
            (ProxMode::Certified(_), _) => ProxModeTag::Certified,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > T::zero()) {
            return Err(Error::Precondition(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.alpha > T::zero()) {
            return Err(Error::Precondition(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        self.sampling.validate(n)
    }
}

/// Seed for user `i`'s local work in the round producing `x_i^k`.
pub(crate) fn local_seed(seed: u64, user: usize, k: usize) -> u64 {
    rng::derive_seed(seed, &[TAG_LOCAL, user as u64, k as u64])
}

/// Solves `x ~ prox_{eta f}(y)` to `target`. `previous` is the user's current
/// model: the warm start and the anchor of the relative rule.
pub fn local_prox<T: Scalar>(
    model: &LossModel<T>,
    y: &[T],
    eta: T,
    prox: &ProxMode<T>,
    target: AccuracyTarget<T>,
    previous: Option<&[T]>,
    seed: u64,
) -> Result<ProxResult<T>> {
    match prox {
        ProxMode::Heuristic(opts) => prox_f_heuristic(model, y, eta, opts, seed),
        ProxMode::Certified(cp) => {
            let stop = match target {
                AccuracyTarget::Exact => StopRule::Absolute(T::zero()),
                AccuracyTarget::Absolute(eps) => StopRule::Absolute(eps),
                AccuracyTarget::Relative(theta) => match previous {
                    Some(anchor) => StopRule::Relative {
                        theta,
                        anchor,
                        floor: T::lit(cp.exact_tol),
                    },
                    None => StopRule::Absolute(T::zero()),
                },
            };
            cp.solve(model, y, eta, stop, previous)
        }
    }
}

/// Initial states: `y_i = x0`, `x_i ~ prox_{eta f_i}(x0)`, `xhat_i = 2 x_i - y_i`,
/// `xtilde = mean xhat_i`, `xbar = prox_{eta g}(xtilde)`.
pub fn init_feddr<T: Scalar>(
    x0: &[T],
    hyper: &Hyper<T>,
    problem: &Problem<T>,
    seed: u64,
) -> Result<(ServerState<T>, Vec<UserState<T>>)> {
    check_dim(problem.dim(), x0.len())?;
    if !problem.objective(x0)?.is_finite() {
        return Err(Error::NonFinite {
            what: "objective at x0".into(),
            iteration: 0,
        });
    }
    let probs = hyper.sampling.probabilities(problem.n());
    let users = problem
        .models
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let target = match accuracy_for_round(&hyper.accuracy, 0, T::lit(probs[i]))? {
                AccuracyTarget::Relative(_) => AccuracyTarget::Exact,
                t => t,
            };
            let r = local_prox(
                model,
                x0,
                hyper.eta,
                &hyper.prox,
                target,
                None,
                local_seed(seed, i, 0),
            )?;
            let xhat = reflect(&r.point, x0);
            Ok(UserState {
                y: x0.to_vec(),
                x: r.point,
                xhat,
                last_eps: r.certified_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xtilde = mean(&users.iter().map(|u| u.xhat.clone()).collect::<Vec<_>>());
    let xbar = prox_g(&xtilde, hyper.eta, &problem.reg);
    Ok((
        ServerState {
            xtilde,
            xbar,
            round: 0,
        },
        users,
    ))
}

fn reflect<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&xj, &yj)| xj + xj - yj).collect()
}

/// One user's round: `y += alpha (xbar - x)`, `x ~ prox(y)`, `xhat = 2x - y`.
/// Returns the new state and `delta = xhat_new - xhat_old`.
pub fn local_update<T: Scalar>(
    user: &UserState<T>,
    xbar: &[T],
    hyper: &Hyper<T>,
    model: &LossModel<T>,
    target: AccuracyTarget<T>,
    rng: &mut StreamRng,
) -> Result<(UserState<T>, Vec<T>)> {
    check_dim(user.x.len(), xbar.len())?;
    let y: Vec<T> = user
        .y
        .iter()
        .zip(xbar)
        .zip(&user.x)
        .map(|((&yj, &bj), &xj)| yj + hyper.alpha * (bj - xj))
        .collect();
    let r = local_prox(
        model,
        &y,
        hyper.eta,
        &hyper.prox,
        target,
        Some(&user.x),
        rng.next_u64(),
    )?;
    let xhat = reflect(&r.point, &y);
    let delta: Vec<T> = xhat.iter().zip(&user.xhat).map(|(&a, &b)| a - b).collect();
    if !all_finite(&delta) {
        return Err(Error::NonFinite {
            what: "local update".into(),
            iteration: 0,
        });
    }
    Ok((
        UserState {
            y,
            x: r.point,
            xhat,
            last_eps: r.certified_accuracy,
        },
        delta,
    ))
}

/// `xtilde += (1/n) sum deltas`, `xbar = prox_{eta g}(xtilde)`, `round += 1`.
/// Deltas are summed in ascending user order.
pub fn server_aggregate<T: Scalar>(
    server: &mut ServerState<T>,
    deltas: &[(usize, Vec<T>)],
    n: usize,
    reg: &Regularizer<T>,
    eta: T,
) -> Result<()> {
    let mut order: Vec<&(usize, Vec<T>)> = deltas.iter().collect();
    order.sort_by_key(|d| d.0);
    if let Some(w) = order.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateUser(w[0].0));
    }
    if let Some((_, first)) = order.first() {
        let mut sum = first.clone();
        for (_, d) in &order[1..] {
            check_dim(sum.len(), d.len())?;
            for (s, &v) in sum.iter_mut().zip(d) {
                *s = *s + v;
            }
        }
        check_dim(server.xtilde.len(), sum.len())?;
        let nf = T::from_usize(n).unwrap();
        for (t, s) in server.xtilde.iter_mut().zip(&sum) {
            *t = *t + *s / nf;
        }
        server.xbar = prox_g(&server.xtilde, eta, reg);
    }
    server.round += 1;
    Ok(())
}

/// `max_j |xtilde_j - mean_i xhat_ij|`.
pub fn aggregate_residual<T: Scalar>(server: &ServerState<T>, users: &[UserState<T>]) -> T {
    let fresh = mean(&users.iter().map(|u| u.xhat.clone()).collect::<Vec<_>>());
    fresh
        .iter()
        .zip(&server.xtilde)
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max)
}

/// `max_i ||y_i - x_i - eta grad f_i(x_i)||`, zero under exact prox.
pub fn yx_residual<T: Scalar>(users: &[UserState<T>], problem: &Problem<T>, eta: T) -> Result<T> {
    let mut worst = T::zero();
    for (u, m) in users.iter().zip(&problem.models) {
        let g = m.grad(&u.x)?;
        let r: T =
            u.y.iter()
                .zip(&u.x)
                .zip(&g)
                .map(|((&y, &x), &gj)| {
                    let d = y - x - eta * gj;
                    d * d
                })
                .sum();
        worst = worst.max(r.sqrt());
    }
    Ok(worst)
}

/// `max_i ||xhat_i - (2 x_i - y_i)||_inf`.
pub fn reflection_residual<T: Scalar>(users: &[UserState<T>]) -> T {
    users
        .iter()
        .flat_map(|u| {
            u.xhat
                .iter()
                .zip(&u.x)
                .zip(&u.y)
                .map(|((&h, &x), &y)| (h - (x + x - y)).abs())
        })
        .fold(T::zero(), T::max)
}
