//! Lyapunov functions, theoretical constants and the runtime checks that turn
//! the descent lemmas and rate bounds into assertions over traces.

use serde::{Deserialize, Serialize};

use crate::asyncsim::{stepsize_bounds_async, AsyncBounds};
use crate::error::{Error, Result};
use crate::feddr::{validate_stepsizes, UserState};
use crate::linalg::{check_dim, dist_sq, dot, sub};
use crate::numerics::Problem;
use crate::scalar::Scalar;
use crate::trace::{AlgorithmTag, Trace};

pub const DEFAULT_SLACK: f64 = 1e-9;

/// Free parameters of the inexact analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gammas {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
}

impl Gammas {
    pub const fn exact() -> Self {
        Self {
            g1: 0.0,
            g2: 0.0,
            g3: 0.0,
            g4: 0.0,
        }
    }

    pub const fn inexact() -> Self {
        Self {
            g1: 1.0,
            g2: 1.0,
            g3: 1.0,
            g4: 1.0,
        }
    }

    /// Defaults for the relative-error mode, where `1 - 4 g4 - 8 C theta > 0`
    /// forces a small `g4`.
    pub const fn relative() -> Self {
        Self {
            g1: 1.0,
            g2: 1.0,
            g3: 1.0,
            g4: 0.05,
        }
    }
}

/// `V = g(xbar) + (1/n) sum_i [f_i(x_i) + <grad f_i(x_i), xbar - x_i> + ||xbar - x_i||^2 / (2 eta)]`.
pub fn lyapunov_v<T: Scalar>(
    users: &[UserState<T>],
    xbar: &[T],
    eta: T,
    problem: &Problem<T>,
) -> Result<T> {
    check_dim(problem.n(), users.len())?;
    let two_eta = eta + eta;
    let mut total = T::zero();
    for (u, m) in users.iter().zip(&problem.models) {
        let d = sub(xbar, &u.x);
        total = total + m.loss(&u.x)? + dot(&m.grad(&u.x)?, &d) + dot(&d, &d) / two_eta;
    }
    Ok(problem.reg.value(xbar) + total / problem.n_scalar())
}

/// `V + (tau / (n eta)) sum_{l=k-tau}^{k-1} [l - (k - tau) + 1] ||xbar^{l+1} - xbar^l||^2`.
///
/// `history` holds `xbar^{k-tau}, ..., xbar^k` oldest first. Shorter histories
/// (early iterations) are padded with zero differences at the old end.
pub fn lyapunov_vtilde<T: Scalar>(v: T, history: &[Vec<T>], eta: T, n: usize, tau: usize) -> T {
    if tau == 0 || history.len() < 2 {
        return v;
    }
    let start = history.len().saturating_sub(tau + 1);
    let window = &history[start..];
    let diffs = window.len() - 1;
    let mut sum = T::zero();
    for (j, pair) in window.windows(2).enumerate() {
        // newest difference carries weight tau
        let weight = T::from_usize(tau - (diffs - 1 - j)).unwrap();
        sum = sum + weight * dist_sq(&pair[1], &pair[0]);
    }
    let coef = T::from_usize(tau).unwrap() / (T::from_usize(n).unwrap() * eta);
    v + coef * sum
}

/// Inputs shared by all constant computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub alpha: f64,
    pub eta: f64,
    pub n: usize,
    pub lipschitz: f64,
    /// Smallest inclusion (or activation) probability.
    pub p_hat: f64,
    pub gammas: Gammas,
    /// Exact prox: the error terms vanish and the gammas may be zero.
    pub exact: bool,
    /// Delay cap; `Some` selects the asynchronous constants.
    pub tau: Option<usize>,
    /// Activation window of the asynchronous model.
    pub window: Option<usize>,
    /// Relative-error parameter; `Some` adds the relative-mode constants.
    pub theta_hat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncConstants {
    /// Descent coefficient `D(alpha, eta)` with the configured `g4`.
    pub descent: f64,
    pub beta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeConstants {
    /// `max{1 + eta^2 L^2, 2 (1 + eta L)^2 / g4}`.
    pub c_hat: f64,
    pub eta_bar: f64,
    /// `1 - L eta - 2 L^2 eta^2 - 4 g4 (1 + L^2 eta^2) - 8 C_hat theta_hat`.
    pub margin: f64,
    /// Closed-form denominator constant.
    pub c_tilde: f64,
    /// Factor multiplying `F(x0) - F*` in the rate bound. The proof yields
    /// `1 / c_tilde`.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub sync: Option<SyncConstants>,
    #[serde(rename = "async")]
    pub async_: Option<AsyncBounds>,
    pub relative: Option<RelativeConstants>,
}

fn positive(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Rejected {
            constant: name.into(),
            value,
        })
    }
}

pub fn sync_constants(inp: &TheoryInputs) -> Result<SyncConstants> {
    let TheoryInputs {
        alpha,
        eta,
        lipschitz: l,
        p_hat,
        gammas: g,
        exact,
        ..
    } = *inp;
    let g4 = if exact { 0.0 } else { g.g4 };
    let descent = positive("D(α,η)", validate_stepsizes(alpha, eta, g4, l))?;
    positive("p̂", p_hat)?;
    let le2 = 1.0 + l * l * eta * eta;
    let sq = (1.0 + eta * l).powi(2);
    let (g1, g2) = if exact { (0.0, 0.0) } else { (g.g1, g.g2) };
    let beta = positive(
        "β",
        p_hat * alpha * descent / (2.0 * eta * (1.0 + g1) * le2),
    )?;
    let c1 = 2.0 * sq * (1.0 + g2) / (eta * eta * beta);
    if exact {
        return Ok(SyncConstants {
            descent,
            beta,
            rho1: 0.0,
            rho2: 0.0,
            c1,
            c2: 0.0,
            c3: 0.0,
        });
    }
    for (name, v) in [("γ₁", g.g1), ("γ₂", g.g2), ("γ₃", g.g3), ("γ₄", g.g4)] {
        positive(name, v)?;
    }
    let rho2 = 2.0 * sq / (g4 * eta * alpha * alpha)
        + le2 / eta
        + alpha * descent / (2.0 * eta * le2 * g1);
    let rho1 = rho2 + le2 / eta;
    let c2 = rho1 * c1;
    let c3 = rho2 * c1 + sq * (1.0 + g2) / (eta * eta * g2);
    Ok(SyncConstants {
        descent,
        beta,
        rho1,
        rho2,
        c1,
        c2,
        c3,
    })
}

pub fn relative_constants(inp: &TheoryInputs, theta_hat: f64) -> Result<RelativeConstants> {
    let (eta, l, g4, p) = (inp.eta, inp.lipschitz, inp.gammas.g4, inp.p_hat);
    if inp.alpha != 1.0 {
        return Err(Error::Precondition(format!(
            "relative-error mode requires alpha = 1, got {}",
            inp.alpha
        )));
    }
    positive("γ₄", g4)?;
    positive("θ̂", theta_hat)?;
    let le2 = 1.0 + l * l * eta * eta;
    let sq = (1.0 + eta * l).powi(2);
    let c_hat = le2.max(2.0 * sq / g4);
    let budget = positive("1 − 4γ₄ − 8Ĉθ̂", 1.0 - 4.0 * g4 - 8.0 * c_hat * theta_hat)?;
    let eta_bar =
        ((1.0 + 8.0 * (1.0 + 2.0 * g4) * budget).sqrt() - 1.0) / (4.0 * l * (1.0 + 2.0 * g4));
    let margin = positive(
        "1 − Lη − 2L²η² − 4γ₄(1+L²η²) − 8Ĉθ̂",
        1.0 - l * eta - 2.0 * l * l * eta * eta - 4.0 * g4 * le2 - 8.0 * c_hat * theta_hat,
    )?;
    let c_tilde =
        p * p * eta * margin / (4.0 * (4.0 * (le2 + 2.0 * theta_hat) + p * theta_hat) * sq);
    Ok(RelativeConstants {
        c_hat,
        eta_bar,
        margin,
        c_tilde,
        rate: 1.0 / c_tilde,
    })
}

pub fn theory_constants(inp: &TheoryInputs) -> Result<TheoryConstants> {
    let mut out = TheoryConstants::default();
    match inp.tau {
        Some(tau) => {
            let window = inp.window.unwrap_or(inp.n);
            out.async_ = Some(stepsize_bounds_async(
                inp.n,
                tau,
                inp.alpha,
                inp.eta,
                inp.lipschitz,
                window,
                inp.p_hat,
            )?);
        }
        None => out.sync = Some(sync_constants(inp)?),
    }
    if let Some(theta) = inp.theta_hat {
        out.relative = Some(relative_constants(inp, theta)?);
    }
    Ok(out)
}

/// Which sure-descent inequality a trace is checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DescentRule {
    /// `V^{k+1} <= V^k - D/(2 alpha eta n) sum_{S_k} ||dx_i||^2 + error terms`.
    Sync {
        alpha: f64,
        eta: f64,
        n: usize,
        lipschitz: f64,
        gammas: Gammas,
        exact: bool,
    },
    /// `Vtilde^{k+1} <= Vtilde^k - (rho / 2) ||dx_{i_k}||^2`.
    Async { rho: f64 },
}

impl DescentRule {
    /// The rule matching a trace's own parameters.
    pub fn for_trace(trace: &Trace) -> Result<Self> {
        let m = &trace.meta;
        match m.algorithm {
            AlgorithmTag::Feddr => Ok(DescentRule::Sync {
                alpha: m.alpha,
                eta: m.eta,
                n: m.n,
                lipschitz: m.lipschitz,
                gammas: m.gammas,
                exact: m.exact,
            }),
            AlgorithmTag::Asyncfeddr => {
                let tau = m.tau.unwrap_or(0);
                let b = stepsize_bounds_async(m.n, tau, m.alpha, m.eta, m.lipschitz, m.n, 1.0)?;
                Ok(DescentRule::Async { rho: b.rho })
            }
            other => Err(Error::Precondition(format!(
                "no descent certificate exists for {other:?} traces"
            ))),
        }
    }
}

/// Outcome of one descent check between records `k` and `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub k: usize,
    pub v: f64,
    pub vtilde: Option<f64>,
    /// Coefficient in front of the step-length term.
    pub coefficient: f64,
    /// Decrease the lemma demands (may be negative when errors dominate).
    pub required: f64,
    /// `(V^k - V^{k+1}) - required`.
    pub slack: f64,
    pub violation: bool,
}

pub fn check_descent(trace: &Trace, rule: &DescentRule, tol: f64) -> Result<Vec<LyapunovReport>> {
    let states = trace.states.as_ref().ok_or(Error::MissingStates)?;
    let recs = &trace.records;
    let count = recs.len().min(states.len());
    let mut out = Vec::with_capacity(count.saturating_sub(1));
    for k in 0..count.saturating_sub(1) {
        let (s0, s1) = (&states[k], &states[k + 1]);
        let active = &recs[k + 1].active;
        let step: f64 = active.iter().map(|&i| dist_sq(&s1.x[i], &s0.x[i])).sum();
        let (v0, v1, coefficient, required, vtilde) = match *rule {
            DescentRule::Sync {
                alpha,
                eta,
                n,
                lipschitz: l,
                gammas: g,
                exact,
            } => {
                let nf = n as f64;
                let v0 = recs[k].lyapunov.ok_or(Error::MissingStates)?;
                let v1 = recs[k + 1].lyapunov.ok_or(Error::MissingStates)?;
                let g4 = if exact { 0.0 } else { g.g4 };
                let coef = validate_stepsizes(alpha, eta, g4, l) / (2.0 * alpha * eta * nf);
                // a nonpositive coefficient promises nothing; demand plain descent
                let mut required = coef.max(0.0) * step;
                if !exact {
                    let le2 = 1.0 + eta * eta * l * l;
                    let e_sq: f64 = s1.eps.iter().map(|e| e * e).sum::<f64>() / nf;
                    let local: f64 = active
                        .iter()
                        .map(|&i| s0.eps[i].powi(2) + s1.eps[i].powi(2))
                        .sum();
                    let dbar = dist_sq(&s1.xbar, &s0.xbar);
                    required += (1.0 - g.g3) / (2.0 * eta) * dbar;
                    if e_sq > 0.0 {
                        required -= le2 / (eta * g.g3) * e_sq;
                    }
                    if local > 0.0 {
                        required -= 2.0 * (1.0 + eta * l).powi(2)
                            / (g.g4 * eta * alpha * alpha * nf)
                            * local;
                    }
                }
                (v0, v1, coef, required, None)
            }
            DescentRule::Async { rho } => {
                let v0 = recs[k].lyapunov_tilde.ok_or(Error::MissingStates)?;
                let v1 = recs[k + 1].lyapunov_tilde.ok_or(Error::MissingStates)?;
                (v0, v1, rho / 2.0, rho / 2.0 * step, Some(v0))
            }
        };
        let slack = (v0 - v1) - required;
        out.push(LyapunovReport {
            k,
            v: recs[k].lyapunov.unwrap_or(v0),
            vtilde,
            coefficient,
            required,
            slack,
            violation: !(slack >= -tol),
        });
    }
    Ok(out)
}

/// Right-hand side of an average-gradient-mapping rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateBound {
    /// `C1 [F0 - F*]/(K+1) + (1/(n(K+1))) sum_k sum_i (C2 eps_{i,k}^2 + C3 eps_{i,k+1}^2)`.
    Sync { c1: f64, c2: f64, c3: f64 },
    /// `C [F0 - F*]/(K+1)`; used for the asynchronous and relative-error theorems.
    Scaled { c: f64 },
}

impl From<&SyncConstants> for RateBound {
    fn from(c: &SyncConstants) -> Self {
        RateBound::Sync {
            c1: c.c1,
            c2: c.c2,
            c3: c.c3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub k: usize,
    /// Seed average of `(1/(K+1)) sum_{k<=K} ||G(xbar^k)||^2`.
    pub average: f64,
    /// Seed average of the bound.
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub seeds: usize,
    pub rows: Vec<RateRow>,
    pub satisfied: bool,
    /// Largest `average / bound` over all K.
    pub worst_ratio: f64,
}

/// The bound's `F(x0)` term. The analysis starts all local models at `x0`;
/// with prox initialization the Lyapunov value at the start can exceed
/// `F(x0)`, so the larger of the two is used.
pub fn initial_gap(trace: &Trace, f_star: f64) -> f64 {
    let first = trace.records.first();
    let v0 = first
        .and_then(|r| r.lyapunov_tilde.or(r.lyapunov))
        .unwrap_or(f64::NEG_INFINITY);
    trace.meta.initial_objective.max(v0) - f_star
}

/// Checks the averaged rate bound for every prefix `K` on the seed average of
/// `traces` (the theorems bound an expectation).
pub fn check_rate(traces: &[Trace], bound: &RateBound, f_star: f64) -> Result<RateReport> {
    if traces.is_empty() {
        return Err(Error::Precondition(
            "rate check needs at least one trace".into(),
        ));
    }
    let needs_eps = matches!(bound, RateBound::Sync { c2, c3, .. } if *c2 != 0.0 || *c3 != 0.0);
    let mut len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    if needs_eps {
        // the K-th term needs eps at K + 1
        for t in traces {
            let s = t.states.as_ref().ok_or(Error::MissingStates)?;
            len = len.min(s.len().saturating_sub(1));
        }
    }
    let seeds = traces.len() as f64;
    let mut avg_sum = vec![0.0; len];
    let mut bound_sum = vec![0.0; len];
    for t in traces {
        let gap = initial_gap(t, f_star);
        let n = t.meta.n as f64;
        let mut g_acc = 0.0;
        let mut e_acc = 0.0;
        for k in 0..len {
            let kp1 = (k + 1) as f64;
            g_acc += t.records[k].grad_map_sq;
            avg_sum[k] += g_acc / kp1;
            bound_sum[k] += match *bound {
                RateBound::Sync { c1, c2, c3 } => {
                    if needs_eps {
                        let s = t.states.as_ref().expect("checked above");
                        let now: f64 = s[k].eps.iter().map(|e| e * e).sum();
                        let next: f64 = s[k + 1].eps.iter().map(|e| e * e).sum();
                        e_acc += c2 * now + c3 * next;
                    }
                    c1 * gap / kp1 + e_acc / (n * kp1)
                }
                RateBound::Scaled { c } => c * gap / kp1,
            };
        }
    }
    let mut rows = Vec::with_capacity(len);
    let mut worst = 0.0f64;
    for k in 0..len {
        let average = avg_sum[k] / seeds;
        let bound = bound_sum[k] / seeds;
        worst = worst.max(if bound > 0.0 {
            average / bound
        } else if average > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
        rows.push(RateRow {
            k,
            average,
            bound,
            margin: bound - average,
        });
    }
    Ok(RateReport {
        seeds: traces.len(),
        satisfied: rows
            .iter()
            .all(|r| r.average <= r.bound * (1.0 + 1e-12) + 1e-15),
        rows,
        worst_ratio: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{LossModel, Regularizer};

    fn inputs(alpha: f64, eta: f64, n: usize, l: f64) -> TheoryInputs {
        TheoryInputs {
            alpha,
            eta,
            n,
            lipschitz: l,
            p_hat: 1.0 / n as f64,
            gammas: Gammas::exact(),
            exact: true,
            tau: None,
            window: None,
            theta_hat: None,
        }
    }

    #[test]
    fn exact_rate_constant() {
        for (n, l) in [(1, 1.0), (10, 2.5), (7, 0.3)] {
            let c = sync_constants(&inputs(1.0, 1.0 / (3.0 * l), n, l)).unwrap();
            let expected = 160.0 * l * n as f64 / 3.0;
            assert!(
                (c.c1 - expected).abs() <= 1e-10 * expected,
                "{} vs {expected}",
                c.c1
            );
            assert!((c.beta - 3.0 * l / (5.0 * n as f64)).abs() < 1e-12);
            assert_eq!((c.c2, c.c3, c.rho1, c.rho2), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn c1_is_continuous_in_eta() {
        let eta = 1.0 / 3.0;
        let a = sync_constants(&inputs(1.0, eta, 10, 1.0)).unwrap().c1;
        let b = sync_constants(&inputs(1.0, eta + 1e-9, 10, 1.0))
            .unwrap()
            .c1;
        assert!(((a - b) / a).abs() < 1e-7);
    }

    #[test]
    fn invalid_relaxation_rejected_by_name() {
        let err = sync_constants(&inputs(2.0, 1.0 / 3.0, 4, 1.0)).unwrap_err();
        assert!(err.to_string().contains("D(α,η) ≤ 0"), "{err}");
    }

    #[test]
    fn inexact_constants_need_positive_gammas() {
        let mut inp = inputs(0.3, 0.1, 5, 1.0);
        inp.exact = false;
        inp.gammas = Gammas::inexact();
        let c = sync_constants(&inp).unwrap();
        assert!(c.c2 > c.c1 && c.c3 > 0.0 && c.rho1 > c.rho2);
        inp.gammas.g2 = 0.0;
        assert!(sync_constants(&inp).is_err());
    }

    #[test]
    fn relative_constant_matches_hand_evaluation() {
        let mut inp = inputs(1.0, 0.1, 4, 1.0);
        inp.gammas = Gammas::relative();
        let theta = 1e-3;
        let r = relative_constants(&inp, theta).unwrap();
        let c_hat: f64 = (1.0f64 + 0.01).max(2.0 * 1.21 / 0.05);
        let q = 1.0 - 0.1 - 0.02 - 0.2 * 1.01 - 8.0 * c_hat * theta;
        let expected = 0.0625 * 0.1 * q / (4.0 * (4.0 * (1.01 + 0.002) + 0.25 * theta) * 1.21);
        assert!((r.c_tilde - expected).abs() < 1e-15);
        assert!((r.rate * r.c_tilde - 1.0).abs() < 1e-12);
        assert!(inp.eta < r.eta_bar);
        assert!(relative_constants(&inp, 0.5).is_err());
    }

    #[test]
    fn vtilde_weights() {
        let h = vec![vec![0.0], vec![1.0], vec![3.0]];
        // tau = 2, n = 1, eta = 1: coefficient 2, weights (1, 2) on (1, 4)
        assert_eq!(lyapunov_vtilde(5.0, &h, 1.0, 1, 2), 5.0 + 2.0 * (1.0 + 8.0));
        assert_eq!(lyapunov_vtilde(5.0, &h, 1.0, 1, 0), 5.0);
        let flat = vec![vec![2.0]; 4];
        assert_eq!(lyapunov_vtilde(5.0, &flat, 0.5, 3, 3), 5.0);
        // short history: only the newest difference, weight tau
        assert_eq!(lyapunov_vtilde(0.0, &h[1..], 1.0, 1, 2), 2.0 * 2.0 * 4.0);
    }

    #[test]
    fn v_equals_objective_when_models_agree() {
        let models = vec![
            LossModel::quadratic(vec![1.0, 0.0]),
            LossModel::quadratic(vec![0.0, -2.0]),
        ];
        let p = Problem::new(models, Regularizer::l1(0.3).unwrap()).unwrap();
        let x0 = vec![0.5, 0.25];
        let users = vec![UserState::at(&x0), UserState::at(&x0)];
        let v: f64 = lyapunov_v(&users, &x0, 0.5, &p).unwrap();
        assert!((v - p.objective(&x0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn v_matches_scalar_recomputation() {
        let models = vec![
            LossModel::quadratic(vec![1.0]),
            LossModel::quadratic(vec![-1.0]),
        ];
        let p = Problem::new(models, Regularizer::Zero).unwrap();
        let users = vec![UserState::at(&[0.5]), UserState::at(&[-0.25])];
        let xbar = [0.2];
        let eta: f64 = 0.4;
        // user 1: f = 0.125, grad = -0.5, d = -0.3 -> 0.125 + 0.15 + 0.1125
        // user 2: f = 0.28125, grad = 0.75, d = 0.45 -> 0.28125 + 0.3375 + 0.253125
        let expected: f64 = (0.3875 + 0.871875) / 2.0;
        assert!((lyapunov_v(&users, &xbar, eta, &p).unwrap() - expected).abs() < 1e-15);
    }
}
