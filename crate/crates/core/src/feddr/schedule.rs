use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How accurately the local prox must be solved over the rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AccuracySchedule<T> {
    Exact,
    /// `eps_{i,k}^2 = m / (2 (k + 1)^2)`.
    Absolute {
        m: T,
    },
    /// `||x_i^{k+1} - prox||^2 <= theta_hat p_i ||x_i^{k+1} - x_i^k||^2`.
    Relative {
        theta_hat: T,
    },
}

impl<T: Scalar> AccuracySchedule<T> {
    pub fn is_exact(&self) -> bool {
        matches!(self, AccuracySchedule::Exact)
    }
}

/// The accuracy demanded of one prox evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyTarget<T> {
    Exact,
    /// Distance to the true prox at most this value.
    Absolute(T),
    /// Squared distance at most `theta` times the squared step.
    Relative(T),
}

/// Target for the prox producing `x_i^k` of a user with inclusion
/// probability `p_i`.
pub fn accuracy_for_round<T: Scalar>(
    sched: &AccuracySchedule<T>,
    k: usize,
    p_i: T,
) -> Result<AccuracyTarget<T>> {
    match *sched {
        AccuracySchedule::Exact => Ok(AccuracyTarget::Exact),
        AccuracySchedule::Absolute { m } => {
            if m < T::zero() {
                return Err(Error::Precondition(format!(
                    "accuracy budget M must be nonnegative, got {m}"
                )));
            }
            let kp1 = T::from_usize(k + 1).unwrap();
            Ok(AccuracyTarget::Absolute(
                (m / (T::lit(2.0) * kp1 * kp1)).sqrt(),
            ))
        }
        AccuracySchedule::Relative { theta_hat } => {
            if theta_hat < T::zero() {
                return Err(Error::Precondition(format!(
                    "theta_hat must be nonnegative, got {theta_hat}"
                )));
            }
            Ok(AccuracyTarget::Relative(theta_hat * p_i))
        }
    }
}

/// `D(alpha, eta) = 2 - alpha (L eta + 1) - 2 L^2 eta^2 - 4 g4 alpha (1 + L^2 eta^2)`.
/// A configuration is accepted iff `D > 0` and `eta <= 1/L`.
pub fn validate_stepsizes(alpha: f64, eta: f64, gamma4: f64, lipschitz: f64) -> f64 {
    let le = lipschitz * eta;
    2.0 - alpha * (le + 1.0) - 2.0 * le * le - 4.0 * gamma4 * alpha * (1.0 + le * le)
}

/// Descent coefficient together with the sufficient closed-form ranges for
/// `alpha` and `eta`. Only `descent > 0` and `eta <= 1/L` gate a run; the
/// closed-form ranges are reported for reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeReport {
    pub descent: f64,
    pub accepted: bool,
    pub closed_form_alpha: f64,
    pub closed_form_eta: f64,
    pub within_closed_form: bool,
}

pub fn stepsize_report(alpha: f64, eta: f64, gamma4: f64, lipschitz: f64) -> StepsizeReport {
    let descent = validate_stepsizes(alpha, eta, gamma4, lipschitz);
    let g = gamma4;
    let closed_form_alpha = 8f64.min((17.0 + 64.0 * g).sqrt() - 1.0) / (4.0 * (1.0 + 4.0 * g));
    let disc = (4.0 - alpha).powi(2) - 16.0 * alpha * alpha * g * (1.0 + 4.0 * g);
    let closed_form_eta =
        (disc.max(0.0).sqrt() - alpha) / (4.0 * lipschitz * (1.0 + 2.0 * alpha * g));
    StepsizeReport {
        descent,
        accepted: descent > 0.0 && eta * lipschitz <= 1.0,
        closed_form_alpha,
        closed_form_eta,
        within_closed_form: alpha < closed_form_alpha && eta < closed_form_eta,
    }
}

/// Errors unless the configuration passes the descent gate.
pub fn check_stepsizes(alpha: f64, eta: f64, gamma4: f64, lipschitz: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Rejected {
            constant: "α".into(),
            value: alpha,
        });
    }
    let d = validate_stepsizes(alpha, eta, gamma4, lipschitz);
    if !(d > 0.0) {
        return Err(Error::Rejected {
            constant: "D(α,η)".into(),
            value: d,
        });
    }
    if eta * lipschitz > 1.0 {
        return Err(Error::Rejected {
            constant: "1/L − η".into(),
            value: 1.0 / lipschitz - eta,
        });
    }
    Ok(d)
}
