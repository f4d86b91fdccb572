use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stepsize limits and constants of the asynchronous analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsyncBounds {
    /// `c = (2 tau^2 - n) / n^2`.
    pub c: f64,
    pub alpha_bar: f64,
    pub eta_bar: f64,
    pub rho: f64,
    pub d: f64,
    /// `2 (1 + eta L)^2 D / (n eta^2 rho)`.
    pub c_hat: f64,
}

/// Evaluates all constants without judging them.
pub fn async_constants(
    n: usize,
    tau: usize,
    alpha: f64,
    eta: f64,
    l: f64,
    window: usize,
    p_hat: f64,
) -> AsyncBounds {
    let nf = n as f64;
    let t2 = (tau * tau) as f64;
    let c = (2.0 * t2 - nf) / (nf * nf);
    let small_delay = 2.0 * t2 <= nf;
    let alpha_bar = if small_delay { 1.0 } else { 2.0 / (2.0 + c) };
    let eta_bar = if small_delay {
        ((16.0 - 8.0 * alpha - 7.0 * alpha * alpha).sqrt() - alpha) / (2.0 * l * (2.0 + alpha))
    } else {
        ((16.0 - 8.0 * alpha - (7.0 + 4.0 * c + 4.0 * c * c) * alpha * alpha).sqrt() - alpha)
            / (2.0 * l * (2.0 + (1.0 + c) * alpha))
    };
    let le2 = 1.0 + l * l * eta * eta;
    let core = 2.0 * (1.0 - alpha) - (2.0 + alpha) * l * l * eta * eta - l * alpha * eta;
    let rho = if small_delay {
        core / (alpha * eta * nf)
    } else {
        (nf * nf * core - alpha * le2 * (2.0 * t2 - nf)) / (alpha * eta * nf.powi(3))
    };
    let tw = window as f64;
    let d = (8.0 * alpha * alpha * le2 * (t2 + 2.0 * tw * nf * p_hat)
        + 8.0 * nf * nf * (le2 + tw * alpha * alpha * p_hat))
        / (p_hat * alpha * alpha * nf * nf);
    let c_hat = 2.0 * (1.0 + eta * l).powi(2) * d / (nf * eta * eta * rho);
    AsyncBounds {
        c,
        alpha_bar,
        eta_bar,
        rho,
        d,
        c_hat,
    }
}

/// Constants for `(alpha, eta)`; rejects `alpha >= alpha_bar`, `eta >= eta_bar`
/// and nonpositive `rho` or `D`, naming the offending constant.
pub fn stepsize_bounds_async(
    n: usize,
    tau: usize,
    alpha: f64,
    eta: f64,
    lipschitz: f64,
    window: usize,
    p_hat: f64,
) -> Result<AsyncBounds> {
    if n == 0 || !(lipschitz > 0.0) || !(p_hat > 0.0) || window == 0 {
        return Err(Error::Precondition(
            "async bounds need n >= 1, L > 0, T >= 1 and p_hat > 0".into(),
        ));
    }
    let b = async_constants(n, tau, alpha, eta, lipschitz, window, p_hat);
    let checks = [
        ("α", alpha),
        ("η", eta),
        ("ᾱ − α", b.alpha_bar - alpha),
        ("η̄ − η", b.eta_bar - eta),
        ("ρ", b.rho),
        ("D", b.d),
    ];
    for (constant, value) in checks {
        if !(value > 0.0) {
            return Err(Error::Rejected {
                constant: constant.into(),
                value,
            });
        }
    }
    Ok(b)
}
