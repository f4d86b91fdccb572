use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dist, norm};
use crate::numerics::loss::LossModel;
use crate::numerics::sgd::{local_sgd, Anchor, SgdOptions};
use crate::rng;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_INNER: usize = 100_000;

/// Output of a proximal oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult<T> {
    pub point: Vec<T>,
    /// Upper bound on `||point - prox_{eta f}(y)||`, or `None` when the
    /// oracle gives no guarantee.
    pub certified_accuracy: Option<T>,
    pub inner_iterations: usize,
}

/// When the certified solver may stop.
#[derive(Debug, Clone, Copy)]
pub enum StopRule<'a, T> {
    /// `||z - prox|| <= eps`.
    Absolute(T),
    /// `||z - prox|| <= sqrt(theta) * ||z - anchor||`, or the certificate
    /// falls below `floor`.
    Relative { theta: T, anchor: &'a [T], floor: T },
}

/// Gradient descent on `phi(z) = f(z) + ||z - y||^2 / (2 eta)` with step
/// `1 / (L + 1/eta)`. Because `phi` is `mu = 1/eta - L` strongly convex when
/// `eta < 1/L`, `||grad phi(z)|| / mu` bounds the distance to the true prox.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifiedProx {
    #[serde(default = "default_max_inner")]
    pub max_iter: usize,
    /// Use the closed form when the loss has one.
    #[serde(default = "default_true")]
    pub closed_form: bool,
    /// Certificate the iterative solver settles for when asked for an exact prox.
    #[serde(default = "default_exact_tol")]
    pub exact_tol: f64,
}

fn default_max_inner() -> usize {
    DEFAULT_MAX_INNER
}
fn default_true() -> bool {
    true
}
fn default_exact_tol() -> f64 {
    1e-12
}

impl Default for CertifiedProx {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_INNER,
            closed_form: true,
            exact_tol: default_exact_tol(),
        }
    }
}

impl CertifiedProx {
    pub fn iterative() -> Self {
        Self {
            closed_form: false,
            ..Self::default()
        }
    }

    pub fn solve<T: Scalar>(
        &self,
        model: &LossModel<T>,
        y: &[T],
        eta: T,
        stop: StopRule<'_, T>,
        start: Option<&[T]>,
    ) -> Result<ProxResult<T>> {
        check_dim(model.params_dim(), y.len())?;
        let lipschitz = model.lipschitz();
        if !(eta > T::zero()) || eta * lipschitz >= T::one() {
            return Err(Error::ProxStepTooLarge {
                eta: eta.as_f64(),
                lipschitz: lipschitz.as_f64(),
            });
        }
        if let StopRule::Absolute(eps) = stop {
            if eps < T::zero() {
                return Err(Error::Precondition(format!(
                    "accuracy must be nonnegative, got {eps}"
                )));
            }
        }
        if self.closed_form {
            if let Some(point) = model.closed_form_prox(y, eta) {
                return Ok(ProxResult {
                    point,
                    certified_accuracy: Some(T::zero()),
                    inner_iterations: 0,
                });
            }
        }

        let inv_eta = T::one() / eta;
        let mu = inv_eta - lipschitz;
        let step = T::one() / (lipschitz + inv_eta);
        let exact_tol = T::lit(self.exact_tol);
        let mut z = start.map_or_else(|| y.to_vec(), <[T]>::to_vec);
        check_dim(y.len(), z.len())?;
        let mut best = (T::infinity(), z.clone());

        for it in 0..=self.max_iter {
            let mut g = model.grad(&z)?;
            for ((gj, &zj), &yj) in g.iter_mut().zip(&z).zip(y) {
                *gj = *gj + (zj - yj) * inv_eta;
            }
            let accuracy = norm(&g) / mu;
            if !accuracy.is_finite() {
                return Err(Error::NonFinite {
                    what: "prox subproblem gradient".into(),
                    iteration: it,
                });
            }
            if accuracy < best.0 {
                best = (accuracy, z.clone());
            }
            let done = match stop {
                StopRule::Absolute(eps) => accuracy <= eps.max(exact_tol),
                StopRule::Relative {
                    theta,
                    anchor,
                    floor,
                } => accuracy <= theta.sqrt() * dist(&z, anchor) || accuracy <= floor,
            };
            if done {
                return Ok(ProxResult {
                    point: z,
                    certified_accuracy: Some(accuracy),
                    inner_iterations: it,
                });
            }
            if it == self.max_iter {
                break;
            }
            for (zj, gj) in z.iter_mut().zip(&g) {
                *zj = *zj - step * *gj;
            }
        }
        Err(Error::NonConvergence {
            iterations: self.max_iter,
            accuracy: best.0.as_f64(),
            best: best.1.iter().map(|v| v.as_f64()).collect(),
        })
    }
}

/// Certified prox of `f` at `y` to accuracy `eps` with default settings.
/// `eps = 0` uses the closed form where available.
pub fn prox_f_certified<T: Scalar>(
    model: &LossModel<T>,
    y: &[T],
    eta: T,
    eps: T,
) -> Result<ProxResult<T>> {
    CertifiedProx::default().solve(model, y, eta, StopRule::Absolute(eps), None)
}

/// Fixed-epoch minibatch SGD on the prox subproblem starting at `y`. Any
/// `eta > 0` is allowed; the result carries no certificate.
pub fn prox_f_heuristic<T: Scalar>(
    model: &LossModel<T>,
    y: &[T],
    eta: T,
    opts: &SgdOptions<T>,
    seed: u64,
) -> Result<ProxResult<T>> {
    check_dim(model.params_dim(), y.len())?;
    if opts.epochs == 0 {
        return Err(Error::Precondition(
            "heuristic prox needs at least one epoch".into(),
        ));
    }
    if !(eta > T::zero()) {
        return Err(Error::Precondition(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let mut rng = rng::stream(seed, &[]);
    let anchor = Anchor {
        center: y,
        weight: T::one() / eta,
    };
    let point = local_sgd(model, y, Some(anchor), opts, &mut rng)?;
    let batches = model.sample_count().div_ceil(opts.batch_size.max(1)).max(1);
    Ok(ProxResult {
        point,
        certified_accuracy: None,
        inner_iterations: opts.epochs * batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::loss::{LossKind, Samples};

    /// Brute-force 1-D minimization of 1/2 z^2 + (z - 1)^2 / 2 on a grid.
    fn grid_argmin(f: impl Fn(f64) -> f64) -> f64 {
        let steps = 400_000;
        (0..=steps)
            .map(|s| -2.0 + 4.0 * s as f64 / steps as f64)
            .map(|z| (z, f(z)))
            .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0
    }

    fn softmax_model() -> LossModel<f64> {
        let features = vec![0.5, -1.0, 1.0, 0.2, -0.3, 0.8, 1.5, 0.1];
        LossModel::softmax(Samples::new(features, vec![0, 1, 1, 0], 2).unwrap(), 2).unwrap()
    }

    #[test]
    fn quadratic_closed_form_matches_grid() {
        let q = LossModel::quadratic(vec![0.0]);
        let r = prox_f_certified(&q, &[1.0], 0.5, 0.0).unwrap();
        let oracle = grid_argmin(|z| 0.5 * z * z + (z - 1.0) * (z - 1.0) / (2.0 * 0.5));
        assert!((r.point[0] - oracle).abs() < 1e-4);
        assert!((r.point[0] - 1.0 / 1.5).abs() < 1e-15);
        assert_eq!(r.certified_accuracy, Some(0.0));
    }

    #[test]
    fn closed_form_eta_one_example() {
        // eta = 1 is outside the certified range for L = 1, so evaluate the
        // closed form directly: (y + eta a) / (1 + eta) = 0.5.
        let q = LossModel::quadratic(vec![0.0]);
        let z = q.closed_form_prox(&[1.0], 1.0).unwrap();
        assert_eq!(z, vec![0.5]);
        let oracle = grid_argmin(|z| 0.5 * z * z + (z - 1.0) * (z - 1.0) / 2.0);
        assert!((z[0] - oracle).abs() < 1e-4);
    }

    #[test]
    fn prox_fixed_point_at_minimizer() {
        let a = vec![0.3, -1.1];
        let q = LossModel::quadratic(a.clone());
        let r = prox_f_certified(&q, &a, 0.5, 0.0).unwrap();
        assert_eq!(r.point, a);
    }

    #[test]
    fn step_too_large_is_rejected() {
        let q = LossModel::quadratic(vec![0.0]);
        assert!(matches!(
            prox_f_certified(&q, &[1.0], 1.0, 0.0),
            Err(Error::ProxStepTooLarge { .. })
        ));
    }

    #[test]
    fn certificate_bounds_true_distance() {
        let model = softmax_model();
        let eta = 0.5 / model.lipschitz();
        let y = vec![0.3, -0.2, 0.1, 0.4];
        let exact = CertifiedProx::default()
            .solve(&model, &y, eta, StopRule::Absolute(1e-13), None)
            .unwrap();
        for eps in [1e-1, 1e-3, 1e-6] {
            let r = CertifiedProx::default()
                .solve(&model, &y, eta, StopRule::Absolute(eps), None)
                .unwrap();
            let acc = r.certified_accuracy.unwrap();
            assert!(acc <= eps);
            assert!(dist(&r.point, &exact.point) <= acc + 1e-12);
            // Stopping rule restated as the optimality residual.
            let mut g = model.grad(&r.point).unwrap();
            for ((gj, zj), yj) in g.iter_mut().zip(&r.point).zip(&y) {
                *gj += (zj - yj) / eta;
            }
            assert!(norm(&g) <= eps * (1.0 / eta - model.lipschitz()) + 1e-15);
        }
    }

    #[test]
    fn iterative_quadratic_agrees_with_closed_form() {
        let q = LossModel::diagonal_quadratic(vec![1.0, -2.0], vec![0.7, -0.4]).unwrap();
        let eta = 0.9 / q.lipschitz();
        let y = [0.5, 0.5];
        let closed = prox_f_certified(&q, &y, eta, 0.0).unwrap();
        let it = CertifiedProx::iterative()
            .solve(&q, &y, eta, StopRule::Absolute(1e-9), None)
            .unwrap();
        assert!(dist(&closed.point, &it.point) <= 1e-9);
        assert!(it.inner_iterations > 0);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let model = softmax_model();
        let eta = 0.5 / model.lipschitz();
        let solver = CertifiedProx {
            max_iter: 3,
            ..CertifiedProx::default()
        };
        match solver.solve(
            &model,
            &[1.0, 2.0, 3.0, 4.0],
            eta,
            StopRule::Absolute(1e-14),
            None,
        ) {
            Err(Error::NonConvergence {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn relative_rule_stops_when_anchor_is_far() {
        let model = softmax_model();
        let eta = 0.5 / model.lipschitz();
        let y = vec![0.3, -0.2, 0.1, 0.4];
        let anchor = vec![5.0, 5.0, 5.0, 5.0];
        let r = CertifiedProx::default()
            .solve(
                &model,
                &y,
                eta,
                StopRule::Relative {
                    theta: 0.01,
                    anchor: &anchor,
                    floor: 0.0,
                },
                None,
            )
            .unwrap();
        let acc = r.certified_accuracy.unwrap();
        assert!(acc <= 0.1 * dist(&r.point, &anchor));
    }

    #[test]
    fn heuristic_approaches_closed_form() {
        let q = LossModel::quadratic(vec![1.0, -1.0]);
        let eta = 0.5;
        let y = [0.0, 2.0];
        let opts = SgdOptions::new(5000, 0.01);
        let r = prox_f_heuristic(&q, &y, eta, &opts, 3).unwrap();
        let exact = q.closed_form_prox(&y, eta).unwrap();
        assert!(dist(&r.point, &exact) < 1e-3);
        assert_eq!(r.certified_accuracy, None);
    }

    #[test]
    fn heuristic_constant_loss_returns_start() {
        let empty = Samples::<f64>::new(vec![], vec![], 2).unwrap();
        let constant = LossModel::from_parts(
            LossKind::Softmax {
                samples: empty,
                classes: 2,
            },
            1.0,
        )
        .unwrap();
        let y = vec![0.1, 0.2, 0.3, 0.4];
        let r = prox_f_heuristic(&constant, &y, 10.0, &SgdOptions::new(3, 0.1), 1).unwrap();
        assert_eq!(r.point, y);
    }

    #[test]
    fn heuristic_is_deterministic_per_seed() {
        let model = softmax_model();
        let y = vec![0.3, -0.2, 0.1, 0.4];
        let opts = SgdOptions {
            epochs: 4,
            lr: 0.1,
            batch_size: 2,
        };
        let a = prox_f_heuristic(&model, &y, 5.0, &opts, 42).unwrap();
        let b = prox_f_heuristic(&model, &y, 5.0, &opts, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heuristic_divergence_names_lr() {
        let q = LossModel::quadratic(vec![1.0; 3]);
        let err = prox_f_heuristic(&q, &[0.0; 3], 1.0, &SgdOptions::new(2000, 5.0), 0).unwrap_err();
        assert_eq!(err, Error::Divergence { lr: 5.0 });
        assert!(err.to_string().contains("lr = 5"));
    }
}
