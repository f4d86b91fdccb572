use crate::error::{Error, Result};
use crate::linalg::check_dim;
use crate::numerics::loss::LossModel;
use crate::numerics::regularizer::{prox_g, Regularizer};
use crate::scalar::Scalar;

/// The composite objective `F(x) = (1/n) sum_i f_i(x) + g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T> {
    pub models: Vec<LossModel<T>>,
    pub reg: Regularizer<T>,
}

impl<T: Scalar> Problem<T> {
    pub fn new(models: Vec<LossModel<T>>, reg: Regularizer<T>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Precondition("problem needs at least one user".into()))?;
        let dim = first.params_dim();
        for m in &models {
            check_dim(dim, m.params_dim())?;
        }
        Ok(Self { models, reg })
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.models[0].params_dim()
    }

    /// Largest per-user Lipschitz bound.
    pub fn lipschitz(&self) -> T {
        self.models
            .iter()
            .map(LossModel::lipschitz)
            .fold(T::zero(), T::max)
    }

    pub fn lipschitz_certified(&self) -> bool {
        self.models.iter().all(LossModel::lipschitz_certified)
    }

    pub fn n_scalar(&self) -> T {
        T::from_usize(self.n()).unwrap()
    }

    /// `f(x) = (1/n) sum_i f_i(x)`.
    pub fn smooth_loss(&self, x: &[T]) -> Result<T> {
        let mut total = T::zero();
        for m in &self.models {
            total = total + m.loss(x)?;
        }
        Ok(total / self.n_scalar())
    }

    pub fn objective(&self, x: &[T]) -> Result<T> {
        Ok(self.smooth_loss(x)? + self.reg.value(x))
    }

    pub fn smooth_grad(&self, x: &[T]) -> Result<Vec<T>> {
        let mut g = vec![T::zero(); x.len()];
        for m in &self.models {
            for (gj, v) in g.iter_mut().zip(m.grad(x)?) {
                *gj = *gj + v;
            }
        }
        let n = self.n_scalar();
        g.iter_mut().for_each(|v| *v = *v / n);
        Ok(g)
    }

    /// Sample-weighted training accuracy over all users, if the losses are
    /// classifiers.
    pub fn accuracy(&self, x: &[T]) -> Option<f64> {
        let mut hits = 0.0;
        let mut total = 0usize;
        for m in &self.models {
            let count = m.sample_count();
            hits += m.accuracy(x)? * count as f64;
            total += count;
        }
        (total > 0).then(|| hits / total as f64)
    }

    pub fn grad_mapping(&self, x: &[T], eta: T) -> Result<Vec<T>> {
        grad_mapping(self, x, eta)
    }
}

/// `G_eta(x) = (x - prox_{eta g}(x - eta grad f(x))) / eta`.
pub fn grad_mapping<T: Scalar>(problem: &Problem<T>, x: &[T], eta: T) -> Result<Vec<T>> {
    if !(eta > T::zero()) {
        return Err(Error::Precondition(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let g = problem.smooth_grad(x)?;
    let shifted: Vec<T> = x.iter().zip(&g).map(|(&xj, &gj)| xj - eta * gj).collect();
    let p = prox_g(&shifted, eta, &problem.reg);
    Ok(x.iter().zip(&p).map(|(&xj, &pj)| (xj - pj) / eta).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    fn quadratics(centers: &[Vec<f64>]) -> Vec<LossModel<f64>> {
        centers.iter().cloned().map(LossModel::quadratic).collect()
    }

    #[test]
    fn zero_regularizer_gives_gradient() {
        let p = Problem::new(
            quadratics(&[vec![1.0, 2.0], vec![-1.0, 0.0]]),
            Regularizer::Zero,
        )
        .unwrap();
        let x = [0.5, -0.5];
        let g = p.smooth_grad(&x).unwrap();
        for (a, b) in p.grad_mapping(&x, 0.3).unwrap().iter().zip(&g) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn vanishes_at_stationary_point() {
        let p = Problem::new(
            quadratics(&[vec![1.0, 2.0], vec![-1.0, 0.0], vec![3.0, 1.0]]),
            Regularizer::Zero,
        )
        .unwrap();
        let mean = [1.0, 1.0];
        assert!(norm(&p.grad_mapping(&mean, 0.7).unwrap()) <= 1e-8);
    }

    #[test]
    fn l1_mapping_matches_grid_search_prox() {
        let p = Problem::new(
            quadratics(&[vec![1.0, -0.2], vec![0.5, 0.1]]),
            Regularizer::l1(0.8).unwrap(),
        )
        .unwrap();
        let x = [0.2, 0.4];
        let eta = 0.5;
        let grad = p.smooth_grad(&x).unwrap();
        let t = eta * 0.8;
        let mut expected = [0.0; 2];
        for j in 0..2 {
            let u = x[j] - eta * grad[j];
            let steps = 400_000;
            let z = (0..=steps)
                .map(|s| -3.0 + 6.0 * s as f64 / steps as f64)
                .map(|z| (z, 0.5 * (z - u) * (z - u) + t * z.abs()))
                .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            expected[j] = (x[j] - z) / eta;
        }
        let got = p.grad_mapping(&x, eta).unwrap();
        for j in 0..2 {
            assert!(
                (got[j] - expected[j]).abs() < 1e-4,
                "{got:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn mismatched_users_rejected() {
        let models = vec![
            LossModel::quadratic(vec![0.0]),
            LossModel::quadratic(vec![0.0, 1.0]),
        ];
        assert!(Problem::new(models, Regularizer::Zero).is_err());
    }
}
