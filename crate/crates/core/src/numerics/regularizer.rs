use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Convex regularizer `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularizer<T> {
    Zero,
    L1 { weight: T },
}

impl<T: Scalar> Regularizer<T> {
    pub fn l1(weight: T) -> Result<Self> {
        if weight < T::zero() || !weight.is_finite() {
            return Err(Error::Precondition(format!(
                "l1 weight must be nonnegative, got {weight}"
            )));
        }
        Ok(Regularizer::L1 { weight })
    }

    pub fn value(&self, x: &[T]) -> T {
        match *self {
            Regularizer::Zero => T::zero(),
            Regularizer::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<T>(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Regularizer::Zero => true,
            Regularizer::L1 { weight } => weight == T::zero(),
        }
    }

    pub fn prox(&self, y: &[T], eta: T) -> Vec<T> {
        prox_g(y, eta, self)
    }
}

/// `prox_{eta g}(y)`: identity for the zero regularizer, soft-thresholding at
/// `eta * weight` for l1.
pub fn prox_g<T: Scalar>(y: &[T], eta: T, reg: &Regularizer<T>) -> Vec<T> {
    match *reg {
        Regularizer::Zero => y.to_vec(),
        Regularizer::L1 { weight } => {
            let t = eta * weight;
            y.iter().map(|&v| soft_threshold(v, t)).collect()
        }
    }
}

pub fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Grid minimization of 1/2 (z - y)^2 + t |z| on a fine 1-D grid.
    fn grid_prox(y: f64, t: f64) -> f64 {
        let (lo, hi, steps) = (-5.0, 5.0, 200_000);
        (0..=steps)
            .map(|s| lo + (hi - lo) * s as f64 / steps as f64)
            .map(|z| (z, 0.5 * (z - y) * (z - y) + t * z.abs()))
            .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0
    }

    #[test]
    fn identity_for_zero_regularizer() {
        let y = vec![1.0, -3.0, 0.5];
        assert_eq!(prox_g(&y, 2.0, &Regularizer::Zero), y);
    }

    #[test]
    fn soft_threshold_examples() {
        let reg = Regularizer::l1(1.0).unwrap();
        assert_eq!(prox_g(&[0.0, 0.0], 1.0, &reg), vec![0.0, 0.0]);
        let z = prox_g(&[2.0, -0.5], 1.0, &reg);
        assert_eq!(z, vec![1.0, 0.0]);
        for (zi, yi) in z.iter().zip([2.0, -0.5]) {
            assert!((zi - grid_prox(yi, 1.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(Regularizer::l1(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn prox_g_is_nonexpansive(
            u in prop::collection::vec(-10.0f64..10.0, 6),
            v in prop::collection::vec(-10.0f64..10.0, 6),
            weight in 0.0f64..3.0,
            eta in 0.01f64..5.0,
        ) {
            let reg = Regularizer::l1(weight).unwrap();
            let pu = prox_g(&u, eta, &reg);
            let pv = prox_g(&v, eta, &reg);
            let lhs = crate::linalg::dist(&pu, &pv);
            let rhs = crate::linalg::dist(&u, &v);
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn soft_threshold_matches_grid(y in -4.0f64..4.0, t in 0.0f64..2.0) {
            prop_assert!((soft_threshold(y, t) - grid_prox(y, t)).abs() < 1e-4);
        }
    }
}
