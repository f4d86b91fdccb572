//! Dense vector helpers on plain slices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

pub fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    dist_sq(a, b).sqrt()
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// `y += a * x`
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

pub fn scale<T: Scalar>(a: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi = *xi * a;
    }
}

/// Componentwise mean of equally sized vectors.
pub fn mean<T: Scalar>(vs: &[Vec<T>]) -> Vec<T> {
    let dim = vs.first().map_or(0, Vec::len);
    let mut out = vec![T::zero(); dim];
    for v in vs {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + x;
        }
    }
    let n = T::from_usize(vs.len().max(1)).unwrap();
    for o in out.iter_mut() {
        *o = *o / n;
    }
    out
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn to_f64<T: Scalar>(a: &[T]) -> Vec<f64> {
    a.iter().map(|&x| x.as_f64()).collect()
}

pub fn from_f64<T: Scalar>(a: &[f64]) -> Vec<T> {
    a.iter().map(|&x| T::lit(x)).collect()
}
