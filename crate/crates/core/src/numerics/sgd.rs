use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::numerics::loss::LossModel;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Minibatch SGD settings shared by the heuristic prox and the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdOptions<T> {
    pub epochs: usize,
    pub lr: T,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    10
}

impl<T: Scalar> SgdOptions<T> {
    pub fn new(epochs: usize, lr: T) -> Self {
        Self {
            epochs,
            lr,
            batch_size: default_batch(),
        }
    }
}

/// Proximal anchor term `(weight / 2) * ||z - center||^2` added to the loss.
#[derive(Debug, Clone, Copy)]
pub struct Anchor<'a, T> {
    pub center: &'a [T],
    pub weight: T,
}

/// Runs `opts.epochs` passes of minibatch SGD on `f(z) + anchor(z)` from
/// `start`. Each epoch shuffles the samples with `rng`; a model without
/// samples takes one full-gradient step per epoch.
pub fn local_sgd<T: Scalar>(
    model: &LossModel<T>,
    start: &[T],
    anchor: Option<Anchor<'_, T>>,
    opts: &SgdOptions<T>,
    rng: &mut StreamRng,
) -> Result<Vec<T>> {
    if !(opts.lr > T::zero()) {
        return Err(Error::Precondition(format!(
            "learning rate must be positive, got {}",
            opts.lr
        )));
    }
    let mut z = start.to_vec();
    let m = model.sample_count();
    let mut order: Vec<usize> = (0..m).collect();
    let batch = opts.batch_size.max(1);
    for _ in 0..opts.epochs {
        if m == 0 {
            step(model, &mut z, &[], anchor, opts.lr);
        } else {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                step(model, &mut z, chunk, anchor, opts.lr);
            }
        }
        if !all_finite(&z) {
            return Err(Error::Divergence {
                lr: opts.lr.as_f64(),
            });
        }
    }
    Ok(z)
}

fn step<T: Scalar>(
    model: &LossModel<T>,
    z: &mut [T],
    batch: &[usize],
    anchor: Option<Anchor<'_, T>>,
    lr: T,
) {
    let mut g = model.batch_grad(z, batch);
    if let Some(a) = anchor {
        for ((gj, &zj), &cj) in g.iter_mut().zip(z.iter()).zip(a.center) {
            *gj = *gj + a.weight * (zj - cj);
        }
    }
    for (zj, gj) in z.iter_mut().zip(g) {
        *zj = *zj - lr * gj;
    }
}
