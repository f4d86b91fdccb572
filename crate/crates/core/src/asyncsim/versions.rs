use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The last `tau + 1` server models, indexed by version.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionedModel<T> {
    tau: usize,
    first: usize,
    ring: VecDeque<Vec<T>>,
}

impl<T: Scalar> VersionedModel<T> {
    /// Starts with `xbar^0` as version 0.
    pub fn new(tau: usize, xbar0: Vec<T>) -> Self {
        let mut ring = VecDeque::with_capacity(tau + 1);
        ring.push_back(xbar0);
        Self {
            tau,
            first: 0,
            ring,
        }
    }

    pub fn current_version(&self) -> usize {
        self.first + self.ring.len() - 1
    }

    pub fn oldest_version(&self) -> usize {
        self.first
    }

    pub fn current(&self) -> &[T] {
        self.ring.back().expect("ring is never empty")
    }

    pub fn push(&mut self, xbar: Vec<T>) {
        self.ring.push_back(xbar);
        if self.ring.len() > self.tau + 1 {
            self.ring.pop_front();
            self.first += 1;
        }
    }

    pub fn get(&self, version: usize) -> Result<&[T]> {
        let current = self.current_version();
        if version < self.first || version > current {
            return Err(Error::StaleRead {
                requested: version,
                oldest: self.first,
                current,
            });
        }
        Ok(&self.ring[version - self.first])
    }

    /// Retained models, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &Vec<T>> {
        self.ring.iter()
    }

    /// `xbar^k + sum_{l=k-d}^{k-1} (xbar^l - xbar^{l+1})`, the delayed copy
    /// rebuilt from the current model and the stored differences.
    pub fn delayed_copy(&self, delay: usize) -> Result<Vec<T>> {
        let k = self.current_version();
        if delay > k - self.first {
            return Err(Error::StaleRead {
                requested: k.saturating_sub(delay),
                oldest: self.first,
                current: k,
            });
        }
        let mut out = self.current().to_vec();
        for l in (k - delay)..k {
            let (a, b) = (self.get(l)?, self.get(l + 1)?);
            for ((o, &al), &bl) in out.iter_mut().zip(a).zip(b) {
                *o = *o + (al - bl);
            }
        }
        Ok(out)
    }
}

/// Which user produced each server version.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VersionLog {
    /// `active[k]` moved the server from version `k` to `k + 1`.
    pub active: Vec<usize>,
    /// `reads[k]`: version the active user had read.
    pub reads: Vec<usize>,
}

impl VersionLog {
    pub fn push(&mut self, user: usize, read: usize) {
        self.active.push(user);
        self.reads.push(read);
    }

    /// For a read of `version` served to the user active at event `k`,
    /// the superscript under which each user's reflected iterate enters that
    /// model. User `i`'s iterate is unchanged from the version it was last
    /// written until its next update, and is labelled with the last iteration
    /// index before that update (capped at `k - 1`).
    pub fn composition(&self, version: usize, k: usize, n: usize) -> Vec<usize> {
        (0..n)
            .map(|i| {
                let next = self
                    .active
                    .iter()
                    .enumerate()
                    .skip(version)
                    .find(|&(_, &u)| u == i)
                    .map_or(k, |(j, _)| j);
                next.min(k).saturating_sub(1)
            })
            .collect()
    }
}
