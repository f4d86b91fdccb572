use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng, TAG_COMPUTE};

/// Distribution of one local computation's duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ComputeTime {
    Deterministic { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl Default for ComputeTime {
    fn default() -> Self {
        ComputeTime::Uniform { lo: 1.0, hi: 2.0 }
    }
}

impl ComputeTime {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ComputeTime::Deterministic { value } => value > 0.0,
            ComputeTime::Uniform { lo, hi } => lo > 0.0 && hi >= lo,
            ComputeTime::Lognormal { mu, sigma } => mu.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "invalid compute-time distribution {self:?}"
            )))
        }
    }

    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            ComputeTime::Deterministic { value } => value,
            ComputeTime::Uniform { lo, hi } if hi > lo => rng.random_range(lo..hi),
            ComputeTime::Uniform { lo, .. } => lo,
            ComputeTime::Lognormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
        }
    }
}

/// Compute-time model plus the delay cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    #[serde(default)]
    pub compute: ComputeTime,
    /// Per-user duration multipliers (slow users have factors above 1).
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    pub tau: usize,
}

impl DelayModel {
    pub fn new(compute: ComputeTime, tau: usize) -> Self {
        Self {
            compute,
            scale: None,
            tau,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.compute.validate()?;
        if let Some(s) = &self.scale {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.len(),
                });
            }
            if s.iter().any(|&f| !(f > 0.0)) {
                return Err(Error::Precondition(
                    "duration scale factors must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A scheduled completion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub time: f64,
    pub seq: u64,
    pub user: usize,
    /// Server version the user read when it started.
    pub version: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending completions ordered by time, the simulation clock and the server
/// version counter.
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Pending>,
    pub clock: f64,
    pub version: usize,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn insert(&mut self, user: usize, time: f64, version: usize) -> Pending {
        let p = Pending {
            time,
            seq: self.next_seq,
            user,
            version,
        };
        self.next_seq += 1;
        self.heap.push(p);
        p
    }

    pub fn pop(&mut self) -> Option<Pending> {
        let p = self.heap.pop()?;
        self.clock = self.clock.max(p.time);
        Some(p)
    }

    pub fn pending(&self) -> impl Iterator<Item = &Pending> {
        self.heap.iter()
    }
}

/// Starts `user` on a job reading the current version and finishing after a
/// freshly drawn duration.
pub fn schedule_user(
    sim: &mut EventQueue,
    user: usize,
    model: &DelayModel,
    rng: &mut StreamRng,
) -> Pending {
    let factor = model.scale.as_ref().map_or(1.0, |s| s[user]);
    let duration = model.compute.draw(rng) * factor;
    let (time, version) = (sim.clock + duration, sim.version);
    sim.insert(user, time, version)
}

/// One server event as seen by the algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub user: usize,
    pub version: usize,
    pub time: f64,
}

/// Discrete-event driver enforcing the delay cap.
///
/// At most `tau + 1` jobs are in flight; idle users wait in FIFO order. A
/// completion that would leave an older job unable to finish within the cap
/// is held back until that job completes.
#[derive(Debug, Clone)]
pub struct DelaySim {
    pub queue: EventQueue,
    model: DelayModel,
    rngs: Vec<StreamRng>,
    idle: VecDeque<usize>,
    pub stalls: usize,
}

impl DelaySim {
    pub fn new(n: usize, model: DelayModel, seed: u64) -> Result<Self> {
        model.validate(n)?;
        let rngs = (0..n)
            .map(|i| rng::stream(seed, &[TAG_COMPUTE, i as u64]))
            .collect();
        let mut sim = Self {
            queue: EventQueue::new(),
            model,
            rngs,
            idle: (0..n).collect(),
            stalls: 0,
        };
        sim.admit();
        Ok(sim)
    }

    fn admit(&mut self) {
        while self.queue.len() < self.model.tau + 1 {
            let Some(user) = self.idle.pop_front() else {
                break;
            };
            schedule_user(&mut self.queue, user, &self.model, &mut self.rngs[user]);
        }
    }

    /// Whether the jobs left after removing one can all still finish within
    /// the cap when served oldest first from the next event on.
    fn feasible_without(&self, skip_seq: u64) -> bool {
        let mut versions: Vec<usize> = self
            .queue
            .pending()
            .filter(|p| p.seq != skip_seq)
            .map(|p| p.version)
            .collect();
        versions.sort_unstable();
        let next = self.queue.version + 1;
        versions
            .iter()
            .enumerate()
            .all(|(r, &v)| next + r <= v + self.model.tau)
    }

    /// Pops the next admissible completion.
    pub fn next_completion(&mut self) -> Option<Completion> {
        loop {
            let head = *self.queue.heap.peek()?;
            if self.feasible_without(head.seq) {
                let p = self.queue.pop()?;
                return Some(Completion {
                    user: p.user,
                    version: p.version,
                    time: self.queue.clock,
                });
            }
            let oldest = *self
                .queue
                .pending()
                .filter(|p| p.seq != head.seq)
                .min_by(|a, b| {
                    a.version
                        .cmp(&b.version)
                        .then(a.time.total_cmp(&b.time))
                        .then(a.seq.cmp(&b.seq))
                })?;
            self.queue.heap.pop();
            let time = head.time.max(oldest.time);
            self.queue.insert(head.user, time, head.version);
            self.stalls += 1;
        }
    }

    /// Records the server update for the last completion and restarts idle
    /// users on the new version.
    pub fn finish(&mut self, user: usize) {
        self.queue.version += 1;
        self.idle.push_back(user);
        self.admit();
    }
}
