use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// How the users taking part in a round are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplingScheme {
    Full,
    /// `b` users drawn uniformly without replacement.
    UniformSubset {
        b: usize,
    },
    /// User `i` joins independently with probability `p[i]`.
    Bernoulli {
        p: Vec<f64>,
    },
    /// Round `k` uses `sets[k % sets.len()]`.
    Scripted {
        sets: Vec<Vec<usize>>,
    },
}

impl SamplingScheme {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        match self {
            SamplingScheme::Full => Ok(()),
            SamplingScheme::UniformSubset { b } if *b == 0 || *b > n => {
                bad(format!("uniform subset size must lie in 1..={n}, got {b}"))
            }
            SamplingScheme::UniformSubset { .. } => Ok(()),
            SamplingScheme::Bernoulli { p } => {
                if p.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: p.len(),
                    });
                }
                match p.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
                    Some(q) => bad(format!(
                        "inclusion probabilities must lie in (0, 1], got {q}"
                    )),
                    None => Ok(()),
                }
            }
            SamplingScheme::Scripted { sets } => {
                if sets.is_empty() || sets.iter().any(Vec::is_empty) {
                    return bad("scripted sampling needs nonempty sets".into());
                }
                for s in sets {
                    let mut sorted = s.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != s.len() {
                        return bad(format!("scripted set {s:?} repeats a user"));
                    }
                    if let Some(&u) = sorted.last().filter(|&&u| u >= n) {
                        return bad(format!("scripted set names user {u} but n = {n}"));
                    }
                }
                let probs = self.probabilities(n);
                match probs.iter().position(|&q| q == 0.0) {
                    Some(i) => bad(format!("user {i} never appears in the script")),
                    None => Ok(()),
                }
            }
        }
    }

    /// Inclusion probability of each user. For scripts, the frequency over
    /// one cycle.
    pub fn probabilities(&self, n: usize) -> Vec<f64> {
        match self {
            SamplingScheme::Full => vec![1.0; n],
            SamplingScheme::UniformSubset { b } => vec![*b as f64 / n as f64; n],
            SamplingScheme::Bernoulli { p } => p.clone(),
            SamplingScheme::Scripted { sets } => {
                let mut counts = vec![0.0; n];
                for &u in sets.iter().flatten() {
                    if u < n {
                        counts[u] += 1.0;
                    }
                }
                counts.iter().map(|c| c / sets.len() as f64).collect()
            }
        }
    }
}

/// Draws the round-`k` user set, sorted ascending, and the number of empty
/// Bernoulli draws that were discarded.
pub fn sample_users(
    scheme: &SamplingScheme,
    n: usize,
    k: usize,
    rng: &mut StreamRng,
) -> (Vec<usize>, usize) {
    match scheme {
        SamplingScheme::Full => ((0..n).collect(), 0),
        SamplingScheme::UniformSubset { b } => {
            let mut s = index::sample(rng, n, (*b).min(n)).into_vec();
            s.sort_unstable();
            (s, 0)
        }
        SamplingScheme::Bernoulli { p } => {
            let mut resamples = 0;
            loop {
                let s: Vec<usize> = (0..n).filter(|&i| rng.random::<f64>() < p[i]).collect();
                if !s.is_empty() {
                    return (s, resamples);
                }
                resamples += 1;
            }
        }
        SamplingScheme::Scripted { sets } => {
            let mut s = sets[k % sets.len()].clone();
            s.sort_unstable();
            (s, 0)
        }
    }
}
