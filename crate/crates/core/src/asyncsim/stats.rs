use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Empirical delay statistics of an asynchronous trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    /// Largest realized delay.
    pub tau: usize,
    /// Largest number of events between consecutive activations of a user
    /// (the first activation counts from the start).
    pub window: usize,
    /// Smallest fraction of `window`-long event windows taken by one user.
    pub p_hat: f64,
}

pub fn measure_delay_stats(trace: &Trace) -> Result<DelayStats> {
    let n = trace.meta.n;
    let events: Vec<(usize, usize)> = trace
        .records
        .iter()
        .skip(1)
        .filter_map(|r| Some((*r.active.first()?, r.delay.unwrap_or(0))))
        .collect();
    if events.is_empty() || n == 0 {
        return Err(Error::Precondition(
            "delay statistics need at least one event".into(),
        ));
    }
    let tau = events.iter().map(|e| e.1).max().unwrap_or(0);
    let mut window = 0;
    for u in 0..n {
        let mut prev: Option<usize> = None;
        let mut seen = false;
        for (j, _) in events.iter().enumerate().filter(|(_, e)| e.0 == u) {
            window = window.max(prev.map_or(j + 1, |p| j - p));
            prev = Some(j);
            seen = true;
        }
        if !seen {
            window = window.max(events.len() + 1);
        }
    }
    let w = window.min(events.len()).max(1);
    let mut p_hat = f64::INFINITY;
    for u in 0..n {
        let hits: Vec<usize> = events.iter().map(|e| usize::from(e.0 == u)).collect();
        let mut count: usize = hits[..w].iter().sum();
        let mut worst = count;
        for j in w..hits.len() {
            count = count + hits[j] - hits[j - w];
            worst = worst.min(count);
        }
        p_hat = p_hat.min(worst as f64 / window.max(1) as f64);
    }
    Ok(DelayStats { tau, window, p_hat })
}
