//! FedAvg and FedProx. FedSplit needs no code of its own: it is FedDR with
//! `alpha = 2`, full participation and `g = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feddr::{evaluate, local_seed, sample_users, RunOptions, SamplingScheme};
use crate::linalg::{all_finite, check_dim};
use crate::numerics::{local_sgd, Anchor, Problem, SgdOptions};
use crate::rng::{self, StreamRng, TAG_SAMPLING};
use crate::scalar::Scalar;
use crate::trace::{bytes_per_round, AlgorithmTag, ProxModeTag, Trace, TraceMeta, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Fedavg,
    Fedprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig<T> {
    pub algorithm: BaselineKind,
    pub local_epochs: usize,
    pub local_lr: T,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// FedProx proximal weight; ignored by FedAvg.
    #[serde(default)]
    pub mu: T,
    pub sampling: SamplingScheme,
}

fn default_batch() -> usize {
    10
}

impl<T: Scalar> BaselineConfig<T> {
    pub fn fedavg(local_epochs: usize, local_lr: T, sampling: SamplingScheme) -> Self {
        Self {
            algorithm: BaselineKind::Fedavg,
            local_epochs,
            local_lr,
            batch_size: default_batch(),
            mu: T::zero(),
            sampling,
        }
    }

    pub fn fedprox(local_epochs: usize, local_lr: T, mu: T, sampling: SamplingScheme) -> Self {
        Self {
            algorithm: BaselineKind::Fedprox,
            mu,
            ..Self::fedavg(local_epochs, local_lr, sampling)
        }
    }

    fn sgd(&self) -> SgdOptions<T> {
        SgdOptions {
            epochs: self.local_epochs,
            lr: self.local_lr,
            batch_size: self.batch_size,
        }
    }
}

fn local_model<T: Scalar>(
    problem: &Problem<T>,
    global: &[T],
    user: usize,
    cfg: &BaselineConfig<T>,
    mu: T,
    rng: &mut StreamRng,
) -> Result<Vec<T>> {
    if cfg.local_epochs == 0 {
        return Ok(global.to_vec());
    }
    let anchor = (mu > T::zero()).then_some(Anchor {
        center: global,
        weight: mu,
    });
    local_sgd(&problem.models[user], global, anchor, &cfg.sgd(), rng)
}

fn round<T: Scalar>(
    global: &[T],
    problem: &Problem<T>,
    cfg: &BaselineConfig<T>,
    active: &[usize],
    mu: T,
    seed: u64,
    k: usize,
) -> Result<Vec<T>> {
    check_dim(problem.dim(), global.len())?;
    if !problem.reg.is_zero() {
        return Err(Error::Precondition(
            "the baselines handle g = 0 only".into(),
        ));
    }
    if mu < T::zero() {
        return Err(Error::Precondition(format!(
            "mu must be nonnegative, got {mu}"
        )));
    }
    let locals: Vec<Vec<T>> = active
        .par_iter()
        .map(|&i| {
            let mut rng = rng::stream(local_seed(seed, i, k + 1), &[]);
            local_model(problem, global, i, cfg, mu, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut avg = vec![T::zero(); global.len()];
    for l in &locals {
        for (a, &v) in avg.iter_mut().zip(l) {
            *a = *a + v;
        }
    }
    let m = T::from_usize(locals.len().max(1)).unwrap();
    avg.iter_mut().for_each(|a| *a = *a / m);
    if locals.is_empty() {
        return Ok(global.to_vec());
    }
    Ok(avg)
}

/// Sampled users run local SGD on `f_i` from `global`; the server returns
/// the unweighted average.
pub fn fedavg_round<T: Scalar>(
    global: &[T],
    problem: &Problem<T>,
    cfg: &BaselineConfig<T>,
    active: &[usize],
    seed: u64,
    k: usize,
) -> Result<Vec<T>> {
    round(global, problem, cfg, active, T::zero(), seed, k)
}

/// Like [`fedavg_round`] with local objective `f_i(z) + (mu/2) ||z - global||^2`.
pub fn fedprox_round<T: Scalar>(
    global: &[T],
    problem: &Problem<T>,
    cfg: &BaselineConfig<T>,
    active: &[usize],
    seed: u64,
    k: usize,
) -> Result<Vec<T>> {
    round(global, problem, cfg, active, cfg.mu, seed, k)
}

/// Runs FedAvg or FedProx. The gradient mapping is reported with step `eta`
/// so traces are comparable with FedDR's.
pub fn run_baseline<T: Scalar>(
    problem: &Problem<T>,
    x0: &[T],
    cfg: &BaselineConfig<T>,
    eta: T,
    opts: &RunOptions,
) -> Result<Trace> {
    let n = problem.n();
    cfg.sampling.validate(n)?;
    let meta = TraceMeta {
        algorithm: match cfg.algorithm {
            BaselineKind::Fedavg => AlgorithmTag::Fedavg,
            BaselineKind::Fedprox => AlgorithmTag::Fedprox,
        },
        n,
        dim: problem.dim(),
        eta: eta.as_f64(),
        alpha: 0.0,
        lipschitz: problem.lipschitz().as_f64(),
        seed: opts.seed,
        initial_objective: problem.objective(x0)?.as_f64(),
        probabilities: cfg.sampling.probabilities(n),
        tau: None,
        certified: false,
        exact: false,
        gammas: crate::certify::Gammas::exact(),
    };
    let mut trace = Trace::new(meta, false);
    let mut sampling = rng::stream(opts.seed, &[TAG_SAMPLING]);
    let mut global = x0.to_vec();
    let mut bytes = 0;
    let record = |k: usize,
                  global: &[T],
                  active: Vec<usize>,
                  bytes: u64,
                  resamples: usize|
     -> Result<TraceRecord> {
        let (loss, train_accuracy, grad_map_sq) = evaluate(problem, global, eta)?;
        Ok(TraceRecord {
            k,
            sim_time: k as f64,
            active,
            loss,
            train_accuracy,
            grad_map_sq,
            lyapunov: None,
            lyapunov_tilde: None,
            bytes,
            delay: None,
            prox_mode: ProxModeTag::Sgd,
            prox_accuracy: None,
            resamples,
        })
    };
    trace.records.push(record(0, &global, Vec::new(), 0, 0)?);
    for k in 0..opts.rounds {
        let (active, resamples) = sample_users(&cfg.sampling, n, k, &mut sampling);
        let next = match cfg.algorithm {
            BaselineKind::Fedavg => fedavg_round(&global, problem, cfg, &active, opts.seed, k),
            BaselineKind::Fedprox => fedprox_round(&global, problem, cfg, &active, opts.seed, k),
        };
        match next {
            Ok(g) if all_finite(&g) => global = g,
            Ok(_) => {
                trace.footer.abort = Some(format!("round {k}: non-finite server model"));
                break;
            }
            Err(e) => {
                trace.footer.abort = Some(format!("round {k}: {e}"));
                break;
            }
        }
        bytes += bytes_per_round(active.len(), problem.dim(), T::wire_bytes());
        match record(k + 1, &global, active, bytes, resamples) {
            Ok(r) => trace.records.push(r),
            Err(e) => {
                trace.footer.abort = Some(format!("round {k}: {e}"));
                break;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;
    use crate::numerics::{LossModel, Regularizer};

    fn quads(centers: &[f64]) -> Problem<f64> {
        Problem::new(
            centers
                .iter()
                .map(|&c| LossModel::quadratic(vec![c, -c]))
                .collect(),
            Regularizer::Zero,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_keep_global() {
        let p = quads(&[1.0]);
        let cfg = BaselineConfig::fedavg(0, 0.1, SamplingScheme::Full);
        assert_eq!(
            fedavg_round(&[0.3, 0.2], &p, &cfg, &[0], 1, 0).unwrap(),
            vec![0.3, 0.2]
        );
    }

    #[test]
    fn identical_users_converge() {
        let p = quads(&[2.0, 2.0, 2.0]);
        let cfg = BaselineConfig::fedavg(2, 0.2, SamplingScheme::Full);
        let t = run_baseline(&p, &[0.0, 0.0], &cfg, 0.5, &RunOptions::new(50, 3)).unwrap();
        assert!(t.last().unwrap().grad_map_sq < 1e-12);
    }

    #[test]
    fn fedprox_without_mu_is_fedavg() {
        let p = quads(&[1.0, -3.0, 0.5]);
        let s = SamplingScheme::UniformSubset { b: 2 };
        let a = run_baseline(
            &p,
            &[0.0, 1.0],
            &BaselineConfig::fedavg(3, 0.1, s.clone()),
            0.5,
            &RunOptions::new(20, 9),
        );
        let b = run_baseline(
            &p,
            &[0.0, 1.0],
            &BaselineConfig::fedprox(3, 0.1, 0.0, s),
            0.5,
            &RunOptions::new(20, 9),
        );
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(
            a.records.iter().map(|r| r.loss).collect::<Vec<_>>(),
            b.records.iter().map(|r| r.loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn large_mu_pins_local_models() {
        let p = quads(&[4.0]);
        let g = [0.0, 0.0];
        let mu = 1000.0;
        let cfg = BaselineConfig::fedprox(200, 1e-4, mu, SamplingScheme::Full);
        let local = fedprox_round(&g, &p, &cfg, &[0], 0, 0).unwrap();
        let bound = crate::linalg::norm(&p.models[0].grad(&g).unwrap()) / mu;
        assert!(dist(&local, &g) <= bound + 1e-6);
    }

    #[test]
    fn fedprox_quadratic_closed_form() {
        let p = quads(&[3.0]);
        let (g, mu) = ([1.0, 1.0], 2.0);
        let cfg = BaselineConfig::fedprox(4000, 0.05, mu, SamplingScheme::Full);
        let local = fedprox_round(&g, &p, &cfg, &[0], 0, 0).unwrap();
        let expected = [
            (3.0 + mu * 1.0) / (1.0 + mu),
            (-3.0 + mu * 1.0) / (1.0 + mu),
        ];
        assert!(dist(&local, &expected) < 1e-10);
    }

    #[test]
    fn same_seed_same_trace() {
        let p = quads(&[1.0, 2.0, 5.0]);
        let cfg =
            BaselineConfig::fedprox(2, 0.1, 0.3, SamplingScheme::Bernoulli { p: vec![0.5; 3] });
        let a = run_baseline(&p, &[1.0, 1.0], &cfg, 0.5, &RunOptions::new(15, 4)).unwrap();
        let b = run_baseline(&p, &[1.0, 1.0], &cfg, 0.5, &RunOptions::new(15, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_regularized_problems() {
        let p = Problem::new(
            vec![LossModel::quadratic(vec![1.0])],
            Regularizer::l1(0.1).unwrap(),
        )
        .unwrap();
        let cfg = BaselineConfig::fedavg(1, 0.1, SamplingScheme::Full);
        assert!(fedavg_round(&[0.0], &p, &cfg, &[0], 0, 0).is_err());
    }
}
