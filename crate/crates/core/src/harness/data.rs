use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{soft_threshold, LossModel, Problem, Regularizer, Samples};
use crate::rng::{self, TAG_DATA};

/// Parameters of the heterogeneous synthetic classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Variance of the per-user model means (`r`).
    pub r: f64,
    /// Variance of the per-user feature means (`s`).
    pub s: f64,
    pub n: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Inclusive range of samples per user.
    #[serde(default = "default_samples")]
    pub samples: (usize, usize),
    /// Shared model and feature distribution for every user.
    #[serde(default)]
    pub iid: bool,
    /// Feature covariance is `diag(j^-decay)`.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    60
}
fn default_classes() -> usize {
    10
}
fn default_samples() -> (usize, usize) {
    (50, 150)
}
fn default_decay() -> f64 {
    1.2
}

impl SyntheticSpec {
    pub fn new(r: f64, s: f64, n: usize, seed: u64) -> Self {
        Self {
            r,
            s,
            n,
            dim: default_dim(),
            classes: default_classes(),
            samples: default_samples(),
            iid: false,
            decay: default_decay(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserData {
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<usize>,
    /// Mean of this user's feature distribution.
    pub feature_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub dim: usize,
    pub classes: usize,
    pub users: Vec<UserData>,
}

fn normal(mean: f64, var: f64) -> Normal<f64> {
    Normal::new(mean, var.max(0.0).sqrt()).expect("finite parameters")
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if !(spec.r >= 0.0 && spec.s >= 0.0) {
        return Err(Error::Precondition(
            "synthetic r and s must be nonnegative".into(),
        ));
    }
    let (lo, hi) = spec.samples;
    if spec.n == 0 || spec.dim == 0 || spec.classes < 2 || lo < 2 || hi < lo {
        return Err(Error::Precondition(format!(
            "invalid synthetic spec {spec:?}"
        )));
    }
    let (d, c) = (spec.dim, spec.classes);
    let sd: Vec<f64> = (1..=d)
        .map(|j| (j as f64).powf(-spec.decay).sqrt())
        .collect();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut shared = rng::stream(spec.seed, &[TAG_DATA, u64::MAX]);
    let shared_w: Vec<f64> = (0..c * d).map(|_| std.sample(&mut shared)).collect();
    let shared_b: Vec<f64> = (0..c).map(|_| std.sample(&mut shared)).collect();

    let users = (0..spec.n)
        .map(|i| {
            let mut rng = rng::stream(spec.seed, &[TAG_DATA, i as u64]);
            let (w, b, v) = if spec.iid {
                (shared_w.clone(), shared_b.clone(), vec![0.0; d])
            } else {
                let u = normal(0.0, spec.r).sample(&mut rng);
                let bi = normal(0.0, spec.r).sample(&mut rng);
                let big_b = normal(0.0, spec.s).sample(&mut rng);
                let w: Vec<f64> = (0..c * d)
                    .map(|_| normal(u, 1.0).sample(&mut rng))
                    .collect();
                let b: Vec<f64> = (0..c).map(|_| normal(bi, 1.0).sample(&mut rng)).collect();
                let v: Vec<f64> = (0..d)
                    .map(|_| normal(big_b, 1.0).sample(&mut rng))
                    .collect();
                (w, b, v)
            };
            let m = rng.sample(Uniform::new_inclusive(lo, hi).expect("lo <= hi"));
            let mut rows: Vec<(Vec<f64>, usize)> = (0..m)
                .map(|_| {
                    let x: Vec<f64> = (0..d)
                        .map(|j| v[j] + sd[j] * std.sample(&mut rng))
                        .collect();
                    let label = (0..c)
                        .map(|k| (k, b[k] + (0..d).map(|j| w[k * d + j] * x[j]).sum::<f64>()))
                        .fold((0, f64::NEG_INFINITY), |best, cur| {
                            if cur.1 > best.1 {
                                cur
                            } else {
                                best
                            }
                        })
                        .0;
                    (x, label)
                })
                .collect();
            rows.shuffle(&mut rng);
            let cut = ((m as f64) * 0.8).round() as usize;
            let (train, test) = rows.split_at(cut.clamp(1, m - 1));
            let flat = |part: &[(Vec<f64>, usize)]| -> (Vec<f64>, Vec<usize>) {
                (
                    part.iter().flat_map(|r| r.0.clone()).collect(),
                    part.iter().map(|r| r.1).collect(),
                )
            };
            let (train_x, train_y) = flat(train);
            let (test_x, test_y) = flat(test);
            UserData {
                train_x,
                train_y,
                test_x,
                test_y,
                feature_mean: v,
            }
        })
        .collect();
    Ok(SyntheticData {
        dim: d,
        classes: c,
        users,
    })
}

/// Which loss the synthetic users train.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    Softmax,
    /// Uncertified; `lipschitz` is taken on trust.
    TinyMlp { hidden: usize, lipschitz: f64 },
}

fn with_intercept(x: &[f64], dim: usize) -> Vec<f64> {
    x.chunks(dim)
        .flat_map(|row| row.iter().copied().chain([1.0]))
        .collect()
}

impl SyntheticData {
    /// Per-user training losses over features with an appended constant 1.
    pub fn problem(&self, model: ModelSpec, reg: Regularizer<f64>) -> Result<Problem<f64>> {
        let models = self
            .users
            .iter()
            .map(|u| {
                let samples = Samples::new(
                    with_intercept(&u.train_x, self.dim),
                    u.train_y.clone(),
                    self.dim + 1,
                )?;
                match model {
                    ModelSpec::Softmax => LossModel::softmax(samples, self.classes),
                    ModelSpec::TinyMlp { hidden, lipschitz } => {
                        LossModel::tiny_mlp(samples, hidden, self.classes, lipschitz)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Problem::new(models, reg)
    }

    /// Sample-weighted accuracy on the held-out split.
    pub fn test_accuracy(&self, model: ModelSpec, params: &[f64]) -> Option<f64> {
        let mut hits = 0.0;
        let mut total = 0usize;
        for u in &self.users {
            if u.test_y.is_empty() {
                continue;
            }
            let samples = Samples::new(
                with_intercept(&u.test_x, self.dim),
                u.test_y.clone(),
                self.dim + 1,
            )
            .ok()?;
            let m = match model {
                ModelSpec::Softmax => LossModel::softmax(samples, self.classes).ok()?,
                ModelSpec::TinyMlp { hidden, lipschitz } => {
                    LossModel::tiny_mlp(samples, hidden, self.classes, lipschitz).ok()?
                }
            };
            hits += m.accuracy(params)? * u.test_y.len() as f64;
            total += u.test_y.len();
        }
        (total > 0).then(|| hits / total as f64)
    }

    pub fn label_counts(&self, user: usize) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.users[user].train_y {
            counts[y] += 1;
        }
        counts
    }
}

/// Random quadratics `f_i(x) = 1/2 sum_j h_ij (x_j - a_ij)^2` with a known
/// optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub n: usize,
    pub dim: usize,
    /// Standard deviation of the centers.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Range of per-coordinate curvatures; identity Hessians when absent.
    /// Negative values give nonconvex users.
    #[serde(default)]
    pub curvature: Option<(f64, f64)>,
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub problem: Problem<f64>,
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

pub fn gen_quadratic(
    spec: &QuadraticSpec,
    reg: Regularizer<f64>,
    seed: u64,
) -> Result<QuadraticInstance> {
    if spec.n == 0 || spec.dim == 0 {
        return Err(Error::Precondition(
            "quadratic instance needs n, dim >= 1".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[TAG_DATA, 0x5155_4144]);
    let centre = normal(0.0, spec.spread * spec.spread);
    let centers: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| (0..spec.dim).map(|_| centre.sample(&mut rng)).collect())
        .collect();
    let curv: Vec<Vec<f64>> = match spec.curvature {
        None => vec![vec![1.0; spec.dim]; spec.n],
        Some((lo, hi)) => {
            if !(hi > 0.0 && hi >= lo) {
                return Err(Error::Precondition(format!(
                    "invalid curvature range ({lo}, {hi})"
                )));
            }
            let dist = Uniform::new_inclusive(lo, hi).expect("lo <= hi");
            let mut h: Vec<Vec<f64>> = (0..spec.n)
                .map(|_| (0..spec.dim).map(|_| rng.sample(dist)).collect())
                .collect();
            // the average curvature must stay positive for a finite optimum
            let floor = 0.1 * hi;
            for j in 0..spec.dim {
                let mean: f64 = h.iter().map(|r| r[j]).sum::<f64>() / spec.n as f64;
                if mean < floor {
                    let shift = floor - mean;
                    for r in h.iter_mut() {
                        r[j] = (r[j] + shift).min(hi);
                    }
                }
            }
            h
        }
    };
    let models = centers
        .iter()
        .zip(&curv)
        .map(|(a, h)| {
            if spec.curvature.is_none() {
                Ok(LossModel::quadratic(a.clone()))
            } else {
                LossModel::diagonal_quadratic(a.clone(), h.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda = match &reg {
        Regularizer::Zero => 0.0,
        Regularizer::L1 { weight } => *weight,
    };
    let x_star: Vec<f64> = (0..spec.dim)
        .map(|j| {
            let hsum: f64 = curv.iter().map(|h| h[j]).sum();
            let c = curv
                .iter()
                .zip(&centers)
                .map(|(h, a)| h[j] * a[j])
                .sum::<f64>()
                / hsum;
            soft_threshold(c, lambda * spec.n as f64 / hsum)
        })
        .collect();
    let problem = Problem::new(models, reg)?;
    let f_star = problem.objective(&x_star)?;
    Ok(QuadraticInstance {
        problem,
        x_star,
        f_star,
    })
}
