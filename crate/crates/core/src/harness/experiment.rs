use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asyncsim::{run_async, Activation};
use crate::baselines::{run_baseline, BaselineConfig, BaselineKind};
use crate::certify::{check_descent, theory_constants, DescentRule, TheoryConstants, TheoryInputs};
use crate::error::{Error, Result};
use crate::feddr::{run_feddr, AccuracySchedule, Hyper, RunOptions, SamplingScheme};
use crate::harness::config::{Algorithm, ExperimentConfig, ProblemConfig};
use crate::harness::data::{gen_quadratic, SyntheticData};
use crate::harness::gen_synthetic;
use crate::numerics::{Problem, Regularizer};
use crate::trace::{AlgorithmTag, Trace};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFlags {
    pub seed: Option<u64>,
    pub no_certify: bool,
    pub full_state_trace: bool,
    pub out_dir: PathBuf,
}

impl RunFlags {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: None,
            no_certify: false,
            full_state_trace: false,
            out_dir: out_dir.into(),
        }
    }
}

/// A built problem plus its optimal value when known in closed form.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: Problem<f64>,
    pub f_star: Option<f64>,
}

pub fn build_problem(cfg: &ProblemConfig, base_dir: &Path) -> Result<BuiltProblem> {
    let reg = |lambda: f64| {
        if lambda == 0.0 {
            Ok(Regularizer::Zero)
        } else {
            Regularizer::l1(lambda)
        }
    };
    match cfg {
        ProblemConfig::Quadratic {
            lambda,
            instance_seed,
            ..
        } => {
            let spec = cfg.quadratic_spec().expect("quadratic");
            let inst = gen_quadratic(&spec, reg(*lambda)?, *instance_seed)?;
            Ok(BuiltProblem {
                problem: inst.problem,
                f_star: Some(inst.f_star),
            })
        }
        ProblemConfig::Synthetic {
            data,
            model,
            lambda,
        } => Ok(BuiltProblem {
            problem: gen_synthetic(data)?.problem(*model, reg(*lambda)?)?,
            f_star: None,
        }),
        ProblemConfig::Dataset {
            path,
            model,
            lambda,
        } => {
            let path = base_dir.join(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let data: SyntheticData = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(BuiltProblem {
                problem: data.problem(*model, reg(*lambda)?)?,
                f_star: None,
            })
        }
    }
}

/// Resolves the algorithm parameters against the problem's `L`.
pub fn resolve_hyper(cfg: &ExperimentConfig, problem: &Problem<f64>) -> Result<Hyper<f64>> {
    let h = &cfg.hyper;
    let mut hyper = Hyper {
        eta: h.resolve_eta(problem.lipschitz())?,
        alpha: h.alpha,
        accuracy: h.accuracy,
        sampling: h.sampling.clone(),
        prox: h.prox,
        gammas: h.gammas,
        enforce_stepsizes: h.enforce_stepsizes,
    };
    if cfg.algorithm == Algorithm::Fedsplit {
        hyper.alpha = 2.0;
        hyper.sampling = SamplingScheme::Full;
        hyper.enforce_stepsizes = false;
    }
    Ok(hyper)
}

/// Runs one seed. States are recorded when `states` is set.
pub fn run_seed(
    cfg: &ExperimentConfig,
    problem: &Problem<f64>,
    seed: u64,
    states: bool,
) -> Result<Trace> {
    let x0 = vec![0.0; problem.dim()];
    let mut opts = RunOptions::new(cfg.rounds, seed);
    opts.full_states = states;
    let hyper = resolve_hyper(cfg, problem)?;
    match cfg.algorithm {
        Algorithm::Feddr | Algorithm::Fedsplit => run_feddr(problem, &x0, &hyper, &opts),
        Algorithm::Asyncfeddr => {
            let a = cfg
                .async_
                .as_ref()
                .ok_or_else(|| Error::Config("missing [async] section".into()))?;
            let model = a.delay_model();
            let activation = match &a.script {
                Some(events) => Activation::Scripted { tau: a.tau, events },
                None => Activation::Simulated(&model),
            };
            run_async(problem, &x0, &hyper, activation, &opts)
        }
        Algorithm::Fedavg | Algorithm::Fedprox => {
            let b = cfg
                .baseline
                .as_ref()
                .ok_or_else(|| Error::Config("missing [baseline] section".into()))?;
            let bc = BaselineConfig {
                algorithm: if cfg.algorithm == Algorithm::Fedavg {
                    BaselineKind::Fedavg
                } else {
                    BaselineKind::Fedprox
                },
                local_epochs: b.local_epochs,
                local_lr: b.local_lr,
                batch_size: b.batch_size,
                mu: b.mu,
                sampling: hyper.sampling.clone(),
            };
            run_baseline(problem, &x0, &bc, hyper.eta, &opts)
        }
    }
}

/// Summary of the certificate checks on one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub algorithm: AlgorithmTag,
    pub seed: u64,
    /// Records after the initial one.
    pub rounds: usize,
    pub abort: Option<String>,
    /// `None` when the algorithm carries no descent certificate.
    pub certificate: Option<String>,
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub worst_slack: Option<f64>,
    pub slack_tolerance: f64,
    pub final_loss: Option<f64>,
    pub final_grad_map_sq: Option<f64>,
    pub f_star: Option<f64>,
    pub constants: Option<TheoryConstants>,
}

impl CertifyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn constants_for(trace: &Trace, theta_hat: Option<f64>) -> Option<TheoryConstants> {
    let m = &trace.meta;
    if !matches!(m.algorithm, AlgorithmTag::Feddr | AlgorithmTag::Asyncfeddr) {
        return None;
    }
    let p_hat = m
        .probabilities
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let inputs = TheoryInputs {
        alpha: m.alpha,
        eta: m.eta,
        n: m.n,
        lipschitz: m.lipschitz,
        p_hat,
        gammas: m.gammas,
        exact: m.exact,
        tau: m.tau,
        window: None,
        theta_hat,
    };
    theory_constants(&inputs).ok()
}

/// Checks the descent certificate matching the trace's algorithm.
pub fn certify_trace(trace: &Trace, slack: f64, f_star: Option<f64>) -> Result<CertifyReport> {
    let last = trace.last();
    let mut report = CertifyReport {
        algorithm: trace.meta.algorithm,
        seed: trace.meta.seed,
        rounds: trace.rounds(),
        abort: trace.footer.abort.clone(),
        certificate: None,
        checked: 0,
        violations: 0,
        first_violation: None,
        worst_slack: None,
        slack_tolerance: slack,
        final_loss: last.map(|r| r.loss),
        final_grad_map_sq: last.map(|r| r.grad_map_sq),
        f_star,
        constants: constants_for(trace, None),
    };
    let rule = match DescentRule::for_trace(trace) {
        Ok(rule) => rule,
        Err(Error::Precondition(_)) => return Ok(report),
        Err(e) => return Err(e),
    };
    if !trace.meta.certified {
        return Ok(report);
    }
    report.certificate = Some(
        match rule {
            DescentRule::Sync { .. } => "sync-descent",
            DescentRule::Async { .. } => "async-descent",
        }
        .into(),
    );
    let rows = check_descent(trace, &rule, slack)?;
    report.checked = rows.len();
    report.violations = rows.iter().filter(|r| r.violation).count();
    report.first_violation = rows.iter().find(|r| r.violation).map(|r| r.k);
    report.worst_slack = rows.iter().map(|r| r.slack).reduce(f64::min);
    Ok(report)
}

pub fn certify_file(path: &Path, slack: f64) -> Result<CertifyReport> {
    certify_trace(&Trace::load(path)?, slack, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub files: Vec<PathBuf>,
    pub reports: Vec<CertifyReport>,
    pub traces: Vec<Trace>,
}

impl ExperimentOutcome {
    pub fn violations(&self) -> usize {
        self.reports.iter().map(|r| r.violations).sum()
    }
}

fn wants_states(cfg: &ExperimentConfig, certify: bool) -> bool {
    cfg.trace.full_states
        || (certify
            && matches!(
                cfg.algorithm,
                Algorithm::Feddr | Algorithm::Fedsplit | Algorithm::Asyncfeddr
            ))
}

/// Runs every seed of `cfg` and writes `<stem>-seed<s>.trace.jsonl` plus,
/// when certifying, `<stem>-seed<s>.certify.json` into `flags.out_dir`.
pub fn run_config(
    cfg: &ExperimentConfig,
    stem: &str,
    base_dir: &Path,
    flags: &RunFlags,
) -> Result<ExperimentOutcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = flags.seed {
        cfg.seeds = vec![seed];
    }
    if flags.full_state_trace {
        cfg.trace.full_states = true;
    }
    let certify = cfg.certify.enabled && !flags.no_certify;
    let built = build_problem(&cfg.problem, base_dir)?;
    let config_json = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(&flags.out_dir)?;

    let states = wants_states(&cfg, certify);
    let results: Vec<(Trace, Option<CertifyReport>, Vec<PathBuf>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut trace = run_seed(&cfg, &built.problem, seed, states)?;
            trace.config = Some(config_json.clone());
            let report = if certify {
                let mut r = certify_trace(&trace, cfg.certify.slack, built.f_star)?;
                if let AccuracySchedule::Relative { theta_hat } = cfg.hyper.accuracy {
                    r.constants = constants_for(&trace, Some(theta_hat)).or(r.constants);
                }
                Some(r)
            } else {
                None
            };
            if !cfg.trace.full_states {
                trace.states = None;
            }
            let base = flags.out_dir.join(format!("{stem}-seed{seed}"));
            let trace_path = base.with_extension("trace.jsonl");
            trace.save(&trace_path)?;
            let mut files = vec![trace_path];
            if let Some(r) = &report {
                let path = base.with_extension("certify.json");
                let text = serde_json::to_string_pretty(r).map_err(|e| Error::Io(e.to_string()))?;
                std::fs::write(&path, text + "\n")?;
                files.push(path);
            }
            Ok((trace, report, files))
        })
        .collect::<Result<_>>()?;

    let mut outcome = ExperimentOutcome {
        files: Vec::new(),
        reports: Vec::new(),
        traces: Vec::new(),
    };
    for (trace, report, files) in results {
        outcome.files.extend(files);
        outcome.reports.extend(report);
        outcome.traces.push(trace);
    }
    Ok(outcome)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into())
}

pub fn run_experiment(path: &Path, flags: &RunFlags) -> Result<ExperimentOutcome> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_config(&cfg, &stem_of(path), base, flags)
}

/// Splits `a,b,[c,d]` at top-level commas.
fn split_list(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in raw.chars() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur.trim().to_string());
    out
}

/// Parses `name=v1,v2,...`.
pub fn parse_param(spec: &str) -> Result<(String, Vec<String>)> {
    let (name, list) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--param expects name=list, got {spec:?}")))?;
    let values = split_list(list);
    if name.trim().is_empty() || values.iter().any(String::is_empty) {
        return Err(Error::Config(format!(
            "--param expects name=list, got {spec:?}"
        )));
    }
    Ok((name.trim().to_string(), values))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets the dotted `path` in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path}: `{p}` is not a table")))?;
    }
    let value = parse_value(raw);
    // switching between eta and eta_times_l drops the other
    if cur.contains_key("eta") || cur.contains_key("eta_times_l") {
        match last {
            "eta" => {
                cur.remove("eta_times_l");
            }
            "eta_times_l" => {
                cur.remove("eta");
            }
            _ => {}
        }
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Runs the cartesian product of the parameter lists. Each point writes into
/// its own subdirectory named after the overrides.
pub fn sweep(
    path: &Path,
    params: &[(String, Vec<String>)],
    flags: &RunFlags,
) -> Result<Vec<(String, ExperimentOutcome)>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = stem_of(path);
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (name, values) in params {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((name.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
        .into_iter()
        .map(|point| {
            let mut t = table.clone();
            for (name, value) in &point {
                set_path(&mut t, name, value)?;
            }
            let cfg = ExperimentConfig::from_table(t)?;
            let label = point
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            let label = if label.is_empty() {
                "base".to_string()
            } else {
                label
            };
            let dir_name: String = label
                .chars()
                .map(|c| {
                    if c.is_alphanumeric() || "=.,_-".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let mut f = flags.clone();
            f.out_dir = flags.out_dir.join(dir_name);
            Ok((label, run_config(&cfg, &stem, base, &f)?))
        })
        .collect()
}
