//! Per-round traces and their line-delimited file format.
//!
//! A trace file starts with one header line, followed by one line per record
//! (optionally each followed by a state line) and ends with a footer line.
//! Every line is a JSON object whose `type` field names its kind. Record
//! floats are written with 17 significant digits so reruns are byte-identical.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::certify::Gammas;
use crate::error::{Error, Result};

/// Which local solver produced the user models of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxModeTag {
    Exact,
    Certified,
    Heuristic,
    Sgd,
}

impl ProxModeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ProxModeTag::Exact => "exact",
            ProxModeTag::Certified => "certified",
            ProxModeTag::Heuristic => "heuristic",
            ProxModeTag::Sgd => "sgd",
        }
    }
}

/// Metrics for one round (sync) or one event (async). Record `k` describes
/// the server model after `k` updates; `active` lists the users whose update
/// produced it (empty for `k = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    #[serde(deserialize_with = "nan_if_null")]
    pub sim_time: f64,
    pub active: Vec<usize>,
    #[serde(deserialize_with = "nan_if_null")]
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    #[serde(deserialize_with = "nan_if_null")]
    pub grad_map_sq: f64,
    pub lyapunov: Option<f64>,
    pub lyapunov_tilde: Option<f64>,
    /// Cumulative bytes exchanged so far.
    pub bytes: u64,
    /// Staleness of the model read by the active user (async only).
    pub delay: Option<usize>,
    pub prox_mode: ProxModeTag,
    /// Largest certified prox accuracy among the active users.
    pub prox_accuracy: Option<f64>,
    /// Empty Bernoulli draws discarded before this round's set.
    pub resamples: usize,
}

/// Full algorithm state after record `k`, used by the descent certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub k: usize,
    #[serde(deserialize_with = "vec_nan_if_null")]
    pub xbar: Vec<f64>,
    #[serde(deserialize_with = "rows_nan_if_null")]
    pub x: Vec<Vec<f64>>,
    #[serde(deserialize_with = "rows_nan_if_null")]
    pub y: Vec<Vec<f64>>,
    /// Certified accuracy of each user's current `x`; NaN when uncertified.
    #[serde(deserialize_with = "vec_nan_if_null")]
    pub eps: Vec<f64>,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn vec_nan_if_null<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<f64>, D::Error> {
    let v = Vec::<Option<f64>>::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

fn rows_nan_if_null<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let v = Vec::<Vec<Option<f64>>>::deserialize(d)?;
    Ok(v.into_iter()
        .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmTag {
    Feddr,
    Asyncfeddr,
    Fedavg,
    Fedprox,
}

/// Run parameters needed to interpret a trace without the original problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algorithm: AlgorithmTag,
    pub n: usize,
    pub dim: usize,
    pub eta: f64,
    pub alpha: f64,
    pub lipschitz: f64,
    pub seed: u64,
    /// `F(x0)` at the caller's starting point.
    pub initial_objective: f64,
    /// Per-user inclusion probabilities.
    pub probabilities: Vec<f64>,
    /// Configured delay cap (async only).
    pub tau: Option<usize>,
    /// Whether every prox evaluation carried a certificate.
    pub certified: bool,
    /// Whether the solves were exact (certificates up to round-off).
    pub exact: bool,
    /// Free parameters the descent certificate uses.
    pub gammas: Gammas,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceFooter {
    pub abort: Option<String>,
    /// Times an async user was held back to respect the delay cap.
    pub stalls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    /// Resolved configuration echoed into the header, if any.
    pub config: Option<serde_json::Value>,
    pub records: Vec<TraceRecord>,
    pub states: Option<Vec<StateSnapshot>>,
    pub footer: TraceFooter,
}

/// `participants * 2 * dim * scalar_bytes`: one model down, one delta up.
pub fn bytes_per_round(participants: usize, dim: usize, scalar_bytes: usize) -> u64 {
    (participants * 2 * dim * scalar_bytes) as u64
}

impl Trace {
    pub fn new(meta: TraceMeta, full_states: bool) -> Self {
        Self {
            meta,
            config: None,
            records: Vec::new(),
            states: full_states.then(Vec::new),
            footer: TraceFooter::default(),
        }
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Number of completed rounds or events.
    pub fn rounds(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn aborted(&self) -> bool {
        self.footer.abort.is_some()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::json!({
            "type": "header",
            "meta": self.meta,
            "config": self.config,
            "full_states": self.states.is_some(),
        });
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?
        )?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(w, "{}", record_line(r))?;
            if let Some(s) = self.states.as_ref().and_then(|s| s.get(i)) {
                writeln!(w, "{}", state_line(s))?;
            }
        }
        let mut footer =
            serde_json::to_value(&self.footer).map_err(|e| Error::Io(e.to_string()))?;
        footer["type"] = "footer".into();
        writeln!(w, "{footer}")?;
        Ok(())
    }

    pub fn to_string_lines(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("trace is utf-8")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let parse_err =
            |line: usize, e: &dyn std::fmt::Display| Error::Io(format!("trace line {line}: {e}"));
        let mut meta = None;
        let mut config = None;
        let mut records = Vec::new();
        let mut states: Option<Vec<StateSnapshot>> = None;
        let mut footer = None;
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, &e))?;
            let kind = v
                .get("type")
                .and_then(|t| t.as_str())
                .unwrap_or_default()
                .to_owned();
            match kind.as_str() {
                "header" => {
                    meta = Some(
                        serde_json::from_value(v["meta"].clone())
                            .map_err(|e| parse_err(idx + 1, &e))?,
                    );
                    config = Some(v["config"].clone()).filter(|c| !c.is_null());
                    if v["full_states"].as_bool().unwrap_or(false) {
                        states = Some(Vec::new());
                    }
                }
                "record" => {
                    records.push(serde_json::from_value(v).map_err(|e| parse_err(idx + 1, &e))?)
                }
                "state" => states
                    .get_or_insert_with(Vec::new)
                    .push(serde_json::from_value(v).map_err(|e| parse_err(idx + 1, &e))?),
                "footer" => {
                    footer = Some(serde_json::from_value(v).map_err(|e| parse_err(idx + 1, &e))?)
                }
                other => return Err(parse_err(idx + 1, &format!("unknown line type {other:?}"))),
            }
        }
        Ok(Self {
            meta: meta.ok_or_else(|| Error::Io("trace has no header line".into()))?,
            config,
            records,
            states,
            footer: footer.unwrap_or_default(),
        })
    }
}

fn num(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        out.push_str("null");
    }
}

fn opt_num(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => num(out, v),
        None => out.push_str("null"),
    }
}

fn vec_num(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, &x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        num(out, x);
    }
    out.push(']');
}

fn record_line(r: &TraceRecord) -> String {
    let mut s = String::with_capacity(256);
    let _ = write!(s, "{{\"type\":\"record\",\"k\":{},\"sim_time\":", r.k);
    num(&mut s, r.sim_time);
    s.push_str(",\"active\":[");
    for (i, u) in r.active.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{u}");
    }
    s.push_str("],\"loss\":");
    num(&mut s, r.loss);
    s.push_str(",\"train_accuracy\":");
    opt_num(&mut s, r.train_accuracy);
    s.push_str(",\"grad_map_sq\":");
    num(&mut s, r.grad_map_sq);
    s.push_str(",\"lyapunov\":");
    opt_num(&mut s, r.lyapunov);
    s.push_str(",\"lyapunov_tilde\":");
    opt_num(&mut s, r.lyapunov_tilde);
    let _ = write!(s, ",\"bytes\":{},\"delay\":", r.bytes);
    match r.delay {
        Some(d) => {
            let _ = write!(s, "{d}");
        }
        None => s.push_str("null"),
    }
    let _ = write!(
        s,
        ",\"prox_mode\":\"{}\",\"prox_accuracy\":",
        r.prox_mode.as_str()
    );
    opt_num(&mut s, r.prox_accuracy);
    let _ = write!(s, ",\"resamples\":{}}}", r.resamples);
    s
}

fn state_line(st: &StateSnapshot) -> String {
    let mut s = String::new();
    let _ = write!(s, "{{\"type\":\"state\",\"k\":{},\"xbar\":", st.k);
    vec_num(&mut s, &st.xbar);
    for (key, rows) in [("x", &st.x), ("y", &st.y)] {
        let _ = write!(s, ",\"{key}\":[");
        for (i, row) in rows.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            vec_num(&mut s, row);
        }
        s.push(']');
    }
    s.push_str(",\"eps\":");
    vec_num(&mut s, &st.eps);
    s.push('}');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TraceMeta {
        TraceMeta {
            algorithm: AlgorithmTag::Feddr,
            n: 2,
            dim: 2,
            eta: 0.25,
            alpha: 1.0,
            lipschitz: 1.0,
            seed: 7,
            initial_objective: 1.5,
            probabilities: vec![1.0, 1.0],
            tau: None,
            certified: true,
            exact: true,
            gammas: Gammas::exact(),
        }
    }

    fn record(k: usize) -> TraceRecord {
        TraceRecord {
            k,
            sim_time: k as f64 / 3.0,
            active: vec![0, 1],
            loss: 0.1 + 1.0 / 7.0,
            train_accuracy: None,
            grad_map_sq: 1e-300,
            lyapunov: Some(2.0 / 3.0),
            lyapunov_tilde: None,
            bytes: 64 * k as u64,
            delay: Some(2),
            prox_mode: ProxModeTag::Exact,
            prox_accuracy: Some(0.0),
            resamples: 0,
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let mut t = Trace::new(meta(), true);
        t.config = Some(serde_json::json!({"rounds": 2}));
        for k in 0..3 {
            t.records.push(record(k));
            t.states.as_mut().unwrap().push(StateSnapshot {
                k,
                xbar: vec![std::f64::consts::PI, -0.0],
                x: vec![vec![1.0 / 3.0, 2.0], vec![0.0, 1e-17]],
                y: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
                eps: vec![0.0, 1e-9],
            });
        }
        t.footer.stalls = 4;
        let text = t.to_string_lines();
        let back = Trace::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_string_lines(), text);
    }

    #[test]
    fn non_finite_values_become_null() {
        let mut r = record(1);
        r.loss = f64::NAN;
        let line = record_line(&r);
        assert!(line.contains("\"loss\":null"));
        let back: TraceRecord = serde_json::from_str(&line).unwrap();
        assert!(back.loss.is_nan());
    }

    #[test]
    fn byte_formula() {
        assert_eq!(bytes_per_round(10, 100, 8), 16_000);
        assert_eq!(bytes_per_round(0, 100, 8), 0);
        assert_eq!(3 * bytes_per_round(10, 50, 8), bytes_per_round(30, 50, 8));
    }
}
