//! The named experiments. Each turns a config into artifacts, metrics and
//! pass/fail checks; none of them touches the file system.

use std::collections::BTreeMap;
use std::time::Instant;

use fraclab_core::dplane::Sinogram;
use fraclab_core::io::{encode_raw, FieldSidecar};
use fraclab_core::{Error, Field};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig};

mod dplane;
mod magnetic;
mod poincare;
mod schrodinger;
mod ucp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{kind}: {0}", kind = .0.kind())]
    Numerical(#[from] Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// One output file, kept in memory until the run is complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// `None` when the measured value was not finite.
    pub value: Option<f64>,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
        };
        let value = self.value.map_or("non-finite".to_string(), |v| format!("{v:e}"));
        let verdict = if self.passed { "ok" } else { "FAILED" };
        write!(f, "{}: {value} {rel} {:e} {verdict}", self.name, self.limit)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub iterations: BTreeMap<String, u64>,
    pub wall_times: BTreeMap<String, f64>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn metric_f64(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).and_then(|v| v.as_f64())
    }

    fn text(&mut self, name: &str, text: String) {
        self.artifacts.push(Artifact { name: name.to_string(), bytes: text.into_bytes() });
    }

    fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("sidecars serialize");
        text.push('\n');
        self.text(name, text);
    }

    /// `stem.f64` plus its `stem.json` sidecar.
    fn field(&mut self, stem: &str, field: &Field) {
        let g = field.grid();
        self.artifacts.push(Artifact { name: format!("{stem}.f64"), bytes: encode_raw(field.values()) });
        let meta = FieldSidecar { n: g.dim(), points: g.points(), half_len: g.half_len(), name: stem.to_string() };
        self.json(&format!("{stem}.json"), &meta);
    }

    fn sinogram(&mut self, stem: &str, sino: &Sinogram) {
        self.artifacts.push(Artifact { name: format!("{stem}.f64"), bytes: encode_raw(sino.values()) });
        self.json(&format!("{stem}.json"), &sino.sidecar());
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(value).expect("metrics serialize"));
    }

    fn check(&mut self, name: &str, value: f64, relation: Relation, limit: f64) {
        let passed = value.is_finite()
            && match relation {
                Relation::AtMost => value <= limit,
                Relation::AtLeast => value >= limit,
                Relation::Above => value > limit,
            };
        let value = value.is_finite().then_some(value);
        self.checks.push(Check { name: name.to_string(), value, relation, limit, passed });
    }

    fn iterations(&mut self, stage: &str, count: u64) {
        *self.iterations.entry(stage.to_string()).or_default() += count;
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.wall_times.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }
}

/// CSV text from a header and rows of already formatted cells.
fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Shortest round-trip formatting, as in every CSV the tool writes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    match cfg.experiment {
        Experiment::Poincare => poincare::run(cfg, &mut out)?,
        Experiment::SchrodingerDn => schrodinger::dn(cfg, &mut out)?,
        Experiment::Alessandrini => schrodinger::alessandrini(cfg, &mut out)?,
        Experiment::Runge => schrodinger::runge(cfg, &mut out)?,
        Experiment::RecoverQ => schrodinger::recover_q(cfg, &mut out)?,
        Experiment::MagneticGauge => magnetic::run(cfg, &mut out)?,
        Experiment::DplaneRoi => dplane::run(cfg, &mut out)?,
        Experiment::UcpScan => ucp::run(cfg, &mut out)?,
    }
    Ok(out)
}
