//! INI experiment configs.
//!
//! ```ini
//! [experiment]
//! name = ucp-scan
//! seed = 7
//! output = out/ucp-scan
//!
//! [grid]
//! n = 1
//! N = 128
//! L = 4.0
//!
//! [ucp]
//! v = ball(0; 1)
//! ```
//!
//! Regions are written `interval(a, b)`, `ball(c1, ..., cn; r)` or
//! `box(c1, ..., cn; w1, ..., wn)` with half widths `w`. Lists are
//! whitespace or comma separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fraclab_core::region::Region;
use fraclab_core::Grid;
use ini::Ini;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Poincare,
    SchrodingerDn,
    Alessandrini,
    Runge,
    RecoverQ,
    MagneticGauge,
    DplaneRoi,
    UcpScan,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Poincare,
        Experiment::SchrodingerDn,
        Experiment::Alessandrini,
        Experiment::Runge,
        Experiment::RecoverQ,
        Experiment::MagneticGauge,
        Experiment::DplaneRoi,
        Experiment::UcpScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Poincare => "poincare",
            Experiment::SchrodingerDn => "schrodinger-dn",
            Experiment::Alessandrini => "alessandrini",
            Experiment::Runge => "runge",
            Experiment::RecoverQ => "recover-q",
            Experiment::MagneticGauge => "magnetic-gauge",
            Experiment::DplaneRoi => "dplane-roi",
            Experiment::UcpScan => "ucp-scan",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
    }

    /// The config shipped with the tool.
    pub fn default_config(self) -> &'static str {
        match self {
            Experiment::Poincare => include_str!("../configs/poincare.ini"),
            Experiment::SchrodingerDn => include_str!("../configs/schrodinger-dn.ini"),
            Experiment::Alessandrini => include_str!("../configs/alessandrini.ini"),
            Experiment::Runge => include_str!("../configs/runge.ini"),
            Experiment::RecoverQ => include_str!("../configs/recover-q.ini"),
            Experiment::MagneticGauge => include_str!("../configs/magnetic-gauge.ini"),
            Experiment::DplaneRoi => include_str!("../configs/dplane-roi.ini"),
            Experiment::UcpScan => include_str!("../configs/ucp-scan.ini"),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| ConfigError::UnknownExperiment { name: s.to_string(), valid: Self::valid_names() })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown experiment {name:?}; valid names: {valid}")]
    UnknownExperiment { name: String, valid: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("missing key [{section}] {key}")]
    Missing { section: String, key: String },
    #[error("bad value for [{section}] {key}: {reason}")]
    Invalid { section: String, key: String, reason: String },
    #[error("config is for experiment {found:?}, not {requested:?}")]
    WrongExperiment { requested: String, found: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output: PathBuf,
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let entry = sections.entry(name.unwrap_or("").to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.to_string(), v.trim().to_string());
            }
        }
        sections.retain(|_, v| !v.is_empty());
        let mut cfg = Self { experiment: Experiment::Poincare, seed: 0, output: PathBuf::new(), sections };
        cfg.experiment = cfg.str("experiment", "name")?.parse()?;
        cfg.seed = cfg.parse_value("experiment", "seed")?;
        cfg.output = PathBuf::from(cfg.str_or("experiment", "output", &format!("out/{}", cfg.experiment)));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn default_for(experiment: Experiment) -> Self {
        Self::parse(experiment.default_config()).expect("shipped configs parse")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.set("experiment", "seed", &seed.to_string());
        self
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    /// Sorted `[section] key = value` text; what the config hash covers.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (name, props) in &self.sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in props {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections.get(section).is_some_and(|s| s.contains_key(key))
    }

    pub fn str(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.str(section, key).unwrap_or(default)
    }

    fn invalid(section: &str, key: &str, reason: impl fmt::Display) -> ConfigError {
        ConfigError::Invalid { section: section.into(), key: key.into(), reason: reason.to_string() }
    }

    fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.str(section, key)?;
        raw.parse().map_err(|e| Self::invalid(section, key, format!("{raw:?}: {e}")))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_value(section, key)?;
        if !v.is_finite() {
            return Err(Self::invalid(section, key, "not finite"));
        }
        Ok(v)
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        if self.has(section, key) {
            self.f64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        self.parse_value(section, key)
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        if self.has(section, key) {
            self.usize(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        if self.has(section, key) {
            self.parse_value(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
        let raw = self.str(section, key)?;
        parse_numbers(raw).map_err(|e| Self::invalid(section, key, e))
    }

    pub fn usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>, ConfigError> {
        let raw = self.str(section, key)?;
        raw.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|e| Self::invalid(section, key, format!("{t:?}: {e}"))))
            .collect()
    }

    /// Pairs written `a:b`, e.g. `0.5:0, 1.5:1`.
    pub fn pair_list(&self, section: &str, key: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
        let raw = self.str(section, key)?;
        raw.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let (a, b) =
                    t.split_once(':').ok_or_else(|| Self::invalid(section, key, format!("{t:?} is not a:b")))?;
                let num = |x: &str| x.parse::<f64>().map_err(|e| Self::invalid(section, key, format!("{x:?}: {e}")));
                Ok((num(a)?, num(b)?))
            })
            .collect()
    }

    /// `[section] n, N, L`.
    pub fn grid(&self, section: &str) -> Result<Grid, ConfigError> {
        let n = self.usize(section, "n")?;
        let points = self.usize(section, "N")?;
        let l = self.f64(section, "L")?;
        Grid::new(n, points, l).map_err(|e| Self::invalid(section, "N", e))
    }

    /// A region that must fit strictly inside the box of `grid`.
    pub fn region(&self, section: &str, key: &str, grid: &Grid) -> Result<Region, ConfigError> {
        let raw = self.str(section, key)?;
        let region = parse_region(raw).map_err(|e| Self::invalid(section, key, e))?;
        if region.dim() != grid.dim() {
            return Err(Self::invalid(section, key, format!("dimension {} on a {}-d grid", region.dim(), grid.dim())));
        }
        region.validate().map_err(|e| Self::invalid(section, key, e))?;
        let l = grid.half_len();
        let (lo, hi) = region.bounds();
        if lo.iter().chain(&hi).any(|c| c.abs() > l) {
            return Err(Self::invalid(section, key, format!("leaves the box [-{l}, {l}]")));
        }
        Ok(region)
    }
}

fn parse_numbers(raw: &str) -> Result<Vec<f64>, String> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t.parse().map_err(|e| format!("{t:?}: {e}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("{t:?} is not finite"))
            }
        })
        .collect()
}

pub fn parse_region(raw: &str) -> Result<Region, String> {
    let raw = raw.trim();
    let open = raw.find('(').ok_or("expected shape(...)")?;
    if !raw.ends_with(')') {
        return Err("missing closing parenthesis".into());
    }
    let shape = raw[..open].trim();
    let body = &raw[open + 1..raw.len() - 1];
    let (first, second) = match body.split_once(';') {
        Some((a, b)) => (parse_numbers(a)?, Some(parse_numbers(b)?)),
        None => (parse_numbers(body)?, None),
    };
    match (shape, second) {
        ("interval", None) if first.len() == 2 && first[0] < first[1] => Ok(Region::interval(first[0], first[1])),
        ("interval", _) => Err("interval(a, b) needs a < b".into()),
        ("ball", Some(r)) if r.len() == 1 && !first.is_empty() => Ok(Region::Ball { center: first, radius: r[0] }),
        ("ball", _) => Err("ball(c1, ..., cn; r) expected".into()),
        ("box", Some(w)) if w.len() == first.len() && !first.is_empty() => {
            Ok(Region::Box { center: first, half_widths: w })
        }
        ("box", _) => Err("box(c1, ..., cn; w1, ..., wn) expected".into()),
        (other, _) => Err(format!("unknown shape {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_config_parses() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::default_for(e);
            assert_eq!(cfg.experiment, e);
        }
    }

    #[test]
    fn regions() {
        assert_eq!(parse_region("interval(-1, 2)").unwrap(), Region::interval(-1.0, 2.0));
        assert_eq!(parse_region("ball(0.1, 0; 0.3)").unwrap(), Region::Ball { center: vec![0.1, 0.0], radius: 0.3 });
        assert_eq!(
            parse_region("box(0 0; 1 0.5)").unwrap(),
            Region::Box { center: vec![0.0, 0.0], half_widths: vec![1.0, 0.5] }
        );
        for bad in ["interval(2, 1)", "ball(0, 1)", "box(0; 1, 2)", "disc(0; 1)", "ball(0; 1"] {
            assert!(parse_region(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seed_is_required_and_hash_tracks_it() {
        let text = "[experiment]\nname = poincare\n";
        assert_eq!(
            ExperimentConfig::parse(text),
            Err(ConfigError::Missing { section: "experiment".into(), key: "seed".into() })
        );
        let cfg = ExperimentConfig::parse("[experiment]\nname = poincare\nseed = 3\n").unwrap();
        assert_eq!(cfg.output, PathBuf::from("out/poincare"));
        let other = cfg.clone().with_seed(4);
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash(), cfg.clone().with_seed(3).hash());
    }

    #[test]
    fn region_must_fit_the_grid() {
        let cfg = ExperimentConfig::parse("[experiment]\nname = poincare\nseed = 1\n[g]\nn = 1\nN = 64\nL = 2\nk = interval(-1, 3)\nj = ball(0, 0; 1)\n")
            .unwrap();
        let g = cfg.grid("g").unwrap();
        assert!(matches!(cfg.region("g", "k", &g), Err(ConfigError::Invalid { .. })));
        assert!(matches!(cfg.region("g", "j", &g), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn unknown_experiment_lists_names() {
        let err = "warp".parse::<Experiment>().unwrap_err().to_string();
        for e in Experiment::ALL {
            assert!(err.contains(e.name()));
        }
    }
}
