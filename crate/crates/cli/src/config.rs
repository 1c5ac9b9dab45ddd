//! Run configuration: TOML text, `--set` overrides and the seed variable.
//!
//! Keys under `[run]` and keys outside any section are top-level settings;
//! the other sections hold per-command options.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Overrides `master_seed` when set.
pub const SEED_ENV: &str = "QNNLV_SEED";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses config text and lifts the `[run]` section to the top level.
pub fn parse_config_text(text: &str) -> Result<toml::Table, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            msg: e.message().trim().to_string(),
        }
    })?;
    if let Some(run) = table.remove("run") {
        let toml::Value::Table(run) = run else {
            return Err(ConfigError::Invalid("`run` must be a section".into()));
        };
        for (k, v) in run {
            if table.contains_key(&k) {
                return Err(ConfigError::Invalid(format!("`{k}` set both in [run] and at top level")));
            }
            table.insert(k, v);
        }
    }
    Ok(table)
}

/// Value text of an override: a TOML value when it parses as one, otherwise
/// a bare string.
fn override_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `key=value` or `section.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let mut path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.first() == Some(&"run") && path.len() > 1 {
        path.remove(0);
    }
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let (last, sections) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{s}` is not a section")))?;
    }
    cur.insert(last.to_string(), override_value(raw));
    Ok(())
}

/// Target of the quadratic loss: a number or `O_min`, `O_min - x`, `O_min + x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Value(f64),
    Expr(String),
}

impl Target {
    pub fn resolve(&self, o_min: f64) -> Result<f64, ConfigError> {
        let bad = || ConfigError::Invalid(format!("O0 {self:?}: expected a number or O_min[+-x]"));
        match self {
            Target::Value(v) => Ok(*v),
            Target::Expr(s) => {
                let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
                let rest = s.strip_prefix("O_min").ok_or_else(bad)?;
                if rest.is_empty() {
                    return Ok(o_min);
                }
                let (sign, num) = match rest.split_at(1) {
                    ("+", n) => (1.0, n),
                    ("-", n) => (-1.0, n),
                    _ => return Err(bad()),
                };
                let x: f64 = num.parse().map_err(|_| bad())?;
                if !x.is_finite() {
                    return Err(bad());
                }
                Ok(o_min + sign * x)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Parameter count; defaults to the ansatz's.
    #[serde(rename = "L")]
    pub l: Option<usize>,
    /// Targets for the late-time curves; defaults to `O0` alone.
    pub o0_sweep: Option<Vec<f64>>,
    /// Lotka-Volterra constants; all three enable the LV curve.
    pub lambda: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianSection {
    /// Absolute targets; take precedence over `offsets`.
    pub targets: Option<Vec<f64>>,
    /// Offsets from `O_min`.
    pub offsets: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramepotSection {
    /// `haar` or `restricted_haar`.
    pub ensemble: String,
    pub d: usize,
    pub samples: usize,
    pub k: u32,
}

impl Default for FramepotSection {
    fn default() -> Self {
        FramepotSection {
            ensemble: "haar".into(),
            d: 4,
            samples: 500,
            k: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutocorrSection {
    /// Directory of `traj_<i>.csv` files with JSON sidecars.
    pub input: Option<PathBuf>,
    pub quantities: Vec<String>,
    pub t0: usize,
    /// Lags; defaults to a log-spaced grid over the recorded range.
    pub taus: Option<Vec<usize>>,
}

impl Default for AutocorrSection {
    fn default() -> Self {
        AutocorrSection {
            input: None,
            quantities: vec!["epsilon".into(), "K".into(), "mu".into()],
            t0: 0,
            taus: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitNoiseSection {
    /// Noiseless run: trajectory CSV or two-column `t,value` CSV.
    pub ideal: Option<PathBuf>,
    /// Noisy measurements in either format.
    pub observed: Option<PathBuf>,
    #[serde(rename = "O0")]
    pub o0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Trajectory CSVs; `input` adds every `traj_<i>.csv` of a directory.
    pub trajectories: Vec<PathBuf>,
    pub input: Option<PathBuf>,
    /// `theory.json` to compare against.
    pub theory: Option<PathBuf>,
    /// Theory quantity tags to compare; all matching tags when absent.
    pub quantities: Option<Vec<String>>,
    pub rel_tol: f64,
    pub slope_tol: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            trajectories: Vec::new(),
            input: None,
            theory: None,
            quantities: None,
            rel_tol: 0.1,
            slope_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Informational; the command line decides what runs.
    pub command: Option<String>,
    pub observable: Option<String>,
    pub ansatz: Option<String>,
    pub n: Option<usize>,
    /// `quadratic` or `linear`.
    pub loss: String,
    #[serde(rename = "O0")]
    pub o0: Option<Target>,
    pub eta: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub mu_stride: usize,
    pub grad_tol: Option<f64>,
    pub trajectories: usize,
    #[serde(with = "seed_serde")]
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub theory: TheorySection,
    pub hessian: HessianSection,
    pub framepot: FramepotSection,
    pub autocorr: AutocorrSection,
    pub fit_noise: FitNoiseSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            observable: None,
            ansatz: None,
            n: None,
            loss: "quadratic".into(),
            o0: None,
            eta: 1e-3,
            steps: 1000,
            record_stride: 1,
            mu_stride: 10,
            grad_tol: None,
            trajectories: 2,
            master_seed: 0,
            out_dir: PathBuf::from("out"),
            theory: TheorySection::default(),
            hessian: HessianSection::default(),
            framepot: FramepotSection::default(),
            autocorr: AutocorrSection::default(),
            fit_noise: FitNoiseSection::default(),
            compare: CompareSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        RunConfig::deserialize(toml::Value::Table(normalize_seed(table)?)).map_err(|e| ConfigError::Invalid(e.message().trim().to_string()))
    }

    /// Merges file text, then the seed variable, then `--set` overrides.
    pub fn load(text: Option<&str>, overrides: &[String], env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let mut table = match text {
            Some(t) => parse_config_text(t)?,
            None => toml::Table::new(),
        };
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={s:?} is not a 64-bit unsigned integer")))?;
            // TOML integers are signed; store the bit pattern's value as text.
            table.insert("master_seed".into(), seed_value(seed));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = RunConfig::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if self.record_stride == 0 || self.mu_stride == 0 {
            return bad("record_stride and mu_stride must be >= 1".into());
        }
        if self.loss != "quadratic" && self.loss != "linear" {
            return bad(format!("loss = {:?}: expected quadratic or linear", self.loss));
        }
        if let Some(g) = self.grad_tol {
            if !(g > 0.0) {
                return bad("grad_tol must be positive".into());
            }
        }
        Ok(())
    }

    /// TOML text of the effective configuration.
    pub fn resolved_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn seed_value(seed: u64) -> toml::Value {
    match i64::try_from(seed) {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => toml::Value::String(seed.to_string()),
    }
}

/// Accepts `master_seed` as a non-negative integer or a decimal string so
/// the full `u64` range survives a round trip through TOML.
fn normalize_seed(mut table: toml::Table) -> Result<toml::Table, ConfigError> {
    if let Some(v) = table.get("master_seed") {
        let seed = match v {
            toml::Value::Integer(i) if *i >= 0 => *i as u64,
            toml::Value::String(s) => s
                .parse::<u64>()
                .map_err(|_| ConfigError::Invalid(format!("master_seed {s:?} is not a 64-bit unsigned integer")))?,
            other => return Err(ConfigError::Invalid(format!("master_seed {other} is not a 64-bit unsigned integer"))),
        };
        table.insert("master_seed".into(), toml::Value::String(seed.to_string()));
    }
    Ok(table)
}

mod seed_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_section_and_top_level_merge() {
        let t = parse_config_text("eta = 0.01\n[run]\nsteps = 5\n[theory]\nL = 8\n").unwrap();
        let c = RunConfig::from_table(t).unwrap();
        assert_eq!((c.eta, c.steps, c.theory.l), (0.01, 5, Some(8)));
        assert!(parse_config_text("steps = 1\n[run]\nsteps = 2\n").is_err());
    }

    #[test]
    fn parse_errors_have_positions() {
        match parse_config_text("eta = 0.1\nsteps = = 3\n") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_and_seed_precedence() {
        let cfg = RunConfig::load(
            Some("master_seed = 1\neta = 0.5\n"),
            &["eta=0.25".into(), "theory.L=16".into(), "observable=xxz(4,2)".into()],
            Some("7"),
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.eta, 0.25);
        assert_eq!(cfg.theory.l, Some(16));
        assert_eq!(cfg.observable.as_deref(), Some("xxz(4,2)"));
        let cfg = RunConfig::load(None, &["master_seed=3".into()], Some("7")).unwrap();
        assert_eq!(cfg.master_seed, 3);
        assert!(RunConfig::load(None, &["eta".into()], None).is_err());
        assert!(RunConfig::load(None, &["bogus=1".into()], None).is_err());
        assert!(RunConfig::load(None, &[], Some("-1")).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::load(
            None,
            &[format!("master_seed=\"{}\"", u64::MAX), "O0=\"O_min - 4\"".into(), "hessian.offsets=[0.5, -1]".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.master_seed, u64::MAX);
        let back = RunConfig::load(Some(&cfg.resolved_text()), &[], None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn target_expressions() {
        assert_eq!(Target::Value(-3.0).resolve(-6.0).unwrap(), -3.0);
        assert_eq!(Target::Expr("O_min".into()).resolve(-6.0).unwrap(), -6.0);
        assert_eq!(Target::Expr("O_min - 4".into()).resolve(-6.0).unwrap(), -10.0);
        assert_eq!(Target::Expr("O_min+0.5".into()).resolve(-6.0).unwrap(), -5.5);
        assert!(Target::Expr("Omin".into()).resolve(0.0).is_err());
        assert!(Target::Expr("O_min*2".into()).resolve(0.0).is_err());
    }
}
