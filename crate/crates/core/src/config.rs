//! Run configuration: `key = value` lines or a single JSON object.
//!
//! ```text
//! # comments start with '#'
//! beta = 5e-4
//! gamma = 0.1
//! scenario = rational
//! format = csv,json
//! sweep.beta = 2.5e-4,5e-4,1e-3
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{ScenarioSet, SweepSpec};
use crate::epidemic::EpidemicParams;
use crate::market::{Scenario, SupplyCurve};
use crate::numerics::Grid;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },

    #[error("invariant violated: `{field}` must be {bound}, got {value}")]
    Invariant {
        field: String,
        bound: String,
        value: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSelector {
    Myopic,
    Depression,
    Rational,
    All,
}

impl ScenarioSelector {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "myopic" => Self::Myopic,
            "depression" => Self::Depression,
            "rational" => Self::Rational,
            "all" => Self::All,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Myopic => "myopic",
            Self::Depression => "depression",
            Self::Rational => "rational",
            Self::All => "all",
        }
    }

    pub fn scenario_set(&self) -> ScenarioSet {
        match self {
            Self::Myopic => ScenarioSet::only(Scenario::Myopic),
            Self::Depression => ScenarioSet::only(Scenario::Depression),
            Self::Rational => ScenarioSet::only(Scenario::Rational),
            Self::All => ScenarioSet::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub params: EpidemicParams,
    pub curve: SupplyCurve,
    pub t_end: f64,
    pub dt: f64,
    pub scenario: ScenarioSelector,
    pub out_dir: PathBuf,
    /// Sorted, without duplicates, never empty.
    pub formats: Vec<OutputFormat>,
    pub sweep: SweepSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            params: EpidemicParams::default(),
            curve: SupplyCurve::default(),
            t_end: 300.0,
            dt: 1e-2,
            scenario: ScenarioSelector::Myopic,
            out_dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv],
            sweep: SweepSpec::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "beta",
    "gamma",
    "n1",
    "n2",
    "n3",
    "endowment",
    "p0",
    "kappa",
    "t_end",
    "dt",
    "scenario",
    "out_dir",
    "format",
];
const SWEEP_KEYS: &[&str] = &["beta", "gamma", "n1", "kappa"];

/// A raw value before it is assigned to a field.
enum Raw<'a> {
    Text(&'a str),
    Number(f64),
    List(Vec<f64>),
    Strings(Vec<String>),
}

impl ScenarioConfig {
    pub fn grid(&self) -> crate::error::Result<Grid> {
        Grid::horizon(self.t_end, self.dt)
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        let positive = [
            ("beta", p.beta),
            ("gamma", p.gamma),
            ("n1", p.n1),
            ("endowment", p.endowment),
            ("p0", self.curve.p0),
            ("kappa", self.curve.kappa),
            ("t_end", self.t_end),
            ("dt", self.dt),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invariant(field, "finite and > 0", v));
            }
        }
        for (field, v) in [("n2", p.n2), ("n3", p.n3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invariant(field, "finite and >= 0", v));
            }
        }
        if Grid::horizon(self.t_end, self.dt).is_err() {
            return Err(invariant("dt", "a divisor of t_end", self.dt));
        }
        if self.formats.is_empty() {
            return Err(ConfigError::Invariant {
                field: "format".into(),
                bound: "non-empty".into(),
                value: "[]".into(),
            });
        }
        for (name, values) in self.sweep_lists() {
            for &v in values {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invariant(&format!("sweep.{name}"), "finite and > 0", v));
                }
            }
        }
        Ok(())
    }

    fn sweep_lists(&self) -> [(&'static str, &Vec<f64>); 4] {
        [
            ("beta", &self.sweep.beta),
            ("gamma", &self.sweep.gamma),
            ("n1", &self.sweep.n1),
            ("kappa", &self.sweep.kappa),
        ]
    }

    /// `key = value` text that parses back to an identical configuration.
    pub fn to_config_string(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        for (k, v) in [
            ("beta", p.beta),
            ("gamma", p.gamma),
            ("n1", p.n1),
            ("n2", p.n2),
            ("n3", p.n3),
            ("endowment", p.endowment),
            ("p0", self.curve.p0),
            ("kappa", self.curve.kappa),
            ("t_end", self.t_end),
            ("dt", self.dt),
        ] {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "scenario = {}", self.scenario.as_str());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let formats: Vec<&str> = self.formats.iter().map(|f| f.extension()).collect();
        let _ = writeln!(s, "format = {}", formats.join(","));
        for (name, values) in self.sweep_lists() {
            if !values.is_empty() {
                let list: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "sweep.{name} = {}", list.join(","));
            }
        }
        s
    }

    fn assign(
        &mut self,
        key: &str,
        raw: Raw<'_>,
        seen: &mut Vec<String>,
    ) -> Result<(), AssignError> {
        if seen.iter().any(|k| k == key) {
            return Err(AssignError::Message(format!("duplicate key `{key}`")));
        }
        if let Some(name) = key.strip_prefix("sweep.") {
            if !SWEEP_KEYS.contains(&name) {
                return Err(AssignError::Unknown);
            }
            let values = match raw {
                Raw::List(v) => v,
                Raw::Number(v) => vec![v],
                Raw::Text(t) => parse_list(t)?,
                Raw::Strings(_) => return Err(AssignError::Message("expected numbers".into())),
            };
            match name {
                "beta" => self.sweep.beta = values,
                "gamma" => self.sweep.gamma = values,
                "n1" => self.sweep.n1 = values,
                _ => self.sweep.kappa = values,
            }
            seen.push(key.to_string());
            return Ok(());
        }
        if !KEYS.contains(&key) {
            return Err(AssignError::Unknown);
        }
        match key {
            "scenario" => {
                let Raw::Text(t) = raw else {
                    return Err(AssignError::Message("expected a scenario name".into()));
                };
                self.scenario = ScenarioSelector::parse(t).ok_or_else(|| {
                    AssignError::Message(format!(
                        "unknown scenario `{t}` (myopic|depression|rational|all)"
                    ))
                })?;
            }
            "out_dir" => {
                let Raw::Text(t) = raw else {
                    return Err(AssignError::Message("expected a path".into()));
                };
                if t.is_empty() {
                    return Err(AssignError::Message("empty path".into()));
                }
                self.out_dir = PathBuf::from(t);
            }
            "format" => {
                let names: Vec<String> = match raw {
                    Raw::Text(t) => t.split(',').map(|s| s.trim().to_string()).collect(),
                    Raw::Strings(v) => v,
                    _ => return Err(AssignError::Message("expected csv and/or json".into())),
                };
                let mut formats = names
                    .iter()
                    .map(|n| {
                        OutputFormat::parse(n).ok_or_else(|| {
                            AssignError::Message(format!("unknown format `{n}` (csv|json)"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                formats.sort();
                formats.dedup();
                self.formats = formats;
            }
            _ => {
                let v = match raw {
                    Raw::Number(v) => v,
                    Raw::Text(t) => parse_number(t)?,
                    _ => return Err(AssignError::Message("expected a number".into())),
                };
                let p = &mut self.params;
                match key {
                    "beta" => p.beta = v,
                    "gamma" => p.gamma = v,
                    "n1" => p.n1 = v,
                    "n2" => p.n2 = v,
                    "n3" => p.n3 = v,
                    "endowment" => p.endowment = v,
                    "p0" => self.curve.p0 = v,
                    "kappa" => self.curve.kappa = v,
                    "t_end" => self.t_end = v,
                    _ => self.dt = v,
                }
            }
        }
        seen.push(key.to_string());
        Ok(())
    }
}

enum AssignError {
    Unknown,
    Message(String),
}

fn invariant(field: &str, bound: &str, v: f64) -> ConfigError {
    ConfigError::Invariant {
        field: field.to_string(),
        bound: bound.to_string(),
        value: v.to_string(),
    }
}

fn parse_number(t: &str) -> Result<f64, AssignError> {
    t.parse::<f64>()
        .map_err(|_| AssignError::Message(format!("`{t}` is not a number")))
}

fn parse_list(t: &str) -> Result<Vec<f64>, AssignError> {
    t.split(',').map(|s| parse_number(s.trim())).collect()
}

/// Parses and validates a configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    if text.trim_start().starts_with('{') {
        parse_json(text, &mut cfg)?;
    } else {
        parse_lines(text, &mut cfg)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_lines(text: &str, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
    let mut seen = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let Some(eq) = content.find('=') else {
            let column = content.len() - content.trim_start().len() + 1;
            return Err(ConfigError::Syntax {
                line: line_no,
                column,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        let after = &content[eq + 1..];
        let value = after.trim();
        let value_col = eq + 2 + (after.len() - after.trim_start().len());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                column: 1,
                message: "missing key".into(),
            });
        }
        cfg.assign(key, Raw::Text(value), &mut seen)
            .map_err(|e| match e {
                AssignError::Unknown => ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: line_no,
                },
                AssignError::Message(message) => ConfigError::Syntax {
                    line: line_no,
                    column: value_col,
                    message,
                },
            })?;
    }
    Ok(())
}

fn parse_json(text: &str, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
    let doc: serde_json::Map<String, Value> =
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut seen = Vec::new();
    let mut entries: Vec<(String, Value)> = Vec::new();
    for (key, value) in doc {
        if key == "sweep" {
            let Value::Object(inner) = value else {
                return Err(ConfigError::InvalidValue {
                    key,
                    message: "expected an object of value lists".into(),
                });
            };
            entries.extend(inner.into_iter().map(|(k, v)| (format!("sweep.{k}"), v)));
        } else {
            entries.push((key, value));
        }
    }
    for (key, value) in entries {
        let invalid = |message: String| ConfigError::InvalidValue {
            key: key.clone(),
            message,
        };
        let raw = match &value {
            Value::String(s) => Raw::Text(s.as_str()),
            Value::Number(n) => Raw::Number(
                n.as_f64()
                    .ok_or_else(|| invalid("number out of range".into()))?,
            ),
            Value::Array(items) if items.iter().all(Value::is_number) => {
                Raw::List(items.iter().filter_map(Value::as_f64).collect())
            }
            Value::Array(items) if items.iter().all(Value::is_string) => Raw::Strings(
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect(),
            ),
            other => return Err(invalid(format!("unsupported value {other}"))),
        };
        cfg.assign(&key, raw, &mut seen).map_err(|e| match e {
            AssignError::Unknown => ConfigError::UnknownKey {
                key: key.clone(),
                line: 1,
            },
            AssignError::Message(m) => invalid(m),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ScenarioConfig::default());
        assert_eq!(
            parse_config("# only a comment\n\n").unwrap(),
            ScenarioConfig::default()
        );
        assert_eq!(parse_config("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn negative_gamma_names_the_field() {
        match parse_config("gamma = -0.1").unwrap_err() {
            ConfigError::Invariant { field, bound, .. } => {
                assert_eq!(field, "gamma");
                assert!(bound.contains("> 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_override() {
        let cfg = parse_config("beta = 1e-3").unwrap();
        assert_eq!(cfg.params.beta, 1e-3);
        assert_eq!(
            cfg,
            ScenarioConfig {
                params: EpidemicParams {
                    beta: 1e-3,
                    ..Default::default()
                },
                ..Default::default()
            }
        );
    }

    #[test]
    fn errors_carry_positions() {
        match parse_config("beta = 1e-3\n  oops\n").unwrap_err() {
            ConfigError::Syntax { line, column, .. } => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config("gamma =  abc").unwrap_err() {
            ConfigError::Syntax { line, column, .. } => assert_eq!((line, column), (1, 10)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config("delta = 1").unwrap_err(),
            ConfigError::UnknownKey { line: 1, .. }
        ));
        assert!(matches!(
            parse_config("sweep.p0 = 1,2").unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
        assert!(matches!(
            parse_config("{\"beta\": 1e-3,\n \"dt\": }").unwrap_err(),
            ConfigError::Syntax { line: 2, .. }
        ));
        assert!(matches!(
            parse_config("{\"bogus\": 1}").unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
    }

    #[test]
    fn json_and_lines_agree() {
        let lines = "beta = 0.001\nscenario = rational\nformat = json,csv\nsweep.kappa = 5,10,20\n";
        let json = r#"{"beta": 0.001, "scenario": "rational", "format": ["csv", "json"],
                       "sweep": {"kappa": [5, 10, 20]}}"#;
        let a = parse_config(lines).unwrap();
        assert_eq!(a, parse_config(json).unwrap());
        assert_eq!(a.formats, vec![OutputFormat::Csv, OutputFormat::Json]);
        assert_eq!(a.sweep.kappa, vec![5.0, 10.0, 20.0]);
    }

    #[test]
    fn grid_must_divide_horizon() {
        assert!(matches!(
            parse_config("t_end = 1\ndt = 0.3").unwrap_err(),
            ConfigError::Invariant { field, .. } if field == "dt"
        ));
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = parse_config(
            "beta = 7.5e-4\nn3 = 2\nscenario = all\nformat = csv,json\nsweep.gamma = 0.05,0.1",
        )
        .unwrap();
        assert_eq!(parse_config(&cfg.to_config_string()).unwrap(), cfg);
    }
}
