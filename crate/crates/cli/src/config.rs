//! Plain-text run configuration: `key = value` lines with `#` comments.
//!
//! Values are validated against the key table when they enter a
//! [`Settings`]; lookups then only convert. Later sources override earlier
//! ones, so callers merge the file first and the command-line flags last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deepkriging::covariance::CovFamily;
use deepkriging::Kernel;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Real,
    Bool,
    Text,
    IntList,
    TextList,
}

/// Every recognised key with its value type.
const KEYS: &[(&str, Kind)] = &[
    ("seed", Kind::Int),
    ("replicates", Kind::Int),
    ("folds", Kind::Int),
    ("n", Kind::Int),
    ("train_size", Kind::Int),
    ("epochs", Kind::Int),
    ("batch_size", Kind::Int),
    ("hidden_layers", Kind::Int),
    ("width", Kind::Int),
    ("dropout", Kind::Real),
    ("batchnorm", Kind::Bool),
    ("learning_rate", Kind::Real),
    ("levels", Kind::Int),
    ("kernel", Kind::Text),
    ("covariance", Kind::Text),
    ("methods", Kind::TextList),
    ("ensemble", Kind::Int),
    ("cuts", Kind::Int),
    ("threads", Kind::Int),
    ("output", Kind::Text),
    ("probe_values", Kind::Int),
    ("design", Kind::Text),
    ("sizes", Kind::IntList),
    ("threshold", Kind::Real),
    ("mle_iterations", Kind::Int),
    ("fixture", Kind::Text),
    ("grid", Kind::Text),
];

pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _)| *k)
}

fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .map(|(k, _)| (*k, strsim::damerau_levenshtein(key, k)))
        .min_by_key(|&(_, d)| d)
        .map(|(k, _)| k)
        .expect("key table is not empty")
}

fn kind_of(key: &str) -> Result<Kind> {
    KEYS.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, kind)| *kind)
        .ok_or_else(|| CliError::config(format!("unknown key `{key}` (did you mean `{}`?)", nearest_key(key))))
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn list_items(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn check_type(key: &str, kind: Kind, value: &str) -> Result<()> {
    let ok = match kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Real => value.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::Bool => parse_bool(value).is_some(),
        Kind::Text => !value.is_empty(),
        Kind::IntList => list_items(value).all(|s| s.parse::<u64>().is_ok()) && list_items(value).next().is_some(),
        Kind::TextList => list_items(value).next().is_some(),
    };
    if ok {
        Ok(())
    } else {
        let want = match kind {
            Kind::Int => "a nonnegative integer",
            Kind::Real => "a finite number",
            Kind::Bool => "true or false",
            Kind::Text => "a non-empty value",
            Kind::IntList => "a comma-separated list of integers",
            Kind::TextList => "a comma-separated list",
        };
        Err(CliError::config(format!("key `{key}` expects {want}, got `{value}`")))
    }
}

/// Validated key-value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set `key` after checking the name and the value type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        check_type(key, kind_of(key)?, value)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parse configuration text; errors name the 1-based line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            s.set(k, v).map_err(|e| match e {
                CliError::Config(msg) => CliError::config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Copy of `self` with every entry of `other` taking precedence.
    pub fn overridden_by(&self, other: &Settings) -> Settings {
        let mut values = self.values.clone();
        values.extend(other.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        Settings { values }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.raw(key).map(|v| v.parse().expect("validated integer"))
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.raw(key).map(|v| v.parse().expect("validated integer"))
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.raw(key).map(|v| v.parse().expect("validated number"))
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.raw(key).map(|v| parse_bool(v).expect("validated bool"))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| list_items(v).map(String::from).collect())
    }

    pub fn usize_list(&self, key: &str) -> Option<Vec<usize>> {
        self.raw(key).map(|v| list_items(v).map(|s| s.parse().expect("validated integer")).collect())
    }

    pub fn kernel(&self) -> Result<Option<Kernel>> {
        match self.raw("kernel") {
            None => Ok(None),
            Some("wendland") => Ok(Some(Kernel::Wendland)),
            Some("gaussian") => Ok(Some(Kernel::Gaussian)),
            Some(other) => Err(CliError::config(format!("kernel must be wendland or gaussian, got `{other}`"))),
        }
    }

    pub fn covariance(&self) -> Result<Option<CovFamily>> {
        self.raw("covariance")
            .map(|v| v.parse::<CovFamily>().map_err(|_| CliError::config(format!("covariance must be exponential or matern15, got `{v}`"))))
            .transpose()
    }
}
