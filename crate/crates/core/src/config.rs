//! Line-oriented `key = value` configuration files.
//!
//! `#` starts a comment, blank lines are ignored and keys are unique.
//! Lists are comma-separated.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::system::{BoxSet, Region};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.require(key)?)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| parse_f64(key, v))
    }

    pub fn positive_f64(&self, key: &str) -> Result<f64> {
        positive(key, self.f64(key)?)
    }

    pub fn positive_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        positive(key, self.f64_or(key, default)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        parse_usize(key, self.require(key)?)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| parse_usize(key, v))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key).map_or(Ok(default), |v| {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: `{v}` is not an integer")))
        })
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("`{key}`: `{v}` is not a boolean"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?.split(',').map(|s| parse_f64(key, s.trim())).collect()
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        if self.get(key).is_some() {
            self.f64_list(key)
        } else {
            Ok(default.to_vec())
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.require(key)?.split(',').map(|s| parse_usize(key, s.trim())).collect()
    }

    /// `<prefix>.lo` / `<prefix>.hi` as a box.
    pub fn boxset(&self, prefix: &str) -> Result<BoxSet> {
        let lo = self.f64_list(&format!("{prefix}.lo"))?;
        let hi = self.f64_list(&format!("{prefix}.hi"))?;
        BoxSet::new(lo, hi).map_err(|e| Error::Config(format!("{prefix}: {e}")))
    }

    /// `<prefix>.lo` / `<prefix>.hi` / `<prefix>.cell` as a gridded region.
    pub fn region(&self, prefix: &str) -> Result<Region> {
        let bounds = self.boxset(prefix)?;
        let cell = self.positive_f64(&format!("{prefix}.cell"))?;
        Region::new(bounds, cell).map_err(|e| Error::Config(format!("{prefix}: {e}")))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}`: `{v}` is not a finite number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: `{v}` is not a nonnegative integer")))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    const SCALAR: &str = "
        # x' = x + u
        dim = 1
        inputs = 1
        field.0.1 = x1
        field.1.1 = 1
        u.lo = -1
        u.hi = 1
        q.lo = -2
        q.hi = 2
        q.cell = 0.05
    ";

    #[test]
    fn parses_system_and_region() {
        let cfg = Config::parse(SCALAR).unwrap();
        let s = SystemSpec::from_config(&cfg).unwrap();
        assert_eq!((s.dim(), s.inputs()), (1, 1));
        let mut f = [0.0];
        s.vector_field(&[2.0], &[1.0], &mut f).unwrap();
        assert_eq!(f[0], 3.0);
        assert_eq!(cfg.region("q").unwrap().cell_count(), 80);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("dim").is_err());
        assert!(Config::parse("a = 1\na = 2").is_err());
        let cfg = Config::parse("dim = 1\nfield.0.2 = x1").unwrap();
        assert!(SystemSpec::from_config(&cfg).is_err());
        let cfg = Config::parse("dim = 1\nfield.0.1 = x1 +").unwrap();
        assert!(matches!(SystemSpec::from_config(&cfg), Err(Error::Config(_))));
        let cfg = Config::parse("x = -3").unwrap();
        assert!(cfg.positive_f64("x").is_err());
        assert!(cfg.usize("x").is_err());
    }
}
