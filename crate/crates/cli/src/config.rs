//! Key-value experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Vector-valued
//! keys hold comma-separated numbers.

use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    path: String,
}

impl Config {
    pub fn parse(text: &str, path: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{path}:{}: expected 'key = value'", lineno + 1))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config {
            values,
            path: path.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Config::parse(&text, &path.display().to_string())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }


    pub fn require_str(&self, key: &str) -> Result<&str, String> {
        self.raw(key)
            .ok_or_else(|| format!("{}: missing required key '{key}'", self.path))
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32, String> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("{}: key '{key}' is not an integer", self.path)),
        }
    }

    pub fn i64_required(&self, key: &str) -> Result<i64, String> {
        self.require_str(key)?
            .parse()
            .map_err(|_| format!("{}: key '{key}' is not an integer", self.path))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, String> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("{}: key '{key}' is not a number", self.path)),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, String> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("{}: key '{key}' is not true/false", self.path)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, String> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("{}: '{key}' has a non-numeric entry", self.path))
                })
                .collect::<Result<Vec<f64>, _>>()
                .map(Some),
        }
    }
}

/// Tolerance multiplier from the environment, for CI machines that need
/// slack on the pass/fail gates. Defaults to 1.
pub fn tolerance_scale() -> f64 {
    std::env::var("MALAB_TOL_SCALE")
        .ok()
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .unwrap_or(1.0)
}
