//! Plain-text key-value configuration and run manifests.
//!
//! Files hold `key = value` lines (# comments and blank lines allowed).
//! Every command resolves defaults <- config file <- CLI flags <- --set
//! overrides into one map and writes it back out as `run-manifest`;
//! rerunning a command with `--config run-manifest` reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn from_defaults(pairs: &[(&str, &str)]) -> Self {
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            values.insert(k.to_string(), v.to_string());
        }
        Self { values }
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`, got `{raw}`", path.display(), i + 1);
            };
            self.values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for pair in overrides {
            let Some((key, value)) = pair.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{pair}`");
            };
            self.set(key.trim(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .with_context(|| format!("missing required config key `{key}`"))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.require(key)?
            .parse()
            .with_context(|| format!("config key `{key}` is not an integer"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse()
            .with_context(|| format!("config key `{key}` is not an integer"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .parse()
            .with_context(|| format!("config key `{key}` is not a number"))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => bail!("config key `{key}` must be true/false, got `{other}`"),
        }
    }

    pub fn get_path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    pub fn get_list_f64(&self, key: &str) -> Result<Vec<f64>> {
        split_list(self.require(key)?)
            .map(|v| v.parse().with_context(|| format!("bad number in `{key}`")))
            .collect()
    }

    pub fn get_list_usize(&self, key: &str) -> Result<Vec<usize>> {
        split_list(self.require(key)?)
            .map(|v| v.parse().with_context(|| format!("bad integer in `{key}`")))
            .collect()
    }

    pub fn get_list_u32(&self, key: &str) -> Result<Vec<u32>> {
        split_list(self.require(key)?)
            .map(|v| v.parse().with_context(|| format!("bad integer in `{key}`")))
            .collect()
    }

    /// Canonical manifest text: sorted keys, one `key = value` per line.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("run-manifest");
        fs::write(&path, self.manifest())
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}
