//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{IqtError, Result};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "IQT_CONFIG";

pub const KNOWN_KEYS: &[&str] = &[
    "preset",
    "backbone",
    "seed",
    "patch_size",
    "batch_size",
    "lr0",
    "total_steps",
    "layers",
    "heads",
    "d_model",
    "d_feat",
    "d_head",
    "stages",
    "stage_channels",
    "stem_channels",
    "augment",
    "routing",
    "diff_level",
    "log_every",
    "manifest",
    "eval_manifest",
    "out_dir",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| IqtError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            IqtError::Config(msg) => IqtError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| IqtError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| IqtError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets a value, replacing any earlier one.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(IqtError::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `overrides` on top of `self`.
    pub fn merged(mut self, overrides: &RunConfig) -> Self {
        for (k, v) in &overrides.values {
            self.values.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| IqtError::Config(format!("`{key}` has invalid value `{v}`"))),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get_str(key) {
            None => Ok(None),
            Some("true" | "1" | "yes" | "on") => Ok(Some(true)),
            Some("false" | "0" | "no" | "off") => Ok(Some(false)),
            Some(v) => Err(IqtError::Config(format!("`{key}` must be a boolean, got `{v}`"))),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
