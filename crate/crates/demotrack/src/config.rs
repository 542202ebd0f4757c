//! `key=value` run configuration shared by the CLI subcommands.
//!
//! Keys prefixed `model.` set the architecture, `world.` the synthetic world
//! and everything else (optionally prefixed `train.`) the training recipe.
//! Unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use demotrack_core::nn::ModelConfig;
use demotrack_core::synthworld::WorldConfig;
use demotrack_core::trainer::TrainConfig;

use crate::error::{format_err, read_text, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub world: WorldConfig,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if let Some(k) = key.strip_prefix("model.") {
            self.model.set(k, value)?;
        } else if let Some(k) = key.strip_prefix("world.") {
            self.world.set(k, value)?;
        } else {
            self.train
                .set(key.strip_prefix("train.").unwrap_or(key), value.trim())?;
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(path, format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = read_text(path)?;
        self.apply_text(&text, path)
    }

    /// `key=value` overrides as given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.world.validate()?;
        if self.model.channels != self.world.channels {
            return Err(Error::Invalid(format!(
                "model.channels={} but world.channels={}",
                self.model.channels, self.world.channels
            )));
        }
        Ok(())
    }

    /// Fully resolved configuration, every key prefixed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.train.entries() {
            let _ = writeln!(s, "train.{k}={v}");
        }
        for line in self.model.to_text().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        for (k, v) in self.world.entries() {
            let _ = writeln!(s, "world.{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text(
            "workers=4\nmodel.recurrent=32\nworld.max_len=40\n# note\ntrain.tau=0.3\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(
            (c.train.workers, c.model.recurrent, c.world.max_len),
            (4, 32, 40)
        );
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut c = RunConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("model.bogus", "1").is_err());
        assert!(c.set("world.bogus", "1").is_err());
        assert!(c.apply_overrides(&["workers".into()]).is_err());
    }
}
