//! Run configuration: a flat `key = value` file (`#` starts a comment),
//! with command-line overrides applied on top.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{Constraint, ModelConfig, Variant};
use crate::train::{Optimizer, TrainConfig};

pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "negatives",
    "margin",
    "alpha",
    "sections",
    "seed",
    "optimizer",
    "variant",
    "entity_dim",
    "relation_dim",
    "constraint",
    "constraint.<relation>",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{key}`{}; valid keys: {}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default(), KEYS.join(", "))]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub entity_dim: usize,
    pub relation_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            entity_dim: 64,
            relation_dim: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "negatives" => self.train.negatives = parse(key, value)?,
            "margin" => {
                self.train.margin = parse(key, value)?;
                self.model.margin = self.train.margin;
            }
            "alpha" => {
                self.train.alpha = parse(key, value)?;
                self.model.alpha = self.train.alpha;
            }
            "sections" => self.model.sections = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "optimizer" => self.train.optimizer = parse::<Optimizer>(key, value)?,
            "variant" => self.model.variant = parse::<Variant>(key, value)?,
            "entity_dim" => self.entity_dim = parse(key, value)?,
            "relation_dim" => self.relation_dim = parse(key, value)?,
            "constraint" => self.model.constraint = parse::<Constraint>(key, value)?,
            _ => match key.strip_prefix("constraint.") {
                Some(rel) if !rel.is_empty() => {
                    self.model
                        .relation_constraints
                        .insert(rel.to_string(), parse::<Constraint>(key, value)?);
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        key: key.to_string(),
                        suggestion: crate::query::suggest(key, KEYS.iter().copied()),
                    })
                }
            },
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Every resolved setting, one `key = value` per line, in a form
    /// [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "epochs = {}", t.epochs);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(out, "negatives = {}", t.negatives);
        let _ = writeln!(out, "margin = {}", t.margin);
        let _ = writeln!(out, "alpha = {}", t.alpha);
        let _ = writeln!(out, "sections = {}", m.sections);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "optimizer = {}", t.optimizer);
        let _ = writeln!(out, "variant = {}", m.variant);
        let _ = writeln!(out, "entity_dim = {}", self.entity_dim);
        let _ = writeln!(out, "relation_dim = {}", self.relation_dim);
        let _ = writeln!(out, "constraint = {}", m.constraint);
        for (r, c) in &m.relation_constraints {
            let _ = writeln!(out, "constraint.{r} = {c}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train.epochs, 250);
        assert_eq!(c.train.batch_size, 512);
        assert_eq!(c.train.learning_rate, 0.1);
        assert_eq!(c.train.optimizer, Optimizer::Adagrad);
        assert_eq!(c.model.sections, 1);
        assert_eq!((c.entity_dim, c.relation_dim), (64, 64));
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# comment\nepochs = 10\nvariant=shvt\nalpha = 0.1 # trailing\nconstraint.likes = orthogonal\n\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.train.epochs, 10);
        assert_eq!(c.model.variant, Variant::ShvT);
        assert_eq!((c.train.alpha, c.model.alpha), (0.1, 0.1));
        assert_eq!(c.model.constraint_for("likes"), Constraint::Orthogonal);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::from_text("epoch = 3").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("did you mean `epochs`"), "{msg}");
        assert!(msg.contains("learning_rate"));
        assert!(matches!(
            RunConfig::from_text("epochs"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            RunConfig::from_text("epochs = ten"),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut c = RunConfig::default();
        c.apply_overrides(["epochs=3", "epochs = 4", "optimizer=sgd"])
            .unwrap();
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.train.optimizer, Optimizer::Sgd);
        assert!(c.apply_overrides(["bogus=1"]).is_err());
    }
}
