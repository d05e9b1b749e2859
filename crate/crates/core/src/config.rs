//! Model configuration files and hyperparameter grids.
//!
//! Both are TOML with one table per model. Keys use the published
//! hyperparameter names, e.g.
//!
//! ```toml
//! [olvf]
//! C = 0.01
//! B = 1.0
//!
//! [dynfo]
//! alpha = 0.1
//! M = 500
//! ```
//!
//! A grid file has the same shape with a list of values per key; cells are
//! enumerated with the first listed key outermost.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{
    AuxDrop, AuxDropConfig, DynFo, DynFoConfig, Fae, FaeConfig, LearnerError, Nb3, Nb3Config, Ocds, OcdsConfig,
    Olvf, OlvfConfig, OnlineLearner, Orf3v, Orf3vConfig,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown model {name:?}; known models: {known}")]
    UnknownModel { name: String, known: String },
    #[error("bad TOML: {0}")]
    Toml(String),
    #[error("[{model}] {message}")]
    Invalid { model: String, message: String },
    #[error("grid for {model} is empty")]
    EmptyGrid { model: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb3,
    Fae,
    Olvf,
    Ocds,
    DynFo,
    Orf3v,
    AuxDrop,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Nb3,
        ModelKind::Fae,
        ModelKind::Olvf,
        ModelKind::Ocds,
        ModelKind::DynFo,
        ModelKind::Orf3v,
        ModelKind::AuxDrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nb3 => "nb3",
            ModelKind::Fae => "fae",
            ModelKind::Olvf => "olvf",
            ModelKind::Ocds => "ocds",
            ModelKind::DynFo => "dynfo",
            ModelKind::Orf3v => "orf3v",
            ModelKind::AuxDrop => "auxdrop",
        }
    }

    /// Same output for every seed.
    pub fn is_deterministic(self) -> bool {
        matches!(self, ModelKind::Nb3 | ModelKind::Fae | ModelKind::Olvf)
    }

    pub fn default_config(self) -> ModelConfig {
        match self {
            ModelKind::Nb3 => ModelConfig::Nb3(Nb3Config::default()),
            ModelKind::Fae => ModelConfig::Fae(FaeConfig::default()),
            ModelKind::Olvf => ModelConfig::Olvf(OlvfConfig::default()),
            ModelKind::Ocds => ModelConfig::Ocds(OcdsConfig::default()),
            ModelKind::DynFo => ModelConfig::DynFo(DynFoConfig::default()),
            ModelKind::Orf3v => ModelConfig::Orf3v(Orf3vConfig::default()),
            ModelKind::AuxDrop => ModelConfig::AuxDrop(AuxDropConfig::default()),
        }
    }

    /// One seed for deterministic models, five otherwise.
    pub fn default_seeds(self) -> Vec<u64> {
        if self.is_deterministic() {
            vec![0]
        } else {
            (0..5).collect()
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        ModelKind::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| ConfigError::UnknownModel {
            name: s.to_string(),
            known: ModelKind::ALL.map(|k| k.name()).join(", "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum ModelConfig {
    Nb3(Nb3Config),
    Fae(FaeConfig),
    Olvf(OlvfConfig),
    Ocds(OcdsConfig),
    DynFo(DynFoConfig),
    Orf3v(Orf3vConfig),
    AuxDrop(AuxDropConfig),
}

fn invalid(kind: ModelKind, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { model: kind.name().into(), message: message.to_string() }
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Nb3(_) => ModelKind::Nb3,
            ModelConfig::Fae(_) => ModelKind::Fae,
            ModelConfig::Olvf(_) => ModelKind::Olvf,
            ModelConfig::Ocds(_) => ModelKind::Ocds,
            ModelConfig::DynFo(_) => ModelKind::DynFo,
            ModelConfig::Orf3v(_) => ModelKind::Orf3v,
            ModelConfig::AuxDrop(_) => ModelKind::AuxDrop,
        }
    }

    /// Parse one model table; missing keys take their defaults, unknown
    /// keys are rejected.
    pub fn from_table(kind: ModelKind, table: toml::Value) -> Result<Self, ConfigError> {
        fn parse<T: serde::de::DeserializeOwned>(kind: ModelKind, v: toml::Value) -> Result<T, ConfigError> {
            v.try_into().map_err(|e: toml::de::Error| invalid(kind, e.message()))
        }
        let cfg = match kind {
            ModelKind::Nb3 => ModelConfig::Nb3(parse(kind, table)?),
            ModelKind::Fae => ModelConfig::Fae(parse(kind, table)?),
            ModelKind::Olvf => ModelConfig::Olvf(parse(kind, table)?),
            ModelKind::Ocds => ModelConfig::Ocds(parse(kind, table)?),
            ModelKind::DynFo => ModelConfig::DynFo(parse(kind, table)?),
            ModelKind::Orf3v => ModelConfig::Orf3v(parse(kind, table)?),
            ModelKind::AuxDrop => ModelConfig::AuxDrop(parse(kind, table)?),
        };
        cfg.validate().map_err(|e| invalid(kind, e))?;
        Ok(cfg)
    }

    /// Hyperparameters as a TOML table.
    pub fn to_table(&self) -> toml::Table {
        let v = match self {
            ModelConfig::Nb3(c) => toml::Value::try_from(c),
            ModelConfig::Fae(c) => toml::Value::try_from(c),
            ModelConfig::Olvf(c) => toml::Value::try_from(c),
            ModelConfig::Ocds(c) => toml::Value::try_from(c),
            ModelConfig::DynFo(c) => toml::Value::try_from(c),
            ModelConfig::Orf3v(c) => toml::Value::try_from(c),
            ModelConfig::AuxDrop(c) => toml::Value::try_from(c),
        };
        match v.expect("configs are plain tables") {
            toml::Value::Table(t) => t,
            _ => unreachable!("configs serialize to tables"),
        }
    }

    /// A copy with some keys replaced.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let mut table = self.to_table();
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        Self::from_table(self.kind(), toml::Value::Table(table))
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        match self {
            ModelConfig::Nb3(c) => c.validate(),
            ModelConfig::Fae(c) => c.validate(),
            ModelConfig::Olvf(c) => c.validate(),
            ModelConfig::Ocds(c) => c.validate(),
            ModelConfig::DynFo(c) => c.validate(),
            ModelConfig::Orf3v(c) => c.validate(),
            ModelConfig::AuxDrop(c) => c.validate(),
        }
    }

    /// A fresh learner; `seed` is ignored by deterministic models.
    pub fn build(&self, seed: u64) -> Result<Box<dyn OnlineLearner>, LearnerError> {
        Ok(match self {
            ModelConfig::Nb3(c) => Box::new(Nb3::new(c.clone())?),
            ModelConfig::Fae(c) => Box::new(Fae::new(c.clone())?),
            ModelConfig::Olvf(c) => Box::new(Olvf::new(c.clone())?),
            ModelConfig::Ocds(c) => Box::new(Ocds::new(c.clone(), seed)?),
            ModelConfig::DynFo(c) => Box::new(DynFo::new(c.clone(), seed)?),
            ModelConfig::Orf3v(c) => Box::new(Orf3v::new(c.clone(), seed)?),
            ModelConfig::AuxDrop(c) => Box::new(AuxDrop::new(c.clone(), seed)?),
        })
    }
}

fn top_tables(text: &str) -> Result<Vec<(ModelKind, toml::Table)>, ConfigError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Toml(e.to_string()))?;
    doc.into_iter()
        .map(|(name, v)| {
            let kind: ModelKind = name.parse()?;
            match v {
                toml::Value::Table(t) => Ok((kind, t)),
                _ => Err(invalid(kind, "expected a table")),
            }
        })
        .collect()
}

/// Parse a model configuration file into one config per listed model.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<ModelKind, ModelConfig>, ConfigError> {
    top_tables(text)?
        .into_iter()
        .map(|(kind, t)| Ok((kind, ModelConfig::from_table(kind, toml::Value::Table(t))?)))
        .collect()
}

/// Value lists per hyperparameter, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub model: ModelKind,
    pub params: Vec<(String, Vec<toml::Value>)>,
}

pub type Assignment = Vec<(String, toml::Value)>;

impl GridSpec {
    /// Cartesian product, first parameter outermost.
    pub fn assignments(&self) -> Vec<Assignment> {
        let mut out: Vec<Assignment> = vec![Vec::new()];
        for (name, values) in &self.params {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut a = prefix.clone();
                        a.push((name.clone(), v.clone()));
                        a
                    })
                })
                .collect();
        }
        out
    }
}

pub fn parse_grid_file(text: &str) -> Result<Vec<GridSpec>, ConfigError> {
    top_tables(text)?
        .into_iter()
        .map(|(model, t)| {
            let params = t
                .into_iter()
                .map(|(k, v)| match v {
                    toml::Value::Array(vs) if !vs.is_empty() => Ok((k, vs)),
                    toml::Value::Array(_) => Err(ConfigError::EmptyGrid { model: model.name().into() }),
                    single => Ok((k, vec![single])),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(GridSpec { model, params })
        })
        .collect()
}

pub fn format_assignment(a: &Assignment) -> String {
    a.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}
