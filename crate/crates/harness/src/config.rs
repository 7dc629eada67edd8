//! Experiment configuration.
//!
//! A config is a TOML document with four sections:
//!
//! ```toml
//! [env]
//! task = "lumberjacks"
//! height = 8
//! width = 8
//! agents = 4
//! targets = 6
//!
//! [learner]
//! algorithm = "icl"        # icl | idql | joint | icl-predicted
//! episodes = 30000
//!
//! [discovery]              # optional
//! ridge = 0.01
//!
//! [run]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! `--override section.key=value` edits the parsed document before it is
//! validated. Values are read as TOML literals and fall back to plain
//! strings, so `learner.algorithm=idql` and `run.seeds=[7]` both work.

use std::fmt;
use std::path::{Path, PathBuf};

use icl_core::discovery::GrangerConfig;
use icl_core::environments::EnvConfig;
use icl_core::learners::LearnerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

pub const SECTIONS: [&str; 4] = ["env", "learner", "discovery", "run"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Icl,
    Idql,
    Joint,
    IclPredicted,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Icl => "icl",
            Algorithm::Idql => "idql",
            Algorithm::Joint => "joint",
            Algorithm::IclPredicted => "icl-predicted",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        [
            Algorithm::Icl,
            Algorithm::Idql,
            Algorithm::Joint,
            Algorithm::IclPredicted,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerSection {
    pub algorithm: Algorithm,
    /// Discovered matrix for `icl-predicted`.
    pub matrix: Option<PathBuf>,
    /// Also require the agent to have seen a target before crediting it.
    pub presence_refinement: bool,
    #[serde(flatten)]
    pub params: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_trace_rate")]
    pub trace_rate: f64,
    #[serde(default = "default_trace_tail")]
    pub trace_tail: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_trace_rate() -> f64 {
    0.05
}

fn default_trace_tail() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub learner: LearnerSection,
    pub discovery: GrangerConfig,
    pub run: RunSection,
}

/// A validated config together with the digest of the bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub overrides: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| config_err(format!("{origin}: {}", e.message())))
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_owned())),
        Err(_) => Value::String(raw.to_owned()),
    }
}

/// Applies one `a.b.c=value` override to `doc`.
pub fn apply_override(doc: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override `{spec}` has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{spec}`: `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn take_section(doc: &mut Table, name: &str, required: bool) -> Result<Option<Table>> {
    match doc.remove(name) {
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(config_err(format!("`{name}` must be a section"))),
        None if required => Err(config_err(format!("missing [{name}] section"))),
        None => Ok(None),
    }
}

fn section<T: serde::de::DeserializeOwned>(name: &str, table: Table) -> Result<T> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("[{name}]: {}", e.message())))
}

fn learner_section(mut table: Table) -> Result<LearnerSection> {
    let algorithm = match table.remove("algorithm") {
        Some(v) => v
            .as_str()
            .and_then(Algorithm::parse)
            .ok_or_else(|| config_err("[learner]: algorithm must be one of icl, idql, joint, icl-predicted"))?,
        None => return Err(config_err("[learner]: missing field `algorithm`")),
    };
    let matrix = match table.remove("matrix") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(config_err("[learner]: matrix must be a path string")),
        None => None,
    };
    let presence_refinement = match table.remove("presence_refinement") {
        Some(Value::Boolean(b)) => b,
        Some(_) => return Err(config_err("[learner]: presence_refinement must be a boolean")),
        None => false,
    };
    let params: LearnerConfig = section("learner", table)?;
    Ok(LearnerSection {
        algorithm,
        matrix,
        presence_refinement,
        params,
    })
}

/// Discovery parameters from an optional config document; other sections are
/// ignored.
pub fn discovery_config(text: Option<&str>, overrides: &[String]) -> Result<GrangerConfig> {
    let mut doc = match text {
        Some(t) => parse_table(t, "config")?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg = match take_section(&mut doc, "discovery", false)? {
        Some(t) => section("discovery", t)?,
        None => GrangerConfig::default(),
    };
    cfg.validate().map_err(|e| config_err(format!("[discovery]: {e}")))?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut doc = parse_table(text, "config")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(unknown) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(config_err(format!("unknown section [{unknown}]")));
        }
        let env = take_section(&mut doc, "env", true)?.expect("required");
        let learner = take_section(&mut doc, "learner", true)?.expect("required");
        let run = take_section(&mut doc, "run", true)?.expect("required");
        let discovery = take_section(&mut doc, "discovery", false)?;

        let config = ExperimentConfig {
            env: section("env", env)?,
            learner: learner_section(learner)?,
            discovery: match discovery {
                Some(t) => section("discovery", t)?,
                None => GrangerConfig::default(),
            },
            run: section("run", run)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| config_err(format!("[env]: {e}")))?;
        self.learner
            .params
            .validate()
            .map_err(|e| config_err(format!("[learner]: {e}")))?;
        self.discovery
            .validate()
            .map_err(|e| config_err(format!("[discovery]: {e}")))?;
        match self.learner.algorithm {
            Algorithm::IclPredicted if self.learner.matrix.is_none() => {
                return Err(config_err("[learner]: icl-predicted needs `matrix`"));
            }
            Algorithm::Joint if self.env.agents > self.learner.params.joint_max_agents => {
                return Err(config_err(format!(
                    "[learner]: joint learner supports at most {} agents, env has {}",
                    self.learner.params.joint_max_agents, self.env.agents
                )));
            }
            _ => {}
        }
        if self.run.seeds.is_empty() {
            return Err(config_err("[run]: seeds must not be empty"));
        }
        let mut seeds = self.run.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("[run]: seeds must be unique"));
        }
        if !(0.0..=1.0).contains(&self.run.trace_rate) {
            return Err(config_err("[run]: trace_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

impl LoadedConfig {
    pub fn from_bytes(bytes: &[u8], overrides: &[String]) -> Result<LoadedConfig> {
        let text = std::str::from_utf8(bytes).map_err(|_| config_err("config is not valid UTF-8"))?;
        Ok(LoadedConfig {
            config: ExperimentConfig::parse(text, overrides)?,
            sha256: sha256_hex(bytes),
            overrides: overrides.to_vec(),
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes, overrides)
    }
}
