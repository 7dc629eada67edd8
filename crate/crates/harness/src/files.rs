//! On-disk artifacts: metrics CSV, Q-table snapshots and run manifests.

use std::path::Path;

use icl_core::environments::{EnvConfig, StateKey, Task};
use icl_core::learners::{EpisodeMetrics, JointQTable, LearnerConfig, QTable};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::{HarnessError, Result};

pub const METRICS_VERSION: u32 = 1;
pub const SNAPSHOT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const SNAPSHOT_FILE: &str = "qtable.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn check_version(path: &Path, found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(HarnessError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    version: u32,
    episode: usize,
    team_return: f64,
    steps: usize,
    epsilon: f64,
}

pub fn write_metrics(path: &Path, metrics: &[EpisodeMetrics]) -> Result<()> {
    let csv_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if metrics.is_empty() {
        w.write_record(["version", "episode", "team_return", "steps", "epsilon"])
            .map_err(csv_err)?;
    }
    for m in metrics {
        w.serialize(MetricsRow {
            version: METRICS_VERSION,
            episode: m.episode,
            team_return: m.team_return,
            steps: m.steps,
            epsilon: m.epsilon,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

/// Reads a metrics CSV, rejecting unknown schema versions and
/// non-increasing episode indices.
pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let mut out: Vec<EpisodeMetrics> = Vec::new();
    for (i, row) in r.deserialize::<MetricsRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| HarnessError::Corrupt {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        check_version(path, row.version, METRICS_VERSION)?;
        if out.last().is_some_and(|m| m.episode >= row.episode) {
            return Err(HarnessError::Corrupt {
                path: path.to_path_buf(),
                line,
                message: "episode indices must increase".into(),
            });
        }
        out.push(EpisodeMetrics {
            episode: row.episode,
            team_return: row.team_return,
            steps: row.steps,
            epsilon: row.epsilon,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub state: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub n_actions: usize,
    pub entries: Vec<TableEntry>,
}

impl TableRecord {
    pub fn of(table: &QTable) -> Self {
        TableRecord {
            n_actions: table.n_actions(),
            entries: table
                .sorted_entries()
                .into_iter()
                .map(|(k, v)| TableEntry {
                    state: k.to_hex(),
                    values: v.to_vec(),
                })
                .collect(),
        }
    }

    fn restore(&self, cfg: &LearnerConfig) -> std::result::Result<QTable, String> {
        let mut table = QTable::new(self.n_actions, cfg.alpha, cfg.gamma, cfg.default_value);
        for e in &self.entries {
            let key = StateKey::from_hex(&e.state).ok_or_else(|| format!("bad state key `{}`", e.state))?;
            if e.values.len() != self.n_actions {
                return Err(format!("state `{}` has {} values", e.state, e.values.len()));
            }
            table.insert_row(key, e.values.clone());
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyRecord {
    Independent { tables: Vec<TableRecord> },
    Joint { agents: usize, table: TableRecord },
}

/// Learned tables plus everything needed to run them again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub policy: PolicyRecord,
}

#[derive(Debug, Clone)]
pub enum LoadedPolicy {
    Independent(Vec<QTable>),
    Joint(JointQTable),
}

impl Snapshot {
    pub fn independent(
        algorithm: Algorithm,
        seed: u64,
        env: &EnvConfig,
        learner: &LearnerConfig,
        tables: &[QTable],
    ) -> Self {
        Snapshot {
            version: SNAPSHOT_VERSION,
            algorithm,
            seed,
            env: env.clone(),
            learner: learner.clone(),
            policy: PolicyRecord::Independent {
                tables: tables.iter().map(TableRecord::of).collect(),
            },
        }
    }

    pub fn joint(seed: u64, env: &EnvConfig, learner: &LearnerConfig, joint: &JointQTable) -> Self {
        Snapshot {
            version: SNAPSHOT_VERSION,
            algorithm: Algorithm::Joint,
            seed,
            env: env.clone(),
            learner: learner.clone(),
            policy: PolicyRecord::Joint {
                agents: joint.agents,
                table: TableRecord::of(&joint.table),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        let value: serde_json::Value = read_json(path)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        check_version(path, version, SNAPSHOT_VERSION)?;
        serde_json::from_value(value).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }

    pub fn policy(&self) -> Result<LoadedPolicy> {
        let bad = |m: String| HarnessError::Data(format!("snapshot: {m}"));
        match &self.policy {
            PolicyRecord::Independent { tables } => {
                if tables.len() != self.env.agents {
                    return Err(bad(format!("{} tables for {} agents", tables.len(), self.env.agents)));
                }
                tables
                    .iter()
                    .map(|t| t.restore(&self.learner).map_err(bad))
                    .collect::<Result<Vec<_>>>()
                    .map(LoadedPolicy::Independent)
            }
            PolicyRecord::Joint { agents, table } => Ok(LoadedPolicy::Joint(JointQTable {
                agents: *agents,
                table: table.restore(&self.learner).map_err(bad)?,
            })),
        }
    }
}

/// Digest of one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(default)]
    pub overrides: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_sha256: None,
            overrides: Vec::new(),
            inputs: Vec::new(),
            seed: None,
            task: None,
            algorithm: None,
            env: None,
            files: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let value: serde_json::Value = read_json(path)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        check_version(path, version, MANIFEST_VERSION)?;
        serde_json::from_value(value).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: crate::config::sha256_hex(&bytes),
    })
}
