use std::path::Path;

use icl_core::environments::EnvConfig;
use icl_core::learners::{evaluate_policy, EvalReport, Greedy, JointGreedy};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::files::{self, LoadedPolicy, Manifest, Snapshot, MANIFEST_FILE};

pub const EVAL_VERSION: u32 = 1;
pub const PARTICIPATION_FILE: &str = "participation.csv";
pub const DISTANCE_FILE: &str = "distance.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub mean_team_reward: f64,
    pub participation: Vec<u64>,
    pub participation_std: f64,
    pub team_returns: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParticipationRow {
    pub version: u32,
    pub agent: usize,
    pub participation: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistanceRow {
    pub version: u32,
    pub step: usize,
    pub distance_sum: usize,
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| HarnessError::Corrupt {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Greedy evaluation of a snapshot. When `requested` is given, it must
/// equal the environment the snapshot was trained on.
pub fn evaluate_snapshot(
    snapshot_path: &Path,
    requested: Option<&EnvConfig>,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<EvalReport> {
    let snapshot = Snapshot::load(snapshot_path)?;
    if let Some(env) = requested {
        if *env != snapshot.env {
            return Err(HarnessError::SnapshotMismatch(format!(
                "{} was trained on {:?}, requested {:?}",
                snapshot_path.display(),
                snapshot.env,
                env
            )));
        }
    }
    let report = match snapshot.policy()? {
        LoadedPolicy::Independent(tables) => evaluate_policy(&mut Greedy(&tables), &snapshot.env, episodes, seed)?,
        LoadedPolicy::Joint(joint) => evaluate_policy(&mut JointGreedy(&joint), &snapshot.env, episodes, seed)?,
    };

    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    write_rows(
        &out.join(PARTICIPATION_FILE),
        &["version", "agent", "participation"],
        report
            .participation
            .iter()
            .enumerate()
            .map(|(agent, p)| ParticipationRow {
                version: EVAL_VERSION,
                agent,
                participation: *p,
            }),
    )?;
    write_rows(
        &out.join(DISTANCE_FILE),
        &["version", "step", "distance_sum"],
        report.distance_series.iter().enumerate().map(|(step, d)| DistanceRow {
            version: EVAL_VERSION,
            step,
            distance_sum: *d,
        }),
    )?;
    let summary = EvalSummary {
        version: EVAL_VERSION,
        seed,
        episodes,
        mean_team_reward: report.mean_team_reward,
        participation: report.participation.clone(),
        participation_std: report.participation_std(),
        team_returns: report.team_returns.clone(),
    };
    files::write_json(&out.join(SUMMARY_FILE), &summary)?;

    let mut manifest = Manifest::new("eval");
    manifest.inputs.push(files::digest_file(snapshot_path)?);
    manifest.seed = Some(seed);
    manifest.task = Some(snapshot.env.task);
    manifest.algorithm = Some(snapshot.algorithm);
    manifest.env = Some(snapshot.env.clone());
    manifest.files = vec![PARTICIPATION_FILE.into(), DISTANCE_FILE.into(), SUMMARY_FILE.into()];
    files::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(report)
}
