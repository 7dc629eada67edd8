use std::path::{Path, PathBuf};

use icl_core::discovery::{
    encode_traces, infer_causal_matrix, score_traces, CausalMatrix, DiscoveryError, DiscoveryReport, FeatureEncoding,
    GrangerConfig, PredictedCredit,
};
use icl_core::environments::CellContent;
use icl_core::learners::EpisodeTrace;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::files::{self, Manifest, MANIFEST_FILE};
use crate::traces::{collect_trace_files, read_trace_file};

pub const DISCOVERY_VERSION: u32 = 1;
pub const MATRIX_FILE: &str = "matrix.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub version: u32,
    pub config: GrangerConfig,
    pub matrix: CausalMatrix,
}

impl MatrixFile {
    pub fn load(path: &Path) -> Result<MatrixFile> {
        let file: MatrixFile = files::read_json(path)?;
        if file.version != DISCOVERY_VERSION {
            return Err(HarnessError::SchemaVersionMismatch {
                path: path.to_path_buf(),
                found: file.version,
                expected: DISCOVERY_VERSION,
            });
        }
        file.matrix.validate()?;
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: u32,
    pub trace_files: usize,
    pub episodes: usize,
    #[serde(flatten)]
    pub report: DiscoveryReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    version: u32,
    agent: usize,
    score: f64,
    edge: u8,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOutcome {
    pub matrix: CausalMatrix,
    pub report: DiscoveryReport,
    pub trace_files: Vec<PathBuf>,
}

/// Loads every trace under `inputs`, concatenated in sorted file order.
pub fn load_traces(inputs: &[PathBuf]) -> Result<(Vec<PathBuf>, Vec<EpisodeTrace>)> {
    let files = collect_trace_files(inputs)?;
    let mut traces = Vec::new();
    let mut agents = None;
    for f in &files {
        let part = read_trace_file(f)?;
        if let Some(n) = part.first().map(|t| t.steps[0].observations.len()) {
            if *agents.get_or_insert(n) != n {
                return Err(DiscoveryError::InconsistentTraces(format!(
                    "{} has {n} agents, earlier files have {}",
                    f.display(),
                    agents.unwrap_or_default()
                ))
                .into());
            }
        }
        traces.extend(part);
    }
    Ok((files, traces))
}

/// Smallest encoding that covers every tree level in the traces.
pub fn encoding_for(traces: &[EpisodeTrace]) -> FeatureEncoding {
    let max_level = traces
        .iter()
        .flat_map(|t| &t.steps)
        .flat_map(|s| &s.observations)
        .flat_map(|o| &o.mask)
        .filter_map(|c| match c {
            CellContent::Tree(l) => Some(*l),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    FeatureEncoding {
        max_tree_level: max_level.max(FeatureEncoding::default().max_tree_level),
    }
}

/// Infers the `o_i -> r` matrix from recorded traces and scores its gates
/// against the oracle labels stored with them. `manifest` carries the
/// caller's provenance; input digests and file names are filled in here.
pub fn discover(
    inputs: &[PathBuf],
    cfg: &GrangerConfig,
    out: &Path,
    mut manifest: Manifest,
) -> Result<DiscoveryOutcome> {
    let (trace_files, traces) = load_traces(inputs)?;
    if !traces.iter().flat_map(|t| &t.steps).any(|s| s.reward > 0.0) {
        return Err(DiscoveryError::NoPositiveRewardSteps.into());
    }
    let panel = encode_traces(&traces, encoding_for(&traces))?;
    let matrix = infer_causal_matrix(&panel, cfg)?;
    let report = score_traces(&PredictedCredit::from_matrix(&matrix), &traces)?;

    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    files::write_json(
        &out.join(MATRIX_FILE),
        &MatrixFile {
            version: DISCOVERY_VERSION,
            config: cfg.clone(),
            matrix: matrix.clone(),
        },
    )?;
    let scores_path = out.join(SCORES_FILE);
    let csv_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", scores_path.display()));
    let mut w = csv::Writer::from_path(&scores_path).map_err(csv_err)?;
    for (agent, (score, edge)) in matrix.reward_scores().iter().zip(matrix.gates()).enumerate() {
        w.serialize(ScoreRow {
            version: DISCOVERY_VERSION,
            agent,
            score: *score,
            edge: u8::from(edge),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(HarnessError::io(&scores_path))?;
    files::write_json(
        &out.join(REPORT_FILE),
        &ReportFile {
            version: DISCOVERY_VERSION,
            trace_files: trace_files.len(),
            episodes: traces.len(),
            report: report.clone(),
        },
    )?;

    for f in &trace_files {
        manifest.inputs.push(files::digest_file(f)?);
    }
    manifest.files = vec![MATRIX_FILE.into(), SCORES_FILE.into(), REPORT_FILE.into()];
    files::write_json(&out.join(MANIFEST_FILE), &manifest)?;

    Ok(DiscoveryOutcome {
        matrix,
        report,
        trace_files,
    })
}
