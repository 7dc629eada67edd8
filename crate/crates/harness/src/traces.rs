//! JSONL episode traces, one step per line.
//!
//! ```json
//! {"version":1,"episode":12,"step":0,
//!  "obs":[{"row":3,"col":1,"mask":[1,1,2,...]},...],
//!  "actions":[0,4,2,1],"reward":1.0,
//!  "events":[{"kind":"capture","pos":{"row":2,"col":2},"agents":[0,3]}],
//!  "oracle_c":[1,0,0,1]}
//! ```
//!
//! `mask` holds the row-major cell codes of the pre-step view (0 out of
//! bounds, 1 empty, 2 agent, 3 prey, 3 + level for a tree). `actions` are
//! indices into up, down, left, right, stay.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use icl_core::environments::{Action, CellContent, GridPos, Observation, StepEvent};
use icl_core::learners::{EpisodeTrace, TraceStep};
use icl_core::CausalVector;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsRecord {
    row: usize,
    col: usize,
    mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    version: u32,
    episode: usize,
    step: usize,
    obs: Vec<ObsRecord>,
    actions: Vec<usize>,
    reward: f64,
    events: Vec<StepEvent>,
    oracle_c: Vec<u8>,
}

fn line_of(episode: usize, step: &TraceStep) -> TraceLine {
    TraceLine {
        version: TRACE_VERSION,
        episode,
        step: step.step,
        obs: step
            .observations
            .iter()
            .map(|o| ObsRecord {
                row: o.center.row,
                col: o.center.col,
                mask: o.mask.iter().map(|c| c.code()).collect(),
            })
            .collect(),
        actions: step.actions.iter().map(|a| a.index()).collect(),
        reward: step.reward,
        events: step.events.clone(),
        oracle_c: step.oracle.values.clone(),
    }
}

pub fn write_traces<W: Write>(mut out: W, traces: &[EpisodeTrace]) -> std::io::Result<()> {
    for trace in traces {
        for step in &trace.steps {
            serde_json::to_writer(&mut out, &line_of(trace.episode, step))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

pub fn write_trace_file(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let file = File::create(path).map_err(HarnessError::io(path))?;
    write_traces(std::io::BufWriter::new(file), traces).map_err(HarnessError::io(path))
}

fn mask_radius(len: usize) -> Option<usize> {
    let side = (len as f64).sqrt().round() as usize;
    (side * side == len && side % 2 == 1).then_some(side / 2)
}

fn step_of(line: TraceLine) -> std::result::Result<TraceStep, String> {
    let agents = line.obs.len();
    if agents == 0 {
        return Err("step has no observations".into());
    }
    if line.actions.len() != agents || line.oracle_c.len() != agents {
        return Err(format!(
            "{agents} observations but {} actions and {} oracle entries",
            line.actions.len(),
            line.oracle_c.len()
        ));
    }
    if line.oracle_c.iter().any(|c| *c > 1) {
        return Err("oracle_c entries must be 0 or 1".into());
    }
    if !line.reward.is_finite() {
        return Err("reward is not finite".into());
    }
    let mut observations = Vec::with_capacity(agents);
    for rec in line.obs {
        let radius = mask_radius(rec.mask.len())
            .ok_or_else(|| format!("mask of {} cells is not an odd square", rec.mask.len()))?;
        let mask = rec
            .mask
            .iter()
            .map(|c| CellContent::from_code(*c).ok_or_else(|| format!("unknown cell code {c}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        observations.push(Observation {
            center: GridPos::new(rec.row, rec.col),
            radius,
            mask,
        });
    }
    let actions = line
        .actions
        .iter()
        .map(|a| Action::from_index(*a).ok_or_else(|| format!("unknown action index {a}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TraceStep {
        step: line.step,
        observations,
        actions,
        reward: line.reward,
        events: line.events,
        oracle: CausalVector {
            timestep: line.step,
            values: line.oracle_c,
        },
    })
}

/// Reads one trace file. Any malformed line is a hard error naming the file
/// and the 1-based line number.
pub fn read_trace_file(path: &Path) -> Result<Vec<EpisodeTrace>> {
    let file = File::open(path).map_err(HarnessError::io(path))?;
    let corrupt = |line: usize, message: String| HarnessError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut traces: Vec<EpisodeTrace> = Vec::new();
    let mut agents = None;
    let mut radius = None;
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let text = text.map_err(HarnessError::io(path))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(lineno, e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(TRACE_VERSION as u64) {
            return Err(match version {
                Some(v) => HarnessError::SchemaVersionMismatch {
                    path: path.to_path_buf(),
                    found: v as u32,
                    expected: TRACE_VERSION,
                },
                None => corrupt(lineno, "missing version".into()),
            });
        }
        let line: TraceLine = serde_json::from_value(value).map_err(|e| corrupt(lineno, e.to_string()))?;
        let episode = line.episode;
        let step = step_of(line).map_err(|m| corrupt(lineno, m))?;

        let n = step.observations.len();
        let r = step.observations[0].radius;
        if step.observations.iter().any(|o| o.radius != r) {
            return Err(corrupt(lineno, "agents have different view sizes".into()));
        }
        if *agents.get_or_insert(n) != n || *radius.get_or_insert(r) != r {
            return Err(corrupt(lineno, "step shape differs from earlier lines".into()));
        }

        match traces.last_mut() {
            Some(t) if t.episode == episode => {
                let expected = t.steps.len();
                if step.step != expected {
                    return Err(corrupt(
                        lineno,
                        format!("expected step {expected}, found {}", step.step),
                    ));
                }
                t.steps.push(step);
            }
            _ => {
                if step.step != 0 {
                    return Err(corrupt(
                        lineno,
                        format!("episode {episode} starts at step {}", step.step),
                    ));
                }
                traces.push(EpisodeTrace {
                    episode,
                    steps: vec![step],
                });
            }
        }
    }
    Ok(traces)
}

/// Expands files and directories into the sorted list of `.jsonl` files
/// beneath them.
pub fn collect_trace_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries = std::fs::read_dir(dir)
            .map_err(HarnessError::io(dir))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(HarnessError::io(dir))?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                out.push(path);
            }
        }
        Ok(())
    }

    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            walk(input, &mut files)?;
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(HarnessError::Data(format!(
                "{}: no such trace file or directory",
                input.display()
            )));
        }
    }
    if files.is_empty() {
        return Err(HarnessError::Data("no trace files found".into()));
    }
    Ok(files)
}
