use std::path::{Path, PathBuf};

use icl_core::discovery::{CausalMatrix, PredictedCredit};
use icl_core::learners::{train_icl, train_joint, CreditSource, TracePlan};

use crate::config::{Algorithm, LoadedConfig};
use crate::discover::MatrixFile;
use crate::error::{HarnessError, Result};
use crate::files::{self, Manifest, Snapshot, MANIFEST_FILE, METRICS_FILE, SNAPSHOT_FILE, TRACES_FILE};
use crate::traces::write_trace_file;

pub const OUTPUT_ROOT_VAR: &str = "ICL_OUTPUT_ROOT";

/// `flag`, then `$ICL_OUTPUT_ROOT`, then `fallback`.
pub fn output_root(flag: Option<&Path>, fallback: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => fallback.to_path_buf(),
    }
}

pub fn run_dir(root: &Path, loaded: &LoadedConfig, seed: u64) -> PathBuf {
    let cfg = &loaded.config;
    root.join(cfg.env.task.as_str())
        .join(cfg.learner.algorithm.as_str())
        .join(format!("seed-{seed}"))
}

fn credit_source(loaded: &LoadedConfig) -> Result<CreditSource> {
    let learner = &loaded.config.learner;
    Ok(match learner.algorithm {
        Algorithm::Icl => CreditSource::Oracle,
        Algorithm::Idql | Algorithm::Joint => CreditSource::AlwaysOne,
        Algorithm::IclPredicted => {
            let path = learner.matrix.as_deref().expect("validated config names a matrix");
            let matrix: CausalMatrix = MatrixFile::load(path)?.matrix;
            if matrix.agents != loaded.config.env.agents {
                return Err(HarnessError::Data(format!(
                    "{}: matrix covers {} agents, env has {}",
                    path.display(),
                    matrix.agents,
                    loaded.config.env.agents
                )));
            }
            CreditSource::Predicted(PredictedCredit {
                presence_refinement: learner.presence_refinement,
                ..PredictedCredit::from_matrix(&matrix)
            })
        }
    })
}

/// Trains one seed and writes its run directory.
pub fn train_seed(loaded: &LoadedConfig, seed: u64, dir: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let plan = TracePlan {
        rate: cfg.run.trace_rate,
        tail: cfg.run.trace_tail,
    };
    let credit = credit_source(loaded)?;
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;

    let params = &cfg.learner.params;
    let (metrics, traces, snapshot) = match cfg.learner.algorithm {
        Algorithm::Joint => {
            let out = train_joint(&cfg.env, params, seed, &plan)?;
            let snap = Snapshot::joint(seed, &cfg.env, params, &out.learner);
            (out.metrics, out.traces, snap)
        }
        algorithm => {
            let out = train_icl(&cfg.env, params, &credit, seed, &plan)?;
            let snap = Snapshot::independent(algorithm, seed, &cfg.env, params, &out.learner);
            (out.metrics, out.traces, snap)
        }
    };

    files::write_metrics(&dir.join(METRICS_FILE), &metrics)?;
    write_trace_file(&dir.join(TRACES_FILE), &traces)?;
    files::write_json(&dir.join(SNAPSHOT_FILE), &snapshot)?;

    let mut manifest = Manifest::new("train");
    manifest.config_sha256 = Some(loaded.sha256.clone());
    manifest.overrides = loaded.overrides.clone();
    if let Some(m) = &cfg.learner.matrix {
        manifest.inputs.push(files::digest_file(m)?);
    }
    manifest.seed = Some(seed);
    manifest.task = Some(cfg.env.task);
    manifest.algorithm = Some(cfg.learner.algorithm);
    manifest.env = Some(cfg.env.clone());
    manifest.files = vec![METRICS_FILE.into(), TRACES_FILE.into(), SNAPSHOT_FILE.into()];
    files::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "seed {seed}: {} episodes, {} traced -> {}",
        metrics.len(),
        traces.len(),
        dir.display()
    );
    Ok(())
}

/// Trains every seed in parallel, one thread per seed, each writing its own
/// directory under `root`. Returns the run directories in seed order.
pub fn train(loaded: &LoadedConfig, seeds: &[u64], root: &Path) -> Result<Vec<PathBuf>> {
    let dirs: Vec<PathBuf> = seeds.iter().map(|s| run_dir(root, loaded, *s)).collect();
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .zip(&dirs)
            .map(|(seed, dir)| scope.spawn(move || train_seed(loaded, *seed, dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(dirs)
}
