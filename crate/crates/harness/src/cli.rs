//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{discovery_config, LoadedConfig};
use crate::discover::discover;
use crate::error::{HarnessError, Result};
use crate::eval::evaluate_snapshot;
use crate::files::Manifest;
use crate::report::report;
use crate::train::{output_root, train};

#[derive(Debug, Parser)]
#[command(
    name = "icl",
    version,
    about = "Independent causal learning experiments on gridworlds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured seed and write one run directory per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of `run.seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; defaults to $ICL_OUTPUT_ROOT, then `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `section.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy evaluation of a trained snapshot.
    Eval {
        #[arg(long)]
        snapshot: PathBuf,
        /// Config whose [env] must match the snapshot's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `eval/` next to the snapshot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infer the observation-to-reward matrix from trace files or directories.
    Discover {
        #[arg(required = true, value_name = "TRACES")]
        inputs: Vec<PathBuf>,
        /// Config whose [discovery] section is used; other sections are ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Defaults to `discovery/` under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into comparison tables and plots.
    Report {
        #[arg(required = true, value_name = "RUNS")]
        inputs: Vec<PathBuf>,
        /// Moving-average window in episodes.
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// Defaults to `report/` under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_root() -> PathBuf {
    output_root(None, Path::new("runs"))
}

fn read_config(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            overrides,
        } => {
            let loaded = LoadedConfig::load(&config, &overrides)?;
            let seeds = seed.map_or_else(|| loaded.config.run.seeds.clone(), |s| vec![s]);
            let root = output_root(out.as_deref(), &loaded.config.run.output_dir);
            for dir in train(&loaded, &seeds, &root)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval {
            snapshot,
            config,
            overrides,
            episodes,
            seed,
            out,
        } => {
            let loaded = config.map(|c| LoadedConfig::load(&c, &overrides)).transpose()?;
            let out = out.unwrap_or_else(|| snapshot.parent().unwrap_or(Path::new(".")).join("eval"));
            let report = evaluate_snapshot(&snapshot, loaded.as_ref().map(|l| &l.config.env), episodes, seed, &out)?;
            println!(
                "{}: mean team reward {:.3}, participation {:?}",
                out.display(),
                report.mean_team_reward,
                report.participation
            );
        }
        Command::Discover {
            inputs,
            config,
            overrides,
            out,
        } => {
            let bytes = config.as_deref().map(read_config).transpose()?;
            let text = bytes
                .as_deref()
                .map(|b| std::str::from_utf8(b).map_err(|_| HarnessError::Config("config is not valid UTF-8".into())))
                .transpose()?;
            let cfg = discovery_config(text, &overrides)?;
            let mut manifest = Manifest::new("discover");
            manifest.config_sha256 = bytes.as_deref().map(crate::config::sha256_hex);
            manifest.overrides = overrides;
            let out = out.unwrap_or_else(|| default_root().join("discovery"));
            let outcome = discover(&inputs, &cfg, &out, manifest)?;
            let r = &outcome.report;
            println!(
                "{}: gates {:?}, accuracy {:.3}, fp {}, fn {}",
                out.display(),
                outcome.matrix.gates(),
                r.accuracy,
                r.false_positives,
                r.false_negatives
            );
        }
        Command::Report { inputs, window, out } => {
            let out = out.unwrap_or_else(|| default_root().join("report"));
            let outcome = report(&inputs, window, &out)?;
            for f in outcome.files {
                println!("{}", out.join(f).display());
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and maps errors to exit codes:
/// 0 ok, 2 configuration error, 3 data error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
