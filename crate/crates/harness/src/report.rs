//! Cross-seed aggregation of run directories into CSV tables and SVG plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icl_core::environments::Task;
use serde::Serialize;

use crate::config::Algorithm;
use crate::error::{HarnessError, Result};
use crate::eval::{read_rows, DistanceRow, ParticipationRow, DISTANCE_FILE, EVAL_VERSION, PARTICIPATION_FILE};
use crate::files::{self, Manifest, MANIFEST_FILE, METRICS_FILE};
use crate::svg::{self, Series};

pub const REPORT_VERSION: u32 = 1;
pub const FINAL_RETURNS_FILE: &str = "final_returns.csv";
pub const PARTICIPATION_CSV: &str = "participation.csv";
pub const PARTICIPATION_SVG: &str = "participation.svg";
pub const DISTANCE_CSV: &str = "distance.csv";
pub const DISTANCE_SVG: &str = "distance.svg";

/// Share of episodes at the end of a run that make up its final window.
pub const FINAL_WINDOW_SHARE: f64 = 0.1;

/// Trailing moving average. A window longer than the series is clipped to
/// the series length; the output has `len - w + 1` points.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    if xs.is_empty() {
        return Vec::new();
    }
    let w = window.min(xs.len());
    let mut sum: f64 = xs[..w].iter().sum();
    let mut out = Vec::with_capacity(xs.len() - w + 1);
    out.push(sum / w as f64);
    for i in w..xs.len() {
        sum += xs[i] - xs[i - w];
        out.push(sum / w as f64);
    }
    out
}

/// Linearly interpolated quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty data");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Median of the last `FINAL_WINDOW_SHARE` of a return series (at least one
/// episode).
pub fn final_window_median(returns: &[f64]) -> f64 {
    let n = ((returns.len() as f64 * FINAL_WINDOW_SHARE).round() as usize).clamp(1, returns.len());
    median(&returns[returns.len() - n..])
}

/// Per-index median and interquartile band across seeds, truncated to the
/// shortest series.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

pub fn aggregate(series: &[Vec<f64>]) -> Band {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let mut band = Band {
        median: Vec::with_capacity(len),
        q25: Vec::with_capacity(len),
        q75: Vec::with_capacity(len),
    };
    let mut column = Vec::with_capacity(series.len());
    for i in 0..len {
        column.clear();
        column.extend(series.iter().map(|s| s[i]));
        band.median.push(median(&column));
        band.q25.push(quantile(&column, 0.25));
        band.q75.push(quantile(&column, 0.75));
    }
    band
}

#[derive(Debug, Clone)]
struct TrainRun {
    task: Task,
    algorithm: Algorithm,
    seed: u64,
    metrics: PathBuf,
}

#[derive(Debug, Clone)]
struct EvalRun {
    task: Task,
    algorithm: Algorithm,
    seed: u64,
    dir: PathBuf,
}

#[derive(Debug, Default)]
struct Runs {
    train: Vec<TrainRun>,
    eval: Vec<EvalRun>,
}

fn walk(dir: &Path, runs: &mut Runs) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let m = Manifest::load(&manifest_path)?;
        let key = match (m.task, m.algorithm, m.seed) {
            (Some(t), Some(a), Some(s)) => Some((t, a, s)),
            _ => None,
        };
        match (m.command.as_str(), key) {
            ("train", Some((task, algorithm, seed))) if dir.join(METRICS_FILE).is_file() => runs.train.push(TrainRun {
                task,
                algorithm,
                seed,
                metrics: dir.join(METRICS_FILE),
            }),
            ("eval", Some((task, algorithm, seed))) if dir.join(PARTICIPATION_FILE).is_file() => {
                runs.eval.push(EvalRun {
                    task,
                    algorithm,
                    seed,
                    dir: dir.to_path_buf(),
                })
            }
            _ => {}
        }
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(HarnessError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        walk(&child, runs)?;
    }
    Ok(())
}

fn find_runs(inputs: &[PathBuf]) -> Result<Runs> {
    let mut runs = Runs::default();
    for input in inputs {
        if !input.is_dir() {
            return Err(HarnessError::Data(format!("{}: not a directory", input.display())));
        }
        walk(input, &mut runs)?;
    }
    if runs.train.is_empty() && runs.eval.is_empty() {
        return Err(HarnessError::Data("no train or eval run directories found".into()));
    }
    runs.train
        .sort_by(|a, b| (a.task, a.algorithm, a.seed, &a.metrics).cmp(&(b.task, b.algorithm, b.seed, &b.metrics)));
    runs.eval
        .sort_by(|a, b| (a.task, a.algorithm, a.seed, &a.dir).cmp(&(b.task, b.algorithm, b.seed, &b.dir)));
    Ok(runs)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
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

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

#[derive(Debug, Serialize)]
struct RewardRow {
    version: u32,
    algorithm: Algorithm,
    episode: usize,
    median: f64,
    q25: f64,
    q75: f64,
    seeds: usize,
}

#[derive(Debug, Serialize)]
struct FinalRow {
    version: u32,
    task: Task,
    algorithm: Algorithm,
    seeds: usize,
    median: f64,
    q25: f64,
    q75: f64,
}

#[derive(Debug, Serialize)]
struct MeanParticipationRow {
    version: u32,
    task: Task,
    algorithm: Algorithm,
    agent: usize,
    participation: f64,
    seeds: usize,
}

#[derive(Debug, Serialize)]
struct SeriesDistanceRow {
    version: u32,
    task: Task,
    algorithm: Algorithm,
    seed: u64,
    step: usize,
    distance_sum: usize,
}

/// Smoothed reward curve of one algorithm on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub seeds: usize,
    /// Episode index at the end of each smoothing window.
    pub episodes: Vec<usize>,
    pub band: Band,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOutcome {
    pub curves: BTreeMap<(Task, Algorithm), Curve>,
    pub files: Vec<String>,
}

fn check_eval_version(path: &Path, found: u32) -> Result<()> {
    if found != EVAL_VERSION {
        return Err(HarnessError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: EVAL_VERSION,
        });
    }
    Ok(())
}

/// Aggregates every run under `inputs` and writes the comparison artifacts
/// to `out`.
pub fn report(inputs: &[PathBuf], window: usize, out: &Path) -> Result<ReportOutcome> {
    if window == 0 {
        return Err(HarnessError::Config("smoothing window must be positive".into()));
    }
    let runs = find_runs(inputs)?;
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let mut outcome = ReportOutcome::default();
    let mut manifest = Manifest::new("report");

    let mut returns: BTreeMap<(Task, Algorithm), Vec<Vec<f64>>> = BTreeMap::new();
    for run in &runs.train {
        let metrics = files::read_metrics(&run.metrics)?;
        manifest.inputs.push(files::digest_file(&run.metrics)?);
        returns
            .entry((run.task, run.algorithm))
            .or_default()
            .push(metrics.iter().map(|m| m.team_return).collect());
    }

    let mut finals = Vec::new();
    let tasks: Vec<Task> = {
        let mut t: Vec<Task> = returns.keys().map(|k| k.0).collect();
        t.dedup();
        t
    };
    for task in tasks {
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for ((_, algorithm), per_seed) in returns.iter().filter(|(k, _)| k.0 == task) {
            let smoothed: Vec<Vec<f64>> = per_seed.iter().map(|r| moving_average(r, window)).collect();
            let band = aggregate(&smoothed);
            let shortest = per_seed.iter().map(Vec::len).min().unwrap_or(0);
            let offset = window.min(shortest).saturating_sub(1);
            let episodes: Vec<usize> = (0..band.median.len()).map(|i| i + offset).collect();
            for (i, ep) in episodes.iter().enumerate() {
                rows.push(RewardRow {
                    version: REPORT_VERSION,
                    algorithm: *algorithm,
                    episode: *ep,
                    median: band.median[i],
                    q25: band.q25[i],
                    q75: band.q75[i],
                    seeds: per_seed.len(),
                });
            }
            series.push(Series {
                label: algorithm.to_string(),
                points: episodes
                    .iter()
                    .zip(&band.median)
                    .map(|(e, m)| (*e as f64, *m))
                    .collect(),
                band: Some(band.q25.iter().copied().zip(band.q75.iter().copied()).collect()),
            });

            let per_seed_final: Vec<f64> = per_seed
                .iter()
                .filter(|r| !r.is_empty())
                .map(|r| final_window_median(r))
                .collect();
            if !per_seed_final.is_empty() {
                finals.push(FinalRow {
                    version: REPORT_VERSION,
                    task,
                    algorithm: *algorithm,
                    seeds: per_seed_final.len(),
                    median: median(&per_seed_final),
                    q25: quantile(&per_seed_final, 0.25),
                    q75: quantile(&per_seed_final, 0.75),
                });
            }
            outcome.curves.insert(
                (task, *algorithm),
                Curve {
                    seeds: per_seed.len(),
                    episodes,
                    band,
                },
            );
        }
        let csv_name = format!("rewards_{}.csv", task.as_str());
        let svg_name = format!("rewards_{}.svg", task.as_str());
        write_csv(
            &out.join(&csv_name),
            &["version", "algorithm", "episode", "median", "q25", "q75", "seeds"],
            rows,
        )?;
        let title = format!("Team reward, {} (moving average {window})", task.as_str());
        write_text(
            &out.join(&svg_name),
            &svg::line_chart(&title, "episode", "team return", &series),
        )?;
        outcome.files.push(csv_name);
        outcome.files.push(svg_name);
    }
    write_csv(
        &out.join(FINAL_RETURNS_FILE),
        &["version", "task", "algorithm", "seeds", "median", "q25", "q75"],
        finals,
    )?;
    outcome.files.push(FINAL_RETURNS_FILE.into());

    let mut participation: BTreeMap<(Task, Algorithm), Vec<Vec<u64>>> = BTreeMap::new();
    let mut distance_rows = Vec::new();
    let mut distance_series = Vec::new();
    let mut last_key = None;
    for run in &runs.eval {
        let p_path = run.dir.join(PARTICIPATION_FILE);
        let rows: Vec<ParticipationRow> = read_rows(&p_path)?;
        for r in &rows {
            check_eval_version(&p_path, r.version)?;
        }
        manifest.inputs.push(files::digest_file(&p_path)?);
        participation
            .entry((run.task, run.algorithm))
            .or_default()
            .push(rows.iter().map(|r| r.participation).collect());

        // Distance series come from the lowest seed of each algorithm.
        if last_key == Some((run.task, run.algorithm)) {
            continue;
        }
        last_key = Some((run.task, run.algorithm));
        let d_path = run.dir.join(DISTANCE_FILE);
        if !d_path.is_file() {
            continue;
        }
        let rows: Vec<DistanceRow> = read_rows(&d_path)?;
        for r in &rows {
            check_eval_version(&d_path, r.version)?;
        }
        manifest.inputs.push(files::digest_file(&d_path)?);
        distance_series.push(Series {
            label: format!("{} {} (seed {})", run.task.as_str(), run.algorithm, run.seed),
            points: rows.iter().map(|r| (r.step as f64, r.distance_sum as f64)).collect(),
            band: None,
        });
        distance_rows.extend(rows.into_iter().map(|r| SeriesDistanceRow {
            version: REPORT_VERSION,
            task: run.task,
            algorithm: run.algorithm,
            seed: run.seed,
            step: r.step,
            distance_sum: r.distance_sum,
        }));
    }

    if !runs.eval.is_empty() {
        let agents = participation.values().flatten().map(Vec::len).max().unwrap_or(0);
        let mut rows = Vec::new();
        let mut bars = Vec::new();
        for ((task, algorithm), per_seed) in &participation {
            let means: Vec<f64> = (0..agents)
                .map(|a| {
                    per_seed
                        .iter()
                        .map(|p| p.get(a).copied().unwrap_or(0) as f64)
                        .sum::<f64>()
                        / per_seed.len() as f64
                })
                .collect();
            for (agent, m) in means.iter().enumerate() {
                rows.push(MeanParticipationRow {
                    version: REPORT_VERSION,
                    task: *task,
                    algorithm: *algorithm,
                    agent,
                    participation: *m,
                    seeds: per_seed.len(),
                });
            }
            bars.push((format!("{} {algorithm}", task.as_str()), means));
        }
        write_csv(
            &out.join(PARTICIPATION_CSV),
            &["version", "task", "algorithm", "agent", "participation", "seeds"],
            rows,
        )?;
        let categories: Vec<String> = (0..agents).map(|a| format!("agent {a}")).collect();
        write_text(
            &out.join(PARTICIPATION_SVG),
            &svg::bar_chart(
                "Participation per agent (mean over seeds)",
                "agent",
                "events",
                &categories,
                &bars,
            ),
        )?;
        write_csv(
            &out.join(DISTANCE_CSV),
            &["version", "task", "algorithm", "seed", "step", "distance_sum"],
            distance_rows,
        )?;
        write_text(
            &out.join(DISTANCE_SVG),
            &svg::line_chart(
                "Summed pairwise distance, one episode",
                "step",
                "distance",
                &distance_series,
            ),
        )?;
        outcome
            .files
            .extend([PARTICIPATION_CSV, PARTICIPATION_SVG, DISTANCE_CSV, DISTANCE_SVG].map(String::from));
    }

    manifest.files = outcome.files.clone();
    files::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_small_case() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 10), vec![2.0]);
        assert!(moving_average(&[], 5).is_empty());
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&xs, 0.75), 3.25);
    }

    #[test]
    fn final_window_is_last_tenth() {
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(final_window_median(&xs), 94.5);
        assert_eq!(final_window_median(&[7.0]), 7.0);
    }

    #[test]
    fn single_series_band_collapses() {
        let band = aggregate(&[vec![1.0, 5.0, 2.0]]);
        assert_eq!(band.median, vec![1.0, 5.0, 2.0]);
        assert_eq!(band.q25, band.median);
        assert_eq!(band.q75, band.median);
    }

    proptest! {
        #[test]
        fn moving_average_length_and_values(xs in proptest::collection::vec(-10.0f64..10.0, 1..200), w in 1usize..50) {
            let ma = moving_average(&xs, w);
            let wc = w.min(xs.len());
            prop_assert_eq!(ma.len(), xs.len() - wc + 1);
            for (i, m) in ma.iter().enumerate() {
                let direct: f64 = xs[i..i + wc].iter().sum::<f64>() / wc as f64;
                prop_assert!((m - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn band_is_ordered(series in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 1..20), 1..6)) {
            let band = aggregate(&series);
            prop_assert_eq!(band.median.len(), series.iter().map(Vec::len).min().unwrap());
            for i in 0..band.median.len() {
                prop_assert!(band.q25[i] <= band.median[i] + 1e-12);
                prop_assert!(band.median[i] <= band.q75[i] + 1e-12);
            }
        }
    }
}
