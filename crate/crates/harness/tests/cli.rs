use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

const LJ: &str = r#"
[env]
task = "lumberjacks"
height = 6
width = 6
agents = 3
targets = 4

[learner]
algorithm = "icl"
episodes = 400

[run]
seeds = [0, 1]
trace_rate = 0.1
trace_tail = 50
"#;

fn icl(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_icl"));
    cmd.args(args).env_remove("ICL_OUTPUT_ROOT").env("RUST_LOG", "off");
    if let Some(r) = root {
        cmd.env("ICL_OUTPUT_ROOT", r);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn trace_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_is_byte_deterministic_and_manifest_hashes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(icl(&["train", "--config", p(&cfg), "--out", p(&a)], None));
    ok(icl(&["train", "--config", p(&cfg), "--out", p(&b)], None));
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 2 * 4);
    assert_eq!(ta, tb);

    let expected: String = Sha256::digest(LJ.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    for seed in [0, 1] {
        let m = json(&a.join(format!("lumberjacks/icl/seed-{seed}/manifest.json")));
        assert_eq!(m["config_sha256"], Value::String(expected.clone()));
        assert_eq!(m["seed"], seed);
    }
}

#[test]
fn output_root_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let root = tmp.path().join("root");
    ok(icl(
        &[
            "train",
            "--config",
            p(&cfg),
            "--seed",
            "3",
            "--override",
            "learner.episodes=20",
        ],
        Some(&root),
    ));
    assert!(root.join("lumberjacks/icl/seed-3/metrics.csv").is_file());
}

#[test]
fn missing_env_section_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = LJ.split("[learner]").nth(1).unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("[learner]{text}"));
    let out = icl(&["train", "--config", p(&cfg), "--out", p(tmp.path())], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[env]"));
}

#[test]
fn bad_override_and_unknown_flag_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let out = icl(&["train", "--config", p(&cfg), "--override", "learner.alpha=-1"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = icl(&["train", "--config", p(&cfg), "--bogus"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = icl(&["train", "--config", p(&cfg), "--override", "run.seeds=[1,1]"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_sampling_matches_seeded_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let seed = 11u64;
    ok(icl(
        &[
            "train",
            "--config",
            p(&cfg),
            "--out",
            p(tmp.path()),
            "--seed",
            &seed.to_string(),
            "--override",
            "learner.episodes=1000",
            "--override",
            "run.trace_rate=0.1",
            "--override",
            "run.trace_tail=0",
        ],
        None,
    ));
    // One uniform draw per episode on stream 3 of the seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let expected: Vec<u64> = (0..1000u64).filter(|_| rng.random::<f64>() < 0.1).collect();
    assert!((60..=140).contains(&expected.len()));

    let lines = trace_lines(&tmp.path().join(format!("lumberjacks/icl/seed-{seed}/traces.jsonl")));
    let mut episodes: Vec<u64> = lines.iter().map(|l| l["episode"].as_u64().unwrap()).collect();
    episodes.dedup();
    assert_eq!(episodes, expected);
}

fn trained(tmp: &Path, overrides: &[&str]) -> PathBuf {
    let cfg = write_config(tmp, "lj.toml", LJ);
    let mut args = vec!["train", "--config", p(&cfg), "--out", p(tmp), "--seed", "0"];
    for o in overrides {
        args.extend(["--override", o]);
    }
    ok(icl(&args, None));
    tmp.join("lumberjacks/icl/seed-0")
}

#[test]
fn eval_writes_one_participation_row_per_agent() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &[]);
    let snap = run.join("qtable.json");
    ok(icl(
        &["eval", "--snapshot", p(&snap), "--episodes", "50", "--seed", "9"],
        None,
    ));
    let part = std::fs::read_to_string(run.join("eval/participation.csv")).unwrap();
    let rows: Vec<&str> = part.lines().collect();
    assert_eq!(rows[0], "version,agent,participation");
    assert_eq!(rows.len(), 1 + 3);

    let dist = std::fs::read_to_string(run.join("eval/distance.csv")).unwrap();
    let steps = dist.lines().count() - 1;
    assert!((1..=100).contains(&steps));
    let summary = json(&run.join("eval/summary.json"));
    assert_eq!(summary["episodes"], 50);
    assert_eq!(summary["team_returns"].as_array().unwrap().len(), 50);

    let first = tree(&run.join("eval"));
    ok(icl(
        &["eval", "--snapshot", p(&snap), "--episodes", "50", "--seed", "9"],
        None,
    ));
    assert_eq!(tree(&run.join("eval")), first);
}

#[test]
fn eval_with_zero_episodes_writes_header_only_files() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &["learner.episodes=20"]);
    let out = tmp.path().join("ev0");
    ok(icl(
        &[
            "eval",
            "--snapshot",
            p(&run.join("qtable.json")),
            "--episodes",
            "0",
            "--out",
            p(&out),
        ],
        None,
    ));
    assert_eq!(
        std::fs::read_to_string(out.join("distance.csv")).unwrap(),
        "version,step,distance_sum\n"
    );
    let part = std::fs::read_to_string(out.join("participation.csv")).unwrap();
    assert_eq!(part.lines().count(), 1 + 3);
    assert!(part.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn eval_rejects_a_different_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &["learner.episodes=20"]);
    let cfg = tmp.path().join("lj.toml");
    let out = icl(
        &[
            "eval",
            "--snapshot",
            p(&run.join("qtable.json")),
            "--config",
            p(&cfg),
            "--override",
            "env.targets=2",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot mismatch"));
    ok(icl(
        &[
            "eval",
            "--snapshot",
            p(&run.join("qtable.json")),
            "--config",
            p(&cfg),
            "--episodes",
            "2",
        ],
        None,
    ));
}

fn counts(report: &Value) -> [u64; 4] {
    ["true_positives", "true_negatives", "false_positives", "false_negatives"].map(|k| report[k].as_u64().unwrap())
}

fn rewarded_steps(traces: &Path) -> u64 {
    trace_lines(traces)
        .iter()
        .filter(|l| l["reward"].as_f64().unwrap() > 0.0)
        .count() as u64
}

#[test]
fn discovery_report_satisfies_accounting_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &[]);
    let out = tmp.path().join("disc");
    ok(icl(&["discover", p(&run), "--out", p(&out)], None));
    let report = json(&out.join("report.json"));
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let total: u64 = counts(&report).iter().sum();
    assert_eq!(total, 3 * rewarded_steps(&run.join("traces.jsonl")));

    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("version,agent,score,edge"));
    assert_eq!(scores.lines().count(), 1 + 3);
    let matrix = json(&out.join("matrix.json"));
    assert_eq!(matrix["version"], 1);
    assert_eq!(matrix["matrix"]["agents"], 3);
}

#[test]
fn corrupted_trace_line_is_reported_with_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &["learner.episodes=60"]);
    let traces = run.join("traces.jsonl");
    let text = std::fs::read_to_string(&traces).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"version\": 1, \"episode\": ";
    std::fs::write(&traces, lines.join("\n")).unwrap();
    let out = icl(&["discover", p(&traces), "--out", p(&tmp.path().join("d"))], None);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("{}:5:", traces.display())), "{err}");
}

#[test]
fn discovery_counts_add_across_trace_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(icl(
        &["train", "--config", p(&cfg), "--out", p(&a), "--seed", "0"],
        None,
    ));
    ok(icl(
        &["train", "--config", p(&cfg), "--out", p(&b), "--seed", "1"],
        None,
    ));
    let run = |inputs: &[&Path], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["discover"];
        args.extend(inputs.iter().map(|i| p(i)));
        // A threshold no score reaches gives every fit the same gates.
        args.extend(["--out", p(&out), "--override", "discovery.threshold=1e6"]);
        ok(icl(&args, None));
        (json(&out.join("report.json")), json(&out.join("matrix.json")))
    };
    let (ra, ma) = run(&[&a], "da");
    let (rb, mb) = run(&[&b], "db");
    let (rab, mab) = run(&[&a, &b], "dab");
    let gates = |m: &Value| m["matrix"]["edges"].clone();
    assert_eq!(gates(&ma), gates(&mab));
    assert_eq!(gates(&mb), gates(&mab));
    let (ca, cb, cab) = (counts(&ra), counts(&rb), counts(&rab));
    for k in 0..4 {
        assert_eq!(cab[k], ca[k] + cb[k]);
    }
    assert_eq!(rab["trace_files"], 2);
}

#[test]
fn discover_rejects_unknown_trace_version() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &["learner.episodes=60"]);
    let traces = run.join("traces.jsonl");
    let text = std::fs::read_to_string(&traces).unwrap();
    std::fs::write(&traces, text.replacen("{\"version\":1", "{\"version\":7", 1)).unwrap();
    let out = icl(&["discover", p(&traces), "--out", p(&tmp.path().join("d"))], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn report_smooths_and_overlays_algorithms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lj.toml", LJ);
    let runs = tmp.path().join("runs");
    let e = "learner.episodes=250";
    ok(icl(
        &["train", "--config", p(&cfg), "--out", p(&runs), "--override", e],
        None,
    ));
    ok(icl(
        &[
            "train",
            "--config",
            p(&cfg),
            "--out",
            p(&runs),
            "--override",
            e,
            "--override",
            "learner.algorithm=idql",
            "--seed",
            "4",
        ],
        None,
    ));
    let out = tmp.path().join("rep");
    ok(icl(&["report", p(&runs), "--window", "100", "--out", p(&out)], None));

    let rows = csv_rows(&out.join("rewards_lumberjacks.csv"));
    let icl_rows: Vec<_> = rows.iter().filter(|r| r[1] == "icl").collect();
    let idql_rows: Vec<_> = rows.iter().filter(|r| r[1] == "idql").collect();
    assert_eq!(icl_rows.len(), 250 - 100 + 1);
    assert_eq!(idql_rows.len(), 250 - 100 + 1);
    assert_eq!(icl_rows[0][2], "99");
    // A single idql seed collapses its band onto the median.
    assert!(idql_rows.iter().all(|r| r[3] == r[4] && r[4] == r[5] && r[6] == "1"));
    assert!(icl_rows.iter().all(|r| r[6] == "2"));

    // The first smoothed point is the mean of the first 100 returns.
    let metrics = csv_rows(&runs.join("lumberjacks/idql/seed-4/metrics.csv"));
    let mean: f64 = metrics[..100].iter().map(|r| r[2].parse::<f64>().unwrap()).sum::<f64>() / 100.0;
    assert!((idql_rows[0][3].parse::<f64>().unwrap() - mean).abs() < 1e-9);

    let svg = std::fs::read_to_string(out.join("rewards_lumberjacks.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">icl</text>") && svg.contains(">idql</text>"));

    let first = tree(&out);
    ok(icl(&["report", p(&runs), "--window", "100", "--out", p(&out)], None));
    assert_eq!(tree(&out), first);
}

#[test]
fn report_rejects_unknown_metrics_version() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), &["learner.episodes=30"]);
    let metrics = run.join("metrics.csv");
    let text = std::fs::read_to_string(&metrics).unwrap();
    std::fs::write(&metrics, text.replace("\n1,", "\n2,")).unwrap();
    let out = icl(&["report", p(tmp.path()), "--out", p(&tmp.path().join("rep"))], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema version"));
}
