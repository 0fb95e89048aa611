use std::fs;
use std::path::{Path, PathBuf};

use icsrl::cli::{self, COMPARISON_HEADER, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, PAIRED_HEADER};
use icsrl::evaluation::{EpisodeLog, MetricsReport};

const TINY: &str = r#"{
  "schema_version": 1,
  "profile": "desk",
  "overrides": {
    "world": {"max_steps": 60},
    "train": {
      "episodes": 6,
      "min_fill": 32,
      "dqn": {"hidden": [8], "batch_size": 8},
      "intent": {"hidden": 4, "min_samples": 4, "batch_size": 4, "train_interval": 1}
    },
    "eval": {"episodes": 3, "threads": 2}
  }
}"#;

const QUIET: &str = r#"{
  "schema_version": 1,
  "overrides": {"world": {"enemies": {"count": 0}}, "eval": {"episodes": 4}}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["icsrl"];
    full.extend_from_slice(args);
    cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(cfg: &Path, algo: &str, out: &Path) -> i32 {
    run(&["train", "--config", s(cfg), "--algo", algo, "--seed", "4", "--out", s(out), "--profile", "desk"])
}

fn components(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.strip_suffix(".ckpt").map(str::to_string)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn train_writes_checkpoint_components() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY);
    let ics = dir.path().join("icsrl");
    assert_eq!(train(&cfg, "icsrl", &ics), EXIT_OK);
    assert_eq!(components(&ics), ["eva", "main", "nav", "predictor"]);
    for f in ["controller.json", "config.json", "training_log.csv", "manifest.json"] {
        assert!(ics.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ics.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([4]));
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 7);

    let ddqn = dir.path().join("ddqn");
    assert_eq!(train(&cfg, "ddqn", &ddqn), EXIT_OK);
    assert_eq!(components(&ddqn), ["main"]);
    let log = fs::read_to_string(ddqn.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
}

#[test]
fn train_and_eval_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(train(&cfg, "icsrl", &a), EXIT_OK);
    assert_eq!(train(&cfg, "icsrl", &b), EXIT_OK);
    let read = |p: PathBuf| fs::read(p).unwrap();
    assert_eq!(read(a.join("training_log.csv")), read(b.join("training_log.csv")));
    for c in ["nav", "main", "eva", "predictor"] {
        assert_eq!(read(a.join(format!("{c}.ckpt"))), read(b.join(format!("{c}.ckpt"))));
    }

    let (ra, rb) = (dir.path().join("ra.json"), dir.path().join("rb.json"));
    for (ck, report) in [(&a, &ra), (&a, &rb)] {
        let code = run(&["eval", "--checkpoint", s(ck), "--episodes", "3", "--seed-base", "50", "--report", s(report)]);
        assert_eq!(code, EXIT_OK);
    }
    assert_eq!(read(ra.clone()), read(rb.clone()));
    assert_eq!(read(ra.with_extension("jsonl")), read(rb.with_extension("jsonl")));
    let report: MetricsReport = serde_json::from_slice(&read(ra.clone())).unwrap();
    assert_eq!(report.episode_count, 3);
    assert_eq!(report.seeds, [50, 51, 52]);
    assert_eq!(report.policy, icsrl::evaluation::PolicyKind::Icsrl);
    assert!(dir.path().join("ra.json.manifest.json").is_file());

    let single = dir.path().join("one.json");
    assert_eq!(
        run(&["eval", "--checkpoint", s(&a), "--episodes", "1", "--report", s(&single)]),
        EXIT_OK
    );
    let one: MetricsReport = serde_json::from_slice(&read(single)).unwrap();
    let r = &one.reward;
    assert!([r.min, r.q1, r.median, r.q3, r.max].iter().all(|&v| v == r.mean));
}

#[test]
fn eval_rejects_missing_or_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY);
    let report = dir.path().join("r.json");
    let missing = dir.path().join("nowhere");
    assert_eq!(
        run(&["eval", "--checkpoint", s(&missing), "--report", s(&report)]),
        EXIT_INVALID
    );
    let ck = dir.path().join("ck");
    assert_eq!(train(&cfg, "ddqn", &ck), EXIT_OK);
    let other = write_config(dir.path(), "other.json", &TINY.replace("\"max_steps\": 60", "\"max_steps\": 61"));
    assert_eq!(
        run(&["eval", "--checkpoint", s(&ck), "--config", s(&other), "--report", s(&report)]),
        EXIT_INVALID
    );
    assert!(!report.exists());
    assert_eq!(
        run(&["eval", "--checkpoint", s(&ck), "--config", s(&cfg), "--episodes", "1", "--report", s(&report)]),
        EXIT_OK
    );

    let corrupted = dir.path().join("corrupt");
    fs::create_dir_all(&corrupted).unwrap();
    for f in ["controller.json", "config.json", "main.ckpt"] {
        fs::copy(ck.join(f), corrupted.join(f)).unwrap();
    }
    fs::write(corrupted.join("main.ckpt"), b"not a checkpoint").unwrap();
    let code = run(&["eval", "--checkpoint", s(&corrupted), "--report", s(&report)]);
    assert_ne!(code, EXIT_OK);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["--version"]), EXIT_OK);
    assert_eq!(run(&["frobnicate"]), EXIT_INVALID);
    assert_eq!(run(&["train", "--algo", "icsrl"]), EXIT_INVALID);

    let bad_key = write_config(dir.path(), "bad.json", r#"{"schema_version":1,"overrides":{"train":{"dqn":{"gama":0.9}}}}"#);
    let out = dir.path().join("o");
    assert_eq!(train(&bad_key, "ddqn", &out), EXIT_INVALID);
    let bad_value = write_config(dir.path(), "bad2.json", r#"{"schema_version":1,"overrides":{"train":{"episodes":0}}}"#);
    assert_eq!(train(&bad_value, "ddqn", &out), EXIT_INVALID);
    let bad_schema = write_config(dir.path(), "bad3.json", r#"{"schema_version":7}"#);
    assert_eq!(train(&bad_schema, "ddqn", &out), EXIT_INVALID);
    let cfg = write_config(dir.path(), "tiny.json", TINY);
    assert_eq!(train(&cfg, "sarsa", &out), EXIT_INVALID);
    assert!(!out.join("manifest.json").exists());

    // A regular file where the output directory should go.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(train(&cfg, "ddqn", &blocker.join("sub")), EXIT_RUNTIME);

    let not_a_log = write_config(dir.path(), "notes.csv", "a,b\n1,2\n");
    let plot_out = dir.path().join("c.csv");
    assert_eq!(
        run(&["plot", "--input", s(&not_a_log), "--kind", "curve", "--out", s(&plot_out)]),
        EXIT_INVALID
    );
    assert_eq!(
        run(&["plot", "--input", s(&not_a_log), "--kind", "trajectory", "--out", s(&plot_out)]),
        EXIT_INVALID
    );
}

#[test]
fn compare_runs_baselines_without_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let code = run(&["compare", "--algos", "pso,gt,greedy", "--episodes", "2", "--out", s(&out), "--threads", "1"]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], COMPARISON_HEADER);
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["pso", "game_theory", "greedy"]);
    for r in &rows[1..] {
        assert_eq!(r.split(',').count(), COMPARISON_HEADER.split(',').count());
    }

    let paired = fs::read_to_string(out.join("episodes.csv")).unwrap();
    let mut lines = paired.lines();
    assert_eq!(lines.next(), Some(PAIRED_HEADER));
    let mut seeds: std::collections::BTreeMap<String, Vec<u64>> = Default::default();
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        seeds.entry(cols[0].into()).or_default().push(cols[1].parse().unwrap());
    }
    assert_eq!(seeds.len(), 3);
    let first = seeds.values().next().unwrap().clone();
    assert_eq!(first.len(), 2);
    assert!(seeds.values().all(|v| *v == first));

    for k in ["pso", "game_theory", "greedy"] {
        let r: MetricsReport = serde_json::from_str(&fs::read_to_string(out.join(format!("{k}_report.json"))).unwrap()).unwrap();
        assert_eq!(r.seeds, first);
        let logs = EpisodeLog::read_jsonl(fs::File::open(out.join(format!("{k}_episodes.jsonl"))).map(std::io::BufReader::new).unwrap()).unwrap();
        assert_eq!(logs.iter().map(|l| l.seed).collect::<Vec<_>>(), first);
    }
}

#[test]
fn compare_needs_checkpoints_for_learned_policies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    assert_eq!(run(&["compare", "--algos", "greedy,icsrl", "--episodes", "1", "--out", s(&out)]), EXIT_INVALID);
    let empty = dir.path().join("ck");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(
        run(&["compare", "--algos", "ddqn", "--episodes", "1", "--out", s(&out), "--checkpoints", s(&empty)]),
        EXIT_INVALID
    );
    assert_eq!(run(&["compare", "--algos", "greedy,sarsa", "--out", s(&out)]), EXIT_INVALID);

    let cfg = write_config(dir.path(), "tiny.json", TINY);
    assert_eq!(train(&cfg, "ddqn", &empty.join("ddqn")), EXIT_OK);
    assert_eq!(
        run(&["compare", "--algos", "ddqn,greedy", "--episodes", "2", "--out", s(&out), "--checkpoints", s(&empty)]),
        EXIT_OK
    );
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn curve_plot_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(train(&cfg, "ca", &a), EXIT_OK);
    assert_eq!(
        run(&["train", "--config", s(&cfg), "--algo", "ca", "--seed", "5", "--out", s(&b)]),
        EXIT_OK
    );
    let out = dir.path().join("curve.csv");
    let code = run(&[
        "plot",
        "--input",
        s(&a.join("training_log.csv")),
        "--input",
        s(&b.join("training_log.csv")),
        "--kind",
        "curve",
        "--out",
        s(&out),
        "--window",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(fs::read_to_string(out.with_extension("svg")).unwrap().contains("<polyline"));
}

fn polyline(svg: &str, class: &str) -> Vec<(f64, f64)> {
    let tag = format!(r#"class="{class}" points=""#);
    let start = svg.find(&tag).unwrap() + tag.len();
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end]
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn trajectory_plot_of_a_straight_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "quiet.json", QUIET);
    let out = dir.path().join("cmp");
    assert_eq!(
        run(&["compare", "--algos", "greedy", "--config", s(&cfg), "--episodes", "1", "--out", s(&out)]),
        EXIT_OK
    );
    let svg_path = dir.path().join("traj.svg");
    let code = run(&[
        "plot",
        "--input",
        s(&out.join("greedy_episodes.jsonl")),
        "--kind",
        "trajectory",
        "--out",
        s(&svg_path),
    ]);
    assert_eq!(code, EXIT_OK);
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches(r#"class="target""#).count(), 1);
    let world = icsrl::environment::WorldConfig::desk_scale();
    let scale = icsrl::cli::plot::CANVAS / world.field_size;
    let r_attr = format!(r#"r="{}""#, world.target.effective_radius * scale);
    let target_line = svg.lines().find(|l| l.contains(r#"class="target""#)).unwrap();
    assert!(target_line.contains(&r_attr), "{target_line}");

    let pts = polyline(&svg, "friendly");
    assert!(pts.len() > 10);
    let (p0, pn) = (pts[0], pts[pts.len() - 1]);
    let (dx, dy) = (pn.0 - p0.0, pn.1 - p0.1);
    let len = dx.hypot(dy);
    for p in &pts {
        let off = ((p.0 - p0.0) * dy - (p.1 - p0.1) * dx).abs() / len;
        assert!(off < 1e-6, "point {p:?} is {off} off the line");
    }

    let csv = fs::read_to_string(svg_path.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + pts.len());
    assert_eq!(
        run(&["plot", "--input", s(&out.join("greedy_episodes.jsonl")), "--kind", "trajectory", "--out", s(&svg_path), "--episode", "5"]),
        EXIT_INVALID
    );
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_icsrl");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap();
    let ok = status(&["--version"]);
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&ok.stdout).contains(env!("CARGO_PKG_VERSION")));
    let bad = status(&["eval", "--checkpoint", "/nonexistent", "--report", "/nonexistent/r.json"]);
    assert_eq!(bad.status.code(), Some(EXIT_INVALID));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no checkpoint"));
}
