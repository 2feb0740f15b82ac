use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn acoustic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acoustic"))
        .args(args)
        .env_remove("ACOUSTIC_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = acoustic(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_summary(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("summary line");
    serde_json::from_str(last).expect("summary is JSON")
}

fn simulate(dir: &Path, nodes: &str, days: &str) {
    ok(&[
        "simulate",
        "--output-dir",
        dir.to_str().unwrap(),
        "--nodes",
        nodes,
        "--days",
        days,
    ]);
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "3", "1");
    simulate(&b, "3", "1");
    for f in ["windows.jsonl", "truth.csv", "meta.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let lines = fs::read_to_string(a.join("windows.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 3 * 288);
}

#[test]
fn detect_output_does_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "4", "2");
    let input = sim.join("windows.jsonl");
    let mut outputs = Vec::new();
    for (run, workers) in [("one", "1"), ("eight", "8"), ("again", "8")] {
        let dir = tmp.path().join(run);
        ok(&[
            "--workers",
            workers,
            "detect",
            "--input",
            input.to_str().unwrap(),
            "--output-dir",
            dir.to_str().unwrap(),
        ]);
        outputs.push(dir);
    }
    for f in ["results.jsonl", "rain.csv", "qq.csv", "meta.json"] {
        let first = read(&outputs[0].join(f));
        assert!(!first.is_empty(), "{f}");
        for other in &outputs[1..] {
            assert_eq!(first, read(&other.join(f)), "{f}");
        }
    }
}

#[test]
fn fixed_beta_is_echoed_in_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", "1");
    let out = tmp.path().join("out");
    ok(&[
        "detect",
        "--input",
        sim.join("windows.jsonl").to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--beta-mode",
        "fixed",
        "--beta-fixed",
        "0.43",
    ]);
    let meta: Value = serde_json::from_slice(&read(&out.join("meta.json"))).unwrap();
    assert_eq!(meta["config"]["beta"]["mode"], "fixed");
    assert_eq!(meta["config"]["beta"]["value"], 0.43);
    assert!(meta["node_days"].as_array().unwrap().iter().all(|d| d["beta"] == 0.43));
}

#[test]
fn env_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", "1");
    let out = tmp.path().join("out");
    let run = Command::new(env!("CARGO_BIN_EXE_acoustic"))
        .args(["detect", "--input"])
        .arg(sim.join("windows.jsonl"))
        .arg("--output-dir")
        .arg(&out)
        .env("ACOUSTIC_PCA_K", "3")
        .env("ACOUSTIC_LINKAGES", "average,ward")
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let meta: Value = serde_json::from_slice(&read(&out.join("meta.json"))).unwrap();
    assert_eq!(meta["config"]["pca_k"], 3);
    assert_eq!(meta["config"]["linkages"], serde_json::json!(["average", "ward"]));
}

#[test]
fn compress_one_day_gives_288_records() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--output-dir",
        sim.to_str().unwrap(),
        "--nodes",
        "2",
        "--days",
        "1",
        "--raw-node-day",
        "2:0",
    ]);
    let out = tmp.path().join("compressed.jsonl");
    ok(&[
        "compress",
        "--input",
        sim.join("raw.csv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let compressed = fs::read_to_string(&out).unwrap();
    assert_eq!(compressed.lines().count(), 288);
    // the simulator's own windows for node 2 are the same records
    let simulated = fs::read_to_string(sim.join("windows.jsonl")).unwrap();
    let node2: Vec<&str> = simulated.lines().filter(|l| l.contains("\"node_id\":\"2\"")).collect();
    assert_eq!(compressed.lines().collect::<Vec<_>>(), node2);
}

#[test]
fn malformed_csv_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw.csv");
    fs::write(
        &input,
        "ts,node_id,value\n2016-07-16T14:00:00Z,7,5\n2016-07-16T14:00:00.100Z,7,loud\n",
    )
    .unwrap();
    let out = acoustic(&[
        "compress",
        "--input",
        input.to_str().unwrap(),
        "--output",
        tmp.path().join("w.jsonl").to_str().unwrap(),
    ]);
    let summary = error_summary(&out);
    assert_eq!(summary["status"], "error");
    assert_eq!(summary["errors"][0]["kind"], "parse");
    assert!(summary["errors"][0]["message"].as_str().unwrap().contains("line 3"));
    assert!(!tmp.path().join("w.jsonl").exists());
}

#[test]
fn rain_is_estimated_without_one_node() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3", "1");
    let kept: String = fs::read_to_string(sim.join("windows.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"node_id\":\"3\""))
        .map(|l| format!("{l}\n"))
        .collect();
    let input = tmp.path().join("two_nodes.jsonl");
    fs::write(&input, kept).unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "detect",
        "--input",
        input.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    let rain = fs::read_to_string(out.join("rain.csv")).unwrap();
    assert!(rain.lines().count() > 1, "{rain}");
    assert!(rain.lines().skip(1).all(|l| l.ends_with(",2")));
}

#[test]
fn node_day_failures_exit_nonzero_with_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", "1");
    // node 2 keeps only two windows, too few to cluster
    let mut node2 = 0;
    let kept: String = fs::read_to_string(sim.join("windows.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| {
            if l.contains("\"node_id\":\"2\"") {
                node2 += 1;
                node2 <= 2
            } else {
                true
            }
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let input = tmp.path().join("partial.jsonl");
    fs::write(&input, kept).unwrap();
    let out_dir = tmp.path().join("out");
    let out = acoustic(&[
        "detect",
        "--input",
        input.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    let summary = error_summary(&out);
    let message = summary["errors"][0]["message"].as_str().unwrap();
    assert!(message.starts_with("node 2 on 2016-07-01"), "{message}");
    let results = fs::read_to_string(out_dir.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 288);
}

#[test]
fn invalid_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", "1");
    let out = acoustic(&[
        "detect",
        "--input",
        sim.join("windows.jsonl").to_str().unwrap(),
        "--output-dir",
        tmp.path().join("out").to_str().unwrap(),
        "--k-clusters",
        "4",
    ]);
    assert_eq!(error_summary(&out)["errors"][0]["kind"], "config");
}

#[test]
fn evaluate_writes_confusion_table() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3", "1");
    let det = tmp.path().join("det");
    ok(&[
        "detect",
        "--input",
        sim.join("windows.jsonl").to_str().unwrap(),
        "--output-dir",
        det.to_str().unwrap(),
    ]);
    let truth = sim.join("truth.csv");
    let from_results = tmp.path().join("a.csv");
    let spec = format!("raw+PCA+WT={}", det.join("results.jsonl").display());
    ok(&[
        "evaluate",
        "--truth",
        truth.to_str().unwrap(),
        "--results",
        &spec,
        "--output",
        from_results.to_str().unwrap(),
    ]);
    let ablation = tmp.path().join("b.csv");
    ok(&[
        "evaluate",
        "--truth",
        truth.to_str().unwrap(),
        "--windows",
        sim.join("windows.jsonl").to_str().unwrap(),
        "--output",
        ablation.to_str().unwrap(),
    ]);
    let a = fs::read_to_string(&from_results).unwrap();
    let b = fs::read_to_string(&ablation).unwrap();
    let header = "variant,true_detected_pct,false_positive_pct,false_negative_pct";
    assert_eq!(a.lines().next(), Some(header));
    assert_eq!(b.lines().count(), 5);
    let row = a.lines().nth(1).unwrap();
    assert!(b.lines().any(|l| l == row), "{row} not in\n{b}");
}
