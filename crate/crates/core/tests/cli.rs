mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{ok, serve, Reply};
use maspob::report::parse_round_log;
use maspob::runner::{config_hash, RunManifest};

fn maspob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maspob")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synthetic_config(budget: usize, evaluator: &str) -> String {
    format!(
        r#"{{
  "workflow": {{"n_agents": 3, "edges": [[0, 1], [1, 2]]}},
  "embeddings": {{"source": {{"synthetic": {{"dim": 4, "seed": 3}}}}, "prompts_per_agent": 5}},
  "evaluator": {evaluator},
  "optimizer": {{
    "budget_total": {budget},
    "surrogate": {{"hidden_dim": 8, "pretrain_epochs": 80, "patience": 30, "finetune_epochs": 20}}
  }},
  "chart": true
}}"#
    )
}

const LANDSCAPE: &str = r#"{"landscape": {"family": "coupled", "seed": 4, "noise_sigma": 0.02}}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &synthetic_config(10, LANDSCAPE));
    let out = tmp.path().join("out");
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let logs = parse_round_log(&csv).unwrap();
    assert!(logs.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));

    let manifest = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.status, "completed");
    assert_eq!(manifest.seed, 42);
    assert_eq!(manifest.config_hash, config_hash(&fs::read(out.join("config.json")).unwrap()));
    assert!(manifest.finished_at.is_some());
    for f in ["result.json", "convergence.svg", "checkpoint/state.json", "checkpoint/surrogate.bin", "checkpoint/bandit.bin"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["evaluator_calls"], 10);
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", "{\"workflow\": ");
    let out = tmp.path().join("out");
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let typo = synthetic_config(10, LANDSCAPE).replace("\"budget_total\"", "\"budget\"");
    let cfg = write_config(tmp.path(), "typo.json", &typo);
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("optimizer") && err.contains("line 6"), "{err}");
    assert!(!out.exists());

    let invalid = synthetic_config(5, LANDSCAPE);
    let cfg = write_config(tmp.path(), "invalid.json", &invalid);
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "pretrain_rounds == budget_total must be rejected");
    assert!(!out.exists());
}

#[test]
fn interrupted_run_resumes_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &synthetic_config(12, LANDSCAPE));
    let full = tmp.path().join("full");
    assert_eq!(code(&maspob(&["run", "--config", s(&cfg), "--out", s(&full)])), 0);

    let part = tmp.path().join("part");
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&part), "--stop-after", "6"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(part.join("rounds.csv")).unwrap().lines().count(), 7);
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&part), "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["rounds.csv", "result.json", "convergence.svg", "checkpoint/surrogate.bin", "checkpoint/bandit.bin"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f} differs");
    }
    let m = RunManifest::load(&part.join("manifest.json")).unwrap();
    assert_eq!(m.resumed_at.len(), 1);
}

#[test]
fn resume_refuses_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &synthetic_config(10, LANDSCAPE));
    let out = tmp.path().join("out");
    assert_eq!(code(&maspob(&["run", "--config", s(&cfg), "--out", s(&out), "--stop-after", "3"])), 0);
    let before = fs::read(out.join("rounds.csv")).unwrap();
    fs::write(&cfg, synthetic_config(10, LANDSCAPE).replace("\"seed\": 4", "\"seed\": 5")).unwrap();
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out), "--resume"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
    assert_eq!(fs::read(out.join("rounds.csv")).unwrap(), before);
}

#[test]
fn evaluator_failure_exits_3_and_checkpoint_resumes() {
    let healthy = Arc::new(AtomicUsize::new(0));
    let flag = Arc::clone(&healthy);
    let server = serve(move |k, _| {
        if k < 4 || flag.load(Ordering::SeqCst) == 1 {
            ok(0.1 + 0.05 * (k % 5) as f64)
        } else {
            Reply::Json(500, "{}".into())
        }
    });
    let evaluator = format!(
        r#"{{"remote": {{"endpoint": "{}", "timeout_s": 5, "retries": 0, "backoff_initial_ms": 1}}}}"#,
        server.url
    );
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "remote.json", &synthetic_config(8, &evaluator));
    let out = tmp.path().join("out");
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("round 5"));
    assert_eq!(fs::read_to_string(out.join("rounds.csv")).unwrap().lines().count(), 5);
    assert!(out.join("checkpoint/state.json").exists());
    assert_eq!(RunManifest::load(&out.join("manifest.json")).unwrap().status, "failed");

    healthy.store(1, Ordering::SeqCst);
    let o = maspob(&["run", "--config", s(&cfg), "--out", s(&out), "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("rounds.csv")).unwrap().lines().count(), 9);
    let rounds: Vec<u64> = server
        .requests
        .lock()
        .unwrap()
        .iter()
        .map(|r| serde_json::from_str::<serde_json::Value>(&r.body).unwrap()["round"].as_u64().unwrap())
        .collect();
    assert_eq!(rounds, vec![1, 2, 3, 4, 5, 5, 6, 7, 8]);
}

#[test]
fn chart_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &synthetic_config(10, LANDSCAPE));
    let out = tmp.path().join("out");
    assert_eq!(code(&maspob(&["run", "--config", s(&cfg), "--out", s(&out)])), 0);
    let svg_path = tmp.path().join("c.svg");
    let o = maspob(&["chart", "--log", s(&out.join("rounds.csv")), "--out", s(&svg_path)]);
    assert_eq!(code(&o), 0);
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        let pts = line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 10);
    }

    let empty = write_config(tmp.path(), "empty.csv", "round,phase,candidate,mu,sigma,ucb,observed,best_so_far,wall_time_s\n");
    let o = maspob(&["chart", "--log", s(&empty), "--out", s(&tmp.path().join("e.svg"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_command_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cmp.json", &synthetic_config(6, LANDSCAPE));
    let out = tmp.path().join("cmp");
    let o = maspob(&["compare", "--config", s(&cfg), "--strategies", "random", "--seeds", "20", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",random,")).count(), 21);
    assert!(out.join("timing.csv").exists() && out.join("summary.json").exists());

    let o = maspob(&["compare", "--config", s(&cfg), "--strategies", "coordinate,bogus", "--seeds", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_rejects_global_over_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let text = synthetic_config(6, LANDSCAPE).replace("\"budget_total\": 6,", "\"budget_total\": 6, \"search\": {\"global_cap\": 100},");
    let cfg = write_config(tmp.path(), "cmp.json", &text);
    let o = maspob(&["compare", "--config", s(&cfg), "--strategies", "global", "--seeds", "1", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));
}
