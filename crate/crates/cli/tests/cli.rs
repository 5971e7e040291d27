use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures_dir().join(rel).display().to_string()
}

fn crg(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crg"));
    for (key, _) in std::env::vars() {
        if key.starts_with("CRG_") {
            cmd.env_remove(key);
        }
    }
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    crg(args).output().unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn metric(report: &Value, name: &str) -> f64 {
    report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["metric"] == name)
        .unwrap_or_else(|| panic!("no {name}"))["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn mask_writes_one_file_per_view() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.png");
    let image = fixture("images/dogs.png");
    let base = ["mask", "--image", &image, "--box", "0,16,16,32", "--box", "32,16,48,32"];

    let o = out.display().to_string();
    let listed = json_ok(&[&base[..], &["--output", &o]].concat());
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert!(out.exists());

    let listed = json_ok(&[&base[..], &["--strategy", "single-each", "--output", &o]].concat());
    assert_eq!(listed.as_array().unwrap().len(), 2);
    assert!(dir.path().join("m-0.png").exists());
    assert!(dir.path().join("m-1.png").exists());
}

#[test]
fn malformed_box_is_a_usage_error() {
    let image = fixture("images/dogs.png");
    for bad in ["1,2,3", "0,0,x,4", "5,5,5,9"] {
        let out = run(&["mask", "--image", &image, "--box", bad, "--output", "x.png"]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn decode_shows_the_flip() {
    let image = fixture("images/bowl.png");
    let out = json_ok(&["decode", "--image", &image, "--question", "where is the bowl", "--box", "32,16,48,32"]);
    assert_eq!(out["text"], "right");
    assert_eq!(out["baseline_text"], "under");

    let out = json_ok(&[
        "decode", "--image", &image, "--question", "where is the bowl", "--box", "32,16,48,32", "--alpha", "0",
    ]);
    assert_eq!(out["text"], out["baseline_text"]);
    assert_eq!(out["guided"], out["baseline"]);
}

#[test]
fn decode_from_detections_falls_back_when_empty() {
    let image = fixture("images/ball.png");
    let dets = fixture("detections.jsonl");
    let args = ["score", "--image", &image, "--text", "a red ball", "--detections", &dets, "--image-id"];
    let out = json_ok(&[&args[..], &["ball"]].concat());
    assert_eq!(out["unguided"], false);
    assert!(out["crg_score"].as_f64().unwrap() > out["baseline_score"].as_f64().unwrap());

    let out = json_ok(&[&args[..], &["nothing-here"]].concat());
    assert_eq!(out["unguided"], true);
    assert_eq!(out["crg_score"], out["baseline_score"]);
}

#[test]
fn http_backend_needs_a_url() {
    let image = fixture("images/bowl.png");
    let out = run(&["decode", "--backend", "http", "--image", &image, "--question", "q", "--box", "0,0,4,4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--url"));
}

#[test]
fn unreachable_sidecar_is_a_backend_failure() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let manifest = fixture("qa.jsonl");
    let out = run(&["eval-qa", "--backend", "http", "--url", &url, "--timeout-secs", "2", "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_data_is_a_data_error() {
    let out = run(&["eval-qa", "--manifest", "/nonexistent/qa.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("e.jsonl");
    fs::write(&empty, "").unwrap();
    let out = run(&["eval-align", "--manifest", &empty.display().to_string()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_align_reports_perfect_auroc() {
    let report = json_ok(&["eval-align", "--manifest", &fixture("align.jsonl"), "--detections", &fixture("detections.jsonl")]);
    assert_eq!(metric(&report, "crg.auroc"), 1.0);
    assert_eq!(metric(&report, "baseline.auroc"), 0.0);
}

#[test]
fn eval_qa_and_span_reports() {
    let report = json_ok(&["eval-qa", "--manifest", &fixture("qa.jsonl")]);
    assert_eq!(metric(&report, "crg.accuracy_set_of_4"), 1.0);
    let report = json_ok(&["span", "--manifest", &fixture("span.jsonl")]);
    assert!(metric(&report, "crg.mean_p_correct") > metric(&report, "baseline.mean_p_correct"));
}

#[test]
fn ablate_grid_shapes() {
    let manifest = fixture("qa.jsonl");
    let grid = json_ok(&["ablate", "--task", "qa", "--manifest", &manifest, "--alphas", "0,1", "--strategies", "separate,full"]);
    assert_eq!(grid["cells"].as_array().unwrap().len(), 4);

    let out = run(&["ablate", "--task", "qa", "--manifest", &manifest, "--alphas", "0,1", "--format", "csv"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("alpha,strategy,metric,value\n"));

    let out = run(&["eval-qa", "--manifest", &manifest, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerank_single_candidate_keeps_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("r.jsonl");
    let row = serde_json::json!({
        "image_id": "only", "image_path": fixture("images/dogs.png"), "phrase": "dog",
        "candidates": [{"x0": 3, "y0": 5, "x1": 20, "y1": 30, "score": 0.4}],
    });
    fs::write(&manifest, row.to_string() + "\n").unwrap();
    let report = json_ok(&["rerank", "--manifest", &manifest.display().to_string(), "--data-root", "/"]);
    let top = &report["examples"][0]["ranking"][0]["region"];
    assert_eq!((top["x0"].as_i64(), top["y1"].as_i64()), (Some(3), Some(30)));
}

#[test]
fn worker_count_does_not_change_output() {
    for args in [
        vec!["eval-qa", "--manifest", "QA"],
        vec!["rerank", "--manifest", "RR"],
        vec!["ablate", "--task", "align", "--manifest", "AL", "--alphas", "0,0.5,1"],
    ] {
        let args: Vec<String> = args
            .iter()
            .map(|a| match *a {
                "QA" => fixture("qa.jsonl"),
                "RR" => fixture("rerank.jsonl"),
                "AL" => fixture("align.jsonl"),
                other => other.to_string(),
            })
            .collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let one = run(&[&args[..], &["--workers", "1", "--seed", "4"]].concat());
        let eight = run(&[&args[..], &["--workers", "8", "--seed", "4"]].concat());
        assert!(one.status.success());
        assert_eq!(one.stdout, eight.stdout, "{args:?}");
    }
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("crg.toml");
    fs::write(&config, "alpha = 0.0\nstrategy = \"full\"\n").unwrap();
    let config = config.display().to_string();
    let image = fixture("images/bowl.png");
    let base = ["decode", "--image", &image, "--question", "where is the bowl", "--max-tokens", "2", "--config", &config];

    let out = json_ok(&base);
    assert_eq!((out["alpha"].as_f64(), out["strategy"].as_str()), (Some(0.0), Some("full")));

    let out = crg(&base).env("CRG_ALPHA", "0.5").output().unwrap();
    let out: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(out["alpha"].as_f64(), Some(0.5));

    let out = crg(&[&base[..], &["--alpha", "2"]].concat()).env("CRG_ALPHA", "0.5").output().unwrap();
    let out: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(out["alpha"].as_f64(), Some(2.0));

    fs::write(&config, "alpah = 1.0\n").unwrap();
    assert_eq!(run(&base).status.code(), Some(2));
}

#[test]
fn output_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = run(&["eval-qa", "--manifest", &fixture("qa.jsonl"), "--output", &path.display().to_string()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["task"], "qa");
}

#[test]
fn fixtures_subcommand_writes_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fixtures", "--out", &dir.path().display().to_string()]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.path().join("qa.jsonl")).unwrap(),
        fs::read(fixtures_dir().join("qa.jsonl")).unwrap()
    );
}

#[test]
fn help_documents_flags_and_exit_codes() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for needle in ["--alpha", "--strategy", "--threshold", "--workers", "--backend", "--seed", "--output", "Exit codes"] {
        assert!(help.contains(needle), "help lacks {needle}");
    }
}
