use std::fs;
use std::path::{Path, PathBuf};

use crg_core::fixtures;
use crg_core::harness::{
    default_alpha_grid, load_alignment_manifest, load_qa_manifest, load_rerank_manifest, run_ablation,
    run_alignment, run_qa, run_rerank, HarnessOptions, TaskManifest,
};
use crg_core::{Aggregation, Error, GuidanceConfig, MaskStrategy};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn options() -> HarnessOptions {
    HarnessOptions {
        data_root: fixtures_dir(),
        workers: 2,
        detections: Some(fixtures_dir().join("detections.jsonl")),
        ..HarnessOptions::default()
    }
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_bundle(dir.path()).unwrap();
    let mut compared = 0;
    for entry in walk(dir.path()) {
        let rel = entry.strip_prefix(dir.path()).unwrap();
        let shipped = fs::read(fixtures_dir().join(rel)).unwrap_or_else(|_| panic!("missing {}", rel.display()));
        assert_eq!(shipped, fs::read(&entry).unwrap(), "{} is stale", rel.display());
        compared += 1;
    }
    assert_eq!(compared, 13);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn spatial_qa_accuracies() {
    let toy = fixtures::demo_toy();
    let rows = load_qa_manifest(fixtures_dir().join("qa.jsonl")).unwrap();
    let report = run_qa(&rows, &toy, &GuidanceConfig::default(), &options()).unwrap();
    let m = |name: &str| report.metric(name).unwrap();
    assert_eq!(m("crg.accuracy_individual"), 1.0);
    assert_eq!(m("crg.accuracy_pairs"), 1.0);
    assert_eq!(m("crg.accuracy_set_of_4"), 1.0);
    // Only the "on" image is right without guidance: the prior favours "on".
    assert_eq!(m("baseline.accuracy_individual"), 0.25);
    assert_eq!(m("baseline.accuracy_pairs"), 0.0);
    assert_eq!(m("baseline.accuracy_set_of_4"), 0.0);
    assert_eq!(report.support.total, 16);
    assert_eq!(report.support.scored, 16);

    let full = GuidanceConfig::default().with_strategy(MaskStrategy::FullImage);
    let report = run_qa(&rows, &toy, &full, &options()).unwrap();
    assert_eq!(report.metric("crg.accuracy_individual").unwrap(), 0.25);
}

#[test]
fn guidance_needs_enough_strength_to_flip_answers() {
    // The true question scores 2 + 2a, the "on" distractor 2.5 + 2g with
    // g = 128/255, so answers flip once a > 0.752.
    let toy = fixtures::demo_toy();
    let rows = load_qa_manifest(fixtures_dir().join("qa.jsonl")).unwrap();
    let acc = |alpha: f64| {
        run_qa(&rows, &toy, &GuidanceConfig::default().with_alpha(alpha), &options())
            .unwrap()
            .metric("crg.accuracy_individual")
            .unwrap()
    };
    assert_eq!(acc(0.7), 0.25);
    assert_eq!(acc(0.8), 1.0);
}

#[test]
fn alignment_reports_auroc_f1_and_pairs() {
    let toy = fixtures::demo_toy();
    let rows = load_alignment_manifest(fixtures_dir().join("align.jsonl")).unwrap();
    let report = run_alignment(&rows, &toy, &GuidanceConfig::default(), &options()).unwrap();
    assert_eq!(report.metric("crg.auroc"), Some(1.0));
    assert_eq!(report.metric("baseline.auroc"), Some(0.0));
    assert_eq!(report.metric("crg.f1"), Some(1.0));
    assert_eq!(report.metric("crg.paired_accuracy"), Some(1.0));
    assert_eq!(report.metric("baseline.paired_accuracy"), Some(0.0));
    assert_eq!(report.support.unguided, 0);
    let f1 = report.reports.iter().find(|r| r.metric == "crg.f1").unwrap();
    assert!(f1.threshold.is_some());
}

#[test]
fn rows_without_regions_fall_back_to_unguided() {
    let toy = fixtures::demo_toy();
    let rows = load_alignment_manifest(fixtures_dir().join("align.jsonl")).unwrap();
    for opts in [
        HarnessOptions {
            detections: None,
            ..options()
        },
        HarnessOptions {
            threshold: 0.9,
            ..options()
        },
    ] {
        let report = run_alignment(&rows, &toy, &GuidanceConfig::default(), &opts).unwrap();
        assert_eq!(report.support.unguided, 2);
        for ex in report.examples.iter().filter(|e| e.unguided) {
            assert_eq!(ex.crg_score, ex.baseline_score);
        }
    }
}

#[test]
fn rerank_picks_the_masked_evidence() {
    let toy = fixtures::demo_toy();
    let tasks = load_rerank_manifest(fixtures_dir().join("rerank.jsonl")).unwrap();
    let report = run_rerank(&tasks, &toy, &GuidanceConfig::default(), &options()).unwrap();
    assert_eq!(report.metric("crg.accuracy@0.5"), Some(1.0));
    assert_eq!(report.metric("baseline.accuracy@0.5"), Some(0.25));
    assert_eq!(report.metric("crg.accuracy@0.5.multi"), Some(1.0));
    assert_eq!(report.metric("baseline.accuracy@0.5.multi"), Some(0.0));
    let single = report.examples.iter().find(|e| e.id == "dogs-single").unwrap();
    let ranking = single.ranking.as_ref().unwrap();
    assert_eq!(ranking.len(), 1);
    assert!(ranking[0].region.same_box(&tasks[2].candidates[0]));
}

#[test]
fn ablation_grid_shapes() {
    let toy = fixtures::demo_toy();
    let manifest = TaskManifest::Qa(load_qa_manifest(fixtures_dir().join("qa.jsonl")).unwrap());
    let grid = run_ablation(
        &manifest,
        &toy,
        &GuidanceConfig::default(),
        &[0.0, 1.0],
        &[MaskStrategy::Separate, MaskStrategy::FullImage],
        &options(),
    )
    .unwrap();
    assert_eq!(grid.cells.len(), 4);
    assert_eq!(grid.cell(1.0, MaskStrategy::Separate).unwrap().value, Some(1.0));
    assert_eq!(grid.cell(1.0, MaskStrategy::FullImage).unwrap().value, Some(0.25));
    let csv = grid.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next(), Some("alpha,strategy,metric,value"));
    assert!(csv.contains("1,separate,crg.accuracy_individual,1\n"));

    let alphas = default_alpha_grid();
    assert_eq!(alphas.len(), 20);
    assert_eq!(alphas[3], 0.3);
    assert_eq!(alphas[19], 10.0);
    assert!(run_ablation(&manifest, &toy, &GuidanceConfig::default(), &[], &[MaskStrategy::Separate], &options()).is_err());
}

#[test]
fn single_each_with_score_aggregation_runs() {
    let toy = fixtures::demo_toy();
    let rows = load_qa_manifest(fixtures_dir().join("qa.jsonl")).unwrap();
    let mut config = GuidanceConfig::default().with_strategy(MaskStrategy::SingleEach);
    let by_logits = run_qa(&rows, &toy, &config, &options()).unwrap();
    config.aggregation = Aggregation::Scores;
    let by_scores = run_qa(&rows, &toy, &config, &options()).unwrap();
    for (a, b) in by_logits.examples.iter().zip(&by_scores.examples) {
        assert_eq!(a.baseline_score, b.baseline_score);
        assert!(a.crg_score.unwrap().is_finite() && b.crg_score.unwrap().is_finite());
    }
}

fn write_manifest(dir: &Path, rows: &[serde_json::Value]) -> PathBuf {
    let path = dir.join("m.jsonl");
    let body: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    fs::write(&path, body).unwrap();
    path
}

fn qa_row(id: usize, image: &str) -> serde_json::Value {
    serde_json::json!({
        "id": format!("q{id}"), "image_path": image, "question": "is the mug on the plate",
        "type": "yesno", "label": id.is_multiple_of(2), "boxes": [{"x0": 0, "y0": 0, "x1": 16, "y1": 16}],
    })
}

#[test]
fn failures_are_excluded_until_the_abort_fraction() {
    let toy = fixtures::demo_toy();
    let dir = tempfile::tempdir().unwrap();
    let mut rows: Vec<_> = (0..19).map(|i| qa_row(i, "images/mug_on.png")).collect();
    rows.push(qa_row(19, "images/missing.png"));
    let path = write_manifest(dir.path(), &rows);
    let report = run_qa(&load_qa_manifest(&path).unwrap(), &toy, &GuidanceConfig::default(), &options()).unwrap();
    assert_eq!(report.support.excluded, 1);
    assert_eq!(report.support.scored, 19);
    assert!(report.examples[19].error.is_some());

    rows.push(qa_row(20, "images/missing.png"));
    rows.push(qa_row(21, "images/missing.png"));
    let path = write_manifest(dir.path(), &rows);
    let err = run_qa(&load_qa_manifest(&path).unwrap(), &toy, &GuidanceConfig::default(), &options()).unwrap_err();
    assert!(matches!(err, Error::TooManyFailures { failed: 3, total: 22 }), "{err}");
}

#[test]
fn bad_manifests_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "\n").unwrap();
    assert!(matches!(load_qa_manifest(&empty), Err(Error::EmptyInput)));

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, qa_row(0, "a.png").to_string() + "\n{not json}\n").unwrap();
    match load_qa_manifest(&broken) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }

    let blank_text = dir.path().join("blank.jsonl");
    fs::write(&blank_text, r#"{"id": "x", "image_path": "a.png", "text": "  "}"#).unwrap();
    assert!(matches!(load_alignment_manifest(&blank_text), Err(Error::Parse { line: 1, .. })));

    let toy = fixtures::demo_toy();
    assert!(matches!(
        run_qa(&[], &toy, &GuidanceConfig::default(), &options()),
        Err(Error::EmptyInput)
    ));
}

#[test]
fn rerank_accepts_any_of_several_gold_boxes() {
    let toy = fixtures::demo_toy();
    let dir = tempfile::tempdir().unwrap();
    let row = serde_json::json!({
        "image_id": "both", "image_path": fixtures_dir().join("images/dogs.png"), "phrase": "dog with mouth open",
        "gold_box": {"x0": 0, "y0": 16, "x1": 16, "y1": 32},
        "gold_boxes": [{"x0": 32, "y0": 16, "x1": 48, "y1": 32}],
        "candidates": [{"x0": 0, "y0": 16, "x1": 16, "y1": 32, "score": 0.9},
                       {"x0": 32, "y0": 16, "x1": 48, "y1": 32, "score": 0.2}],
    });
    let path = write_manifest(dir.path(), &[row]);
    let tasks = load_rerank_manifest(&path).unwrap();
    assert_eq!(tasks[0].gold.len(), 2);
    let report = run_rerank(&tasks, &toy, &GuidanceConfig::default(), &options()).unwrap();
    assert_eq!(report.metric("crg.accuracy@0.5"), Some(1.0));
    assert_eq!(report.metric("baseline.accuracy@0.5"), Some(1.0));
}
