mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;
use trapdex::build_adjudication_prompt;
use trapdex::text::prompt_hash;

fn trapdex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trapdex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = trapdex(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "trapdex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn f(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

/// Builds the database and query stores from the committed embedding fixtures.
fn stores(dir: &Path) -> (PathBuf, PathBuf) {
    let db = dir.join("db");
    let q = dir.join("q");
    ok(&[
        "ingest",
        "--embeddings",
        &f("db_embeddings.jsonl"),
        "--out",
        s(&db),
        "--database",
    ]);
    ok(&[
        "ingest",
        "--embeddings",
        &f("query_embeddings.jsonl"),
        "--out",
        s(&q),
        "--variant",
        "cropped",
    ]);
    (db, q)
}

#[test]
fn search_matches_brute_force_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (db, q) = stores(dir.path());
    for k in ["1", "3"] {
        let got = ok(&["search", "--db", s(&db), "--queries", s(&q), "--metric", "l2", "-k", k]);
        let want = std::fs::read_to_string(fixture(&format!("search_l2_k{k}.golden.jsonl"))).unwrap();
        assert_eq!(got, want, "k = {k}");
    }
    let out = dir.path().join("n.jsonl");
    ok(&[
        "search",
        "--db",
        s(&db),
        "--queries",
        s(&q),
        "-k",
        "3",
        "--threads",
        "2",
        "--precision",
        "f64",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        std::fs::read_to_string(fixture("search_l2_k3.golden.jsonl")).unwrap()
    );
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (db, q) = stores(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "command = \"search\"\n[search]\ndb = {:?}\nqueries = {:?}\nk = 3\nmetric = \"l2\"\n",
            s(&db),
            s(&q)
        ),
    )
    .unwrap();
    let from_file = ok(&["--config", s(&cfg)]);
    assert_eq!(
        from_file,
        std::fs::read_to_string(fixture("search_l2_k3.golden.jsonl")).unwrap()
    );
    let overridden = ok(&["--config", s(&cfg), "search", "-k", "1"]);
    assert_eq!(
        overridden,
        std::fs::read_to_string(fixture("search_l2_k1.golden.jsonl")).unwrap()
    );
}

#[test]
fn evaluate_perfect_predictions() {
    let out = trapdex(&[
        "evaluate",
        "--preds",
        &f("preds_perfect.jsonl"),
        "--truth",
        &f("coco_ct.json"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["overall"]["top1"], 1.0);
    assert_eq!(report["overall"]["macro_f1"], 1.0);
    assert_eq!(report["overall"]["count"], 6);
    assert_eq!(report["groups"]["cis"]["count"], 4);
    assert_eq!(report["groups"]["trans"]["count"], 2);
    let table = String::from_utf8(out.stderr).unwrap();
    assert!(table.contains("100.0"), "{table}");

    let by_loc = ok(&[
        "evaluate",
        "--preds",
        &f("preds_perfect.jsonl"),
        "--truth",
        &f("coco_ct.json"),
        "--group-by",
        "location",
    ]);
    let report: Value = serde_json::from_str(&by_loc).unwrap();
    let keys: Vec<&String> = report["groups"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["1", "10", "2"]);
}

#[test]
fn classify_routes_by_detection() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("routed.jsonl");
    let (md, truth, perfect) = (f("md_batch.json"), f("coco_ct.json"), f("preds_perfect.jsonl"));
    let common = [
        "classify",
        "--detections",
        &md,
        "--annotations",
        &truth,
        "--crop-preds",
        &perfect,
    ];
    let mut args = common.to_vec();
    args.extend(["--full-preds", &perfect, "--out", s(&preds)]);
    ok(&args);
    let lines: Vec<Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let routes: Vec<(&str, &str)> = lines
        .iter()
        .map(|v| (v["image_id"].as_str().unwrap(), v["provenance"].as_str().unwrap()))
        .collect();
    assert_eq!(
        routes,
        [
            ("img01", "crop_classifier"),
            ("img02", "crop_classifier"),
            ("img03", "full_classifier"),
            ("img04", "full_classifier"),
            ("img05", "crop_classifier"),
            ("img06", "full_classifier"),
        ]
    );
    let report: Value =
        serde_json::from_str(&ok(&["evaluate", "--preds", s(&preds), "--truth", &f("coco_ct.json")])).unwrap();
    assert_eq!(report["overall"]["top1"], 1.0);

    // declaring undetected frames empty loses the raccoon and the failed-image bobcat
    let empty = dir.path().join("empty.jsonl");
    let mut args = common.to_vec();
    args.extend(["--strategy", "empty", "--out", s(&empty)]);
    ok(&args);
    let report: Value =
        serde_json::from_str(&ok(&["evaluate", "--preds", s(&empty), "--truth", &f("coco_ct.json")])).unwrap();
    assert!((report["overall"]["top1"].as_f64().unwrap() - 4.0 / 6.0).abs() < 1e-12);
}

#[test]
fn second_strategy_without_full_provider_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (db, q) = stores(dir.path());
    let out = trapdex(&[
        "classify",
        "--db",
        s(&db),
        "--queries",
        s(&q),
        "--detections",
        &f("md_batch.json"),
        "--strategy",
        "second",
        "--arrangement",
        "two",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("full-image provider"), "{err}");
}

#[test]
fn exit_codes_separate_usage_from_runtime() {
    assert_eq!(trapdex(&["search", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        trapdex(&["search", "--db", "/no/such/store", "--queries", "/no/such"])
            .status
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let (db, q) = stores(dir.path());
    assert_eq!(
        trapdex(&["search", "--db", s(&db), "--queries", s(&q), "-k", "0"])
            .status
            .code(),
        Some(1)
    );

    // a present but corrupt store fails at runtime
    let vectors = db.join("vectors.bin");
    let bytes = std::fs::read(&vectors).unwrap();
    std::fs::write(&vectors, &bytes[..bytes.len() - 1]).unwrap();
    let out = trapdex(&["search", "--db", s(&db), "--queries", s(&q)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);

    assert_eq!(trapdex(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_lists_every_flag() {
    let help = ok(&["classify", "--help"]);
    for flag in [
        "--db",
        "--queries",
        "--crop-preds",
        "--detections",
        "--annotations",
        "--strategy",
        "--arrangement",
        "--full-preds",
        "--full-queries",
        "--full-db",
        "--metric",
        "--mode",
        "-k",
        "--ranking-len",
        "--conf-threshold",
        "--animals-only",
        "--crop-variant",
        "--empty-label",
        "--threads",
        "--precision",
        "--out",
        "--config",
        "--verbose",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn crop_plan_from_annotations() {
    let out = ok(&[
        "crop-plan",
        "--detections",
        &f("md_batch.json"),
        "--annotations",
        &f("coco_ct.json"),
    ]);
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<&str> = lines.iter().map(|v| v["image_id"].as_str().unwrap()).collect();
    // the multi-species frame still gets a crop; only evaluation drops it
    assert_eq!(ids, ["img01", "img02", "img05", "img07"]);
    // 2048x1536, box (0.1, 0.2, 0.3, 0.4): pixels x 205..819, y 307..922, side 615
    assert_eq!(lines[0]["rect"], serde_json::json!([204, 307, 615, 615]));
    assert_eq!(lines[0]["pad"], serde_json::json!([0, 0, 0, 0]));
    assert_eq!(lines[0]["side"], 615);
    assert_eq!(lines[1]["category"], "animal");
}

#[test]
fn split_is_reproducible() {
    let a = ok(&[
        "split",
        "--annotations",
        &f("coco_ct.json"),
        "--scheme",
        "wct",
        "--seed",
        "7",
    ]);
    let b = ok(&[
        "split",
        "--annotations",
        &f("coco_ct.json"),
        "--scheme",
        "wct",
        "--seed",
        "7",
    ]);
    assert_eq!(a, b);
    assert!(a.starts_with("image_id,split\n"));
    assert_eq!(a.lines().count(), 7);

    let safari = ok(&[
        "split",
        "--annotations",
        &f("coco_ct.json"),
        "--scheme",
        "safari",
        "--x",
        "1",
    ]);
    assert!(safari.contains("img01,train") && safari.contains("img02,train"));
    assert!(safari.contains("img03,test") && safari.contains("img05,test"));
    assert_eq!(
        trapdex(&["split", "--annotations", &f("coco_ct.json"), "--scheme", "safari"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn prompt_with_replayed_answers() {
    let dir = tempfile::tempdir().unwrap();
    let captions = dir.path().join("captions.jsonl");
    std::fs::write(
        &captions,
        "{\"image_id\":\"img01\",\"caption\":\"a bobcat walking at night\"}\n{\"image_id\":\"img02\",\"caption\":\"grass\"}\n",
    )
    .unwrap();
    let cats = ["bobcat", "coyote", "raccoon"];
    let replay = dir.path().join("replay.jsonl");
    let mut lines = String::new();
    for (caption, response) in [("a bobcat walking at night", "Bobcat."), ("grass", "Coyote or raccoon")] {
        let prompt = build_adjudication_prompt(&cats, caption).unwrap();
        lines += &format!(
            "{{\"prompt_hash\":\"{}\",\"response\":{:?}}}\n",
            prompt_hash(&prompt),
            response
        );
    }
    std::fs::write(&replay, lines).unwrap();

    let out = ok(&[
        "prompt",
        "--annotations",
        &f("coco_ct.json"),
        "--captions",
        s(&captions),
        "--replay",
        s(&replay),
    ]);
    let rows: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(
        rows[0]["prompt"],
        "Write a one-word answer to this question: \"Which of the following animals is in the picture: bobcat, coyote, raccoon?\" Consider this image description in the answer: a bobcat walking at night."
    );
    assert_eq!(rows[0]["answer"], "bobcat");
    assert_eq!(rows[0]["label"], 1);
    assert_eq!(rows[1]["answer"], Value::Null);

    let catalog = ok(&["prompt", "--catalog"]);
    assert_eq!(catalog.lines().count(), 9);
}
