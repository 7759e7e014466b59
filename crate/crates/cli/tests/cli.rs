mod common;

use common::{assert_golden, copy_fixture, core_golden, dsattr, stderr, stdout};
use dsattr_core::io::LockedLog;

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = copy_fixture(dir.path());
    (dir, cfg.to_string_lossy().into_owned())
}

fn read(dir: &std::path::Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn similarity_reports_match_golden_files() {
    let (dir, _) = setup();
    let d = dir.path();
    let cases = [
        ("identity-color-64", "sets/fixture-color-64.semb", None),
        ("riders-merged-color-64", "sets/fixture-color-64.semb", Some("groupings/riders-merged.toml")),
        ("identity-gray-64", "sets/fixture-gray-64.semb", None),
    ];
    for (name, set, grouping) in cases {
        for (format, ext) in [("structured", "json"), ("markdown", "md")] {
            let out = format!("out/{name}.{ext}");
            let mut args = vec!["similarity", "--embeddings", set, "--format", format, "--out", &out];
            if let Some(g) = grouping {
                args.extend(["--grouping", g]);
            }
            let o = dsattr(d, &args);
            assert!(o.status.success(), "{}", stderr(&o));
            assert_golden(&format!("similarity-{name}.{ext}"), &read(d, &out));
        }
    }
}

#[test]
fn recommend_before_selection_exits_with_state_error() {
    let (dir, cfg) = setup();
    let o = dsattr(dir.path(), &["--config", &cfg, "recommend"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    for p in ["classes", "color", "resolution"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn estimate_flops_gray_prints_first_layer() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsattr(dir.path(), &["estimate-flops", "--model", "vgg19-32.spec", "--mode", "gray"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("- layer 1 (gray): 655.36 kFLOPS"), "{out}");
    assert!(out.contains("| conv1_1 | 32x32 | 655.36 |"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "reports/estimate-flops.json")).unwrap();
    assert_eq!(json["layer1_gray"], 655_360);
    assert_eq!(json["per_layer"][0]["flops"], 655_360);
}

#[test]
fn estimate_flops_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsattr(dir.path(), &["estimate-flops", "--model", "enb0-32", "--size", "32", "--size", "64", "--out", "f.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "f.json")).unwrap();
    assert_eq!(json["sweep"][0]["size"], 32);
    assert_eq!(json["sweep"][0]["flops"], json["total"]);
    assert!(json["sweep"][1]["flops"].as_u64() > json["sweep"][0]["flops"].as_u64());
}

#[test]
fn input_errors_exit_with_code_two() {
    let (dir, cfg) = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "name = \"bad\"\n[mapping]\nbike = \"x\"\n").unwrap();
    std::fs::write(d.join("broken.toml"), "annotations = [").unwrap();
    let cases: [&[&str]; 5] = [
        &["similarity", "--embeddings", "missing.semb"],
        &["--config", &cfg, "similarity", "--grouping", "bad.toml"],
        &["--config", "broken.toml", "similarity"],
        &["estimate-flops", "--model", "no-such-model"],
        &["estimate-flops", "--model", "vgg19-32", "--mode", "blue"],
    ];
    for args in cases {
        let o = dsattr(d, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn full_pipeline_matches_library_recommendation() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", cfg.as_str()];
        all.extend_from_slice(args);
        let o = dsattr(d, &all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["select-classes"]);
    run(&["select-classes", "--grouping", "groupings/riders-merged.toml"]);
    run(&["select-classes", "--grouping", "groupings/riders-vehicles-merged.toml"]);
    let color = run(&["select-color"]);
    assert!(stdout(&color).contains("Decision: **gray**"));
    run(&["select-resolution"]);
    run(&["recommend", "--out", "rec.json"]);
    assert_eq!(read(d, "rec.json"), core_golden("pipeline_recommendation.json"));

    let log = read(d, "decisions.jsonl");
    assert_eq!(log.lines().count(), 3 + 1 + 3);
    let listing = stdout(&run(&["log"]));
    assert_eq!(listing.lines().filter(|l| l.ends_with("| yes |")).count(), 3, "{listing}");
}

#[test]
fn per_class_color_is_logged_with_note() {
    let (dir, cfg) = setup();
    let o = dsattr(dir.path(), &["--config", &cfg, "select-color", "--per-class", "--out", "pc.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("does not directly reduce computation"));
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "pc.json")).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
    assert!(json["color_mode"]["per_class"].is_object(), "{json}");
}

#[test]
fn explicit_files_work_without_config() {
    let (dir, _) = setup();
    let d = dir.path();
    let o = dsattr(
        d,
        &[
            "select-color",
            "--color",
            "sets/fixture-color-64.semb",
            "--gray",
            "sets/fixture-gray-64.semb",
            "--log",
            "own.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dsattr(
        d,
        &[
            "select-resolution",
            "--embeddings",
            "sets/fixture-gray-16.semb",
            "sets/fixture-gray-64.semb",
            "sets/fixture-gray-32.semb",
            "--log",
            "own.jsonl",
            "--out",
            "ladder.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&read(d, "ladder.json")).unwrap();
    let rungs: Vec<u64> = json["rungs"].as_array().unwrap().iter().map(|r| r["resolution"].as_u64().unwrap()).collect();
    assert_eq!(rungs, [64, 32, 16]);
    assert_eq!(json["color_mode"], "gray");
    assert_eq!(read(d, "own.jsonl").lines().count(), 4);

    // A mismatched pair is an input error.
    let o = dsattr(d, &["select-color", "--color", "sets/fixture-color-32.semb", "--gray", "sets/fixture-gray-64.semb"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn log_held_by_another_writer_is_a_state_error() {
    let (dir, cfg) = setup();
    let _held = LockedLog::<f64>::open(dir.path().join("decisions.jsonl")).unwrap();
    let o = dsattr(dir.path(), &["--config", &cfg, "select-classes"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("another writer"));
}

#[test]
fn analyze_scale_reports_rejects() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let o = dsattr(d, &["--config", &cfg, "analyze-scale", "--resolution", "64", "--out", "scale.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&read(d, "scale.json")).unwrap();
    assert_eq!(json["overall"]["count"], 120);
    assert_eq!(json["per_class"].as_object().unwrap().len(), 5);

    let bad = r#"{"images": [{"id": 1, "width": 100, "height": 100}],
        "categories": [{"id": 1, "name": "a"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [95, 0, 10, 10]}
        ]}"#;
    std::fs::write(d.join("bad.json"), bad).unwrap();
    let o = dsattr(d, &["analyze-scale", "--annotations", "bad.json", "--out", "s.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("rejected annotation #1 (2)"), "{}", stderr(&o));
}

#[test]
fn synth_reproduces_shipped_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsattr(dir.path(), &["synth", "--out", "fx"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let shipped = common::fixture_dir();
    for rel in [
        "dsattr.toml",
        "annotations.json",
        "groupings/riders-merged.toml",
        "sets/fixture-color-64.semb",
        "sets/fixture-gray-16.semb",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("fx").join(rel)).unwrap(),
            std::fs::read(shipped.join(rel)).unwrap(),
            "{rel}"
        );
    }
    assert_eq!(
        std::fs::read(dir.path().join("fx/sets/fixture-gray-32.f32")).unwrap(),
        std::fs::read(shipped.join("sets/fixture-gray-32.f32")).unwrap()
    );
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::process::{Command, Stdio};

    let (dir, cfg) = setup();
    let mut child = Command::new(env!("CARGO_BIN_EXE_dsattr"))
        .current_dir(dir.path())
        .args(["--config", &cfg, "serve", "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("serving on http://").unwrap_or_else(|| panic!("{line}")).to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/classes HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"class_id\":\"bike\""), "{response}");
}
