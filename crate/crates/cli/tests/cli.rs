mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use serde_json::json;

fn code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn ingest_filters_corrupt_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path(), 3, true);
    let ws = dir.path().join("ws");
    let out = sentiscope(&ws, &["ingest", raw.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = std::fs::read(ws.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.iter().filter(|&&b| b == b'\n').count(), 3);
    let skipped = std::fs::read_to_string(ws.join("ingest_skipped.csv")).unwrap();
    let rows: Vec<&str> = skipped.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("floods/broken.png"), "{skipped}");

    let again = sentiscope(&ws, &["ingest", raw.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read(ws.join("manifest.jsonl")).unwrap(), manifest);
}

#[test]
fn ingest_four_hundred_images_six_types() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path(), 400, false);
    let ws = dir.path().join("ws");
    let out = sentiscope(&ws, &["ingest", raw.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records: Vec<serde_json::Value> = std::fs::read_to_string(ws.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 400);
    let types: std::collections::BTreeSet<&str> = records.iter().map(|r| r["disaster_type"].as_str().unwrap()).collect();
    assert_eq!(types.len(), 6);
    for r in &records {
        assert!(ws.join(r["uri"].as_str().unwrap()).is_file());
    }
}

#[test]
fn ingest_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&sentiscope(&ws, &["ingest", empty.to_str().unwrap()])), 1);

    let odd = dir.path().join("odd/volcanoes");
    std::fs::create_dir_all(&odd).unwrap();
    fixture_image(0).save(odd.join("a.png")).unwrap();
    let out = sentiscope(&ws, &["ingest", dir.path().join("odd").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("volcanoes"), "{}", stderr(&out));

    let map = dir.path().join("types.txt");
    std::fs::write(&map, "volcanoes = landslides\n").unwrap();
    let out = sentiscope(
        &ws,
        &["ingest", dir.path().join("odd").to_str().unwrap(), "--type-map", map.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(std::fs::read_to_string(ws.join("manifest.jsonl")).unwrap().contains("\"landslides\""));

    assert_eq!(code(&sentiscope(&ws, &["ingest", "/definitely/not/here"])), 2);
}

#[test]
fn missing_upstream_artifacts_name_the_prior_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    for (args, prior) in [
        (&["aggregate"][..], "sentiscope serve"),
        (&["split"][..], "sentiscope aggregate"),
        (&["train"][..], "sentiscope split"),
        (&["evaluate"][..], "sentiscope train"),
        (&["predict", "x.png"][..], "sentiscope train"),
        (&["serve"][..], "sentiscope ingest"),
    ] {
        let out = sentiscope(ws, args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(stderr(&out).contains(prior), "{args:?}: {}", stderr(&out));
    }
}

fn write_journal(ws: &Path, lines: &[String]) {
    std::fs::create_dir_all(ws).unwrap();
    std::fs::write(ws.join("annotations.jsonl"), lines.join("\n") + "\n").unwrap();
}

fn response_line(annotator: &str, image: &str, tags: &[&str]) -> String {
    json!({
        "annotator_id": annotator,
        "image_id": image,
        "selected_tags": tags,
        "additional_tags": [],
        "submitted_at": "2024-01-01T00:00:00Z",
    })
    .to_string()
}

/// Twelve images, five annotators each, every image labelled `pain`.
fn labelled_journal(ws: &Path) {
    let mut lines = Vec::new();
    for i in 0..12 {
        for a in 0..5 {
            lines.push(response_line(&format!("a{a}"), &format!("img{i:02}"), &["pain"]));
        }
    }
    write_journal(ws, &lines);
}

#[test]
fn aggregate_reports_malformed_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    write_journal(ws, &[response_line("a", "i", &["pain"]), "{oops".into()]);
    let out = sentiscope(ws, &["aggregate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    write_journal(ws, &[]);
    assert_eq!(code(&sentiscope(ws, &["aggregate"])), 1);
}

#[test]
fn aggregate_writes_the_csv_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    labelled_journal(ws);
    let out = sentiscope(ws, &["aggregate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tally = std::fs::read_to_string(ws.join("aggregate/tag_tally.csv")).unwrap();
    assert!(tally.contains("pain,60"), "{tally}");
    let labels = std::fs::read_to_string(ws.join("aggregate/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 13);
    assert_eq!(labels.lines().nth(1).unwrap(), "img00,0,0,0,0,1,0,0,0");
}

#[test]
fn split_is_deterministic_and_flag_beats_env_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    labelled_journal(ws);
    assert_eq!(code(&sentiscope(ws, &["aggregate"])), 0);

    let split_seed = |extra_env: Option<&str>, args: &[&str]| {
        let mut cmd = Command::new(BIN);
        cmd.arg("--workspace").arg(ws).args(args).env_remove("SENTISCOPE_SEED");
        if let Some(s) = extra_env {
            cmd.env("SENTISCOPE_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.join("split.json")).unwrap()).unwrap();
        v["seed"].as_u64().unwrap()
    };

    assert_eq!(split_seed(None, &["--seed", "7", "split"]), 7);
    let first = std::fs::read(ws.join("split.json")).unwrap();
    split_seed(None, &["--seed", "7", "split"]);
    assert_eq!(std::fs::read(ws.join("split.json")).unwrap(), first);

    let config = ws.join("sentiscope.conf");
    std::fs::write(&config, "# settings\nseed = 3\n").unwrap();
    let c = config.to_str().unwrap();
    assert_eq!(split_seed(None, &["--config", c, "split"]), 3);
    assert_eq!(split_seed(Some("5"), &["--config", c, "split"]), 5);
    assert_eq!(split_seed(Some("5"), &["--config", c, "split", "--seed", "9"]), 9);

    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.join("split.json")).unwrap()).unwrap();
    assert_eq!(
        (v["train"].as_array().unwrap().len(), v["validation"].as_array().unwrap().len(), v["evaluation"].as_array().unwrap().len()),
        (7, 1, 4)
    );
}

#[test]
fn invalid_settings_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let config = ws.join("bad.conf");
    std::fs::write(&config, "colour = blue\n").unwrap();
    assert_eq!(code(&sentiscope(ws, &["--config", config.to_str().unwrap(), "split"])), 1);
    assert_eq!(code(&sentiscope(ws, &["train", "--optimizer", "lbfgs"])), 1);
    assert_eq!(code(&sentiscope(ws, &["train", "--epochs", "0"])), 1);
    assert_eq!(code(&sentiscope(ws, &["frobnicate"])), 1);
    assert_eq!(code(&sentiscope(ws, &["--help"])), 0);
    assert_eq!(code(&sentiscope(ws, &["--config", "/no/such/file", "split"])), 2);
}

#[test]
fn too_few_labelled_images_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    let lines: Vec<String> = (0..5).map(|a| response_line(&format!("a{a}"), "only", &["hope"])).collect();
    write_journal(ws, &lines);
    assert_eq!(code(&sentiscope(ws, &["aggregate"])), 0);
    assert_eq!(code(&sentiscope(ws, &["split"])), 1);
}

#[test]
fn serve_is_durable_across_restart() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path(), 4, false);
    let ws = dir.path().join("ws");
    assert_eq!(code(&sentiscope(&ws, &["ingest", raw.to_str().unwrap()])), 0);

    let server = ServeProcess::start(&ws, &[]);
    let agent = agent();
    let stats: serde_json::Value = agent.get(&server.url("/api/stats")).call().unwrap().body_mut().read_json().unwrap();
    assert_eq!(stats["total_responses"], 0);
    let task: serde_json::Value = agent
        .get(&server.url("/api/task?annotator=t1"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    let image_id = task["image"]["image_id"].clone();
    let body = json!({"annotator_id": "t1", "image_id": image_id, "selected_tags": ["rescue"]});
    assert_eq!(agent.post(&server.url("/api/annotations")).send_json(&body).unwrap().status(), 201);

    let busy = server.base.trim_start_matches("http://").to_string();
    let clash = Command::new(BIN)
        .arg("--workspace")
        .arg(&ws)
        .args(["serve", "--bind", &busy])
        .output()
        .unwrap();
    assert_eq!(code(&clash), 2, "{}", stderr(&clash));
    server.stop();

    let server = ServeProcess::start(&ws, &[]);
    let stats: serde_json::Value = agent
        .get(&server.url("/api/stats?annotator=t1"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(stats["total_responses"], 1);
    assert_eq!(stats["coverage"][image_id.as_str().unwrap()], 1);
    assert_eq!(stats["annotator"]["annotated"], 1);
    assert_eq!(agent.post(&server.url("/api/annotations")).send_json(&body).unwrap().status(), 409);
}

#[test]
fn training_and_evaluation_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path(), 12, false);
    let ws = dir.path().join("ws");
    assert_eq!(code(&sentiscope(&ws, &["ingest", raw.to_str().unwrap()])), 0);
    let manifest = std::fs::read_to_string(ws.join("manifest.jsonl")).unwrap();
    let mut lines = Vec::new();
    for rec in manifest.lines() {
        let id = serde_json::from_str::<serde_json::Value>(rec).unwrap()["image_id"].as_str().unwrap().to_string();
        for a in 0..5 {
            lines.push(response_line(&format!("a{a}"), &id, if a < 3 { &["shock", "pain"] } else { &["pain"] }));
        }
    }
    write_journal(&ws, &lines);
    for step in [&["aggregate"][..], &["split"], &["train", "--epochs", "3"], &["evaluate"]] {
        let out = sentiscope(&ws, step);
        assert_eq!(code(&out), 0, "{step:?}: {}", stderr(&out));
    }
    let snapshot = |names: &[&str]| names.iter().map(|n| std::fs::read(ws.join(n)).unwrap()).collect::<Vec<_>>();
    let files = ["model/checkpoint.json", "model/history.csv", "report/report.csv", "report/summary.json"];
    let first = snapshot(&files);
    assert_eq!(code(&sentiscope(&ws, &["train", "--epochs", "3"])), 0);
    assert_eq!(code(&sentiscope(&ws, &["evaluate"])), 0);
    assert_eq!(snapshot(&files), first);

    let img = raw.join("floods/photo001.png");
    let out = sentiscope(&ws, &["predict", img.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(single_prediction_is_valid(&v), "{v}");
    assert_eq!(code(&sentiscope(&ws, &["predict", "/no/such.png"])), 2);

    let other = sentiscope(&ws, &["train", "--epochs", "1", "--backbone", "resnet"]);
    assert_eq!(code(&other), 1);
    assert!(stderr(&other).contains("--weights"), "{}", stderr(&other));
}
