//! Synthetic corpus, scripted annotators and helpers for driving the binary.

#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentiscope_core::{DisasterType, CANONICAL_TAGS};
use serde_json::json;

pub const BIN: &str = env!("CARGO_BIN_EXE_sentiscope");

pub fn sentiscope(workspace: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--workspace")
        .arg(workspace)
        .args(args)
        .env_remove("SENTISCOPE_SEED")
        .env_remove("SENTISCOPE_CONFIG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Latent tag indices for fixture image `i`: one or two tags.
pub fn latent_tags(i: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    let first = rng.random_range(0..7);
    let mut tags = vec![first];
    if rng.random_bool(0.4) {
        let second = (first + rng.random_range(1..7)) % 7;
        tags.push(second);
    }
    tags.sort_unstable();
    tags
}

/// A 24x24 picture whose colour bands encode its latent tags, plus noise.
pub fn fixture_image(i: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
    let tags = latent_tags(i);
    RgbImage::from_fn(24, 24, |x, y| {
        let band = (y / 3) as usize;
        let on = band < 7 && tags.contains(&band);
        let base: [u8; 3] = if on {
            [230, (band as u8) * 30, 255 - (band as u8) * 30]
        } else {
            [40, 40, 40]
        };
        let mut jitter = |v: u8| v.saturating_add(rng.random_range(0..12)).saturating_sub(6 * u8::from(x % 2 == 0));
        Rgb([jitter(base[0]), jitter(base[1]), jitter(base[2])])
    })
}

/// `n` fixture images spread over the six disaster-type subdirectories, plus
/// one corrupt file when `corrupt` is set.
pub fn write_corpus(dir: &Path, n: usize, corrupt: bool) -> PathBuf {
    let root = dir.join("raw");
    for i in 0..n {
        let ty = DisasterType::ALL[i % 6];
        let sub = root.join(ty.as_str());
        std::fs::create_dir_all(&sub).unwrap();
        fixture_image(i).save(sub.join(format!("photo{i:03}.png"))).unwrap();
    }
    if corrupt {
        std::fs::write(root.join("floods/broken.png"), b"\x89PNG but not really").unwrap();
    }
    root
}

pub struct ServeProcess {
    pub child: Child,
    pub base: String,
}

impl ServeProcess {
    pub fn start(workspace: &Path, extra: &[&str]) -> Self {
        let mut child = Command::new(BIN)
            .arg("--workspace")
            .arg(workspace)
            .args(["serve", "--bind", "127.0.0.1:0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("serve starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected serve output {line:?}"))
            .to_string();
        Self { child, base }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn stop(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

/// Maps a served image back to its fixture index through its bytes.
fn fixture_index(bytes: &[u8], n: usize) -> usize {
    let img = image::load_from_memory(bytes).unwrap().to_rgb8();
    (0..n)
        .find(|&i| fixture_image(i) == img)
        .expect("served image belongs to the fixture")
}

/// Annotators pull tasks until exhausted and tick the latent tags, each
/// dropped with probability 0.15; one in ten also ticks a random extra tag.
/// Returns the number of accepted submissions.
pub fn run_scripted_annotators(server: &ServeProcess, annotators: usize, n_images: usize) -> usize {
    let handles: Vec<_> = (0..annotators)
        .map(|a| {
            let task_url = server.url(&format!("/api/task?annotator=scripted{a}"));
            let post_url = server.url("/api/annotations");
            let base = server.base.clone();
            std::thread::spawn(move || {
                let agent = agent();
                let mut rng = ChaCha8Rng::seed_from_u64(77 + a as u64);
                let mut accepted = 0;
                loop {
                    let mut resp = agent.get(&task_url).call().unwrap();
                    if resp.status() == 204 {
                        return accepted;
                    }
                    let task: serde_json::Value = resp.body_mut().read_json().unwrap();
                    let image_url = format!("{base}{}", task["image_url"].as_str().unwrap());
                    let bytes = agent.get(&image_url).call().unwrap().body_mut().read_to_vec().unwrap();
                    let idx = fixture_index(&bytes, n_images);
                    let mut tags: Vec<&str> = latent_tags(idx)
                        .into_iter()
                        .filter(|_| rng.random_bool(0.85))
                        .map(|t| CANONICAL_TAGS[t])
                        .collect();
                    if rng.random_bool(0.1) {
                        tags.push(CANONICAL_TAGS[rng.random_range(0..7)]);
                    }
                    let extra: Vec<&str> = if tags.is_empty() { vec!["fear"] } else { vec![] };
                    let body = json!({
                        "annotator_id": format!("scripted{a}"),
                        "image_id": task["image"]["image_id"],
                        "selected_tags": tags,
                        "additional_tags": extra,
                    });
                    let status = agent.post(&post_url).send_json(&body).unwrap().status();
                    assert_eq!(status, 201, "submission rejected");
                    accepted += 1;
                }
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).sum()
}

pub const ARTIFACTS: &[&str] = &[
    "manifest.jsonl",
    "ingest_skipped.csv",
    "annotations.jsonl",
    "aggregate/tag_tally.csv",
    "aggregate/cooccurrence.csv",
    "aggregate/distributions.csv",
    "aggregate/labels.csv",
    "aggregate/additional_tags.csv",
    "split.json",
    "model/checkpoint.json",
    "model/history.csv",
    "report/report.csv",
    "report/summary.json",
];

/// Result of one end-to-end run over the synthetic corpus.
pub struct PipelineRun {
    pub workspace: PathBuf,
    pub failures: Vec<String>,
    pub accepted: usize,
    pub eval_size: usize,
    pub report_rows: usize,
    pub predictions: serde_json::Value,
}

/// ingest -> serve with scripted annotators -> aggregate -> split -> train ->
/// evaluate -> predict. Every failed step is recorded rather than panicking.
pub fn run_pipeline(dir: &Path, n_images: usize) -> PipelineRun {
    let ws = dir.join("workspace");
    let raw = write_corpus(dir, n_images, true);
    let mut failures = Vec::new();
    let mut step = |name: &str, args: &[&str]| {
        let out = sentiscope(&ws, args);
        if !out.status.success() {
            failures.push(format!("{name} exited {:?}: {}", out.status.code(), stderr(&out)));
        }
        out
    };
    step("ingest", &["ingest", raw.to_str().unwrap()]);

    let server = ServeProcess::start(&ws, &[]);
    let accepted = run_scripted_annotators(&server, 6, n_images);
    server.stop();

    step("aggregate", &["aggregate"]);
    step("split", &["--seed", "7", "split"]);
    step("train", &["--seed", "7", "train"]);
    step("evaluate", &["evaluate"]);
    let sample = raw.join("floods/photo001.png");
    let predicted = step("predict", &["predict", sample.to_str().unwrap()]);

    for artifact in ARTIFACTS {
        if !ws.join(artifact).is_file() {
            failures.push(format!("missing artifact {artifact}"));
        }
    }
    let eval_size = std::fs::read_to_string(ws.join("split.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v["evaluation"].as_array().map(Vec::len))
        .unwrap_or(0);
    let report_rows = std::fs::read_to_string(ws.join("report/report.csv"))
        .map(|s| s.lines().count().saturating_sub(1))
        .unwrap_or(0);
    let predictions = serde_json::from_slice(&predicted.stdout).unwrap_or(serde_json::Value::Null);
    PipelineRun {
        workspace: ws,
        failures,
        accepted,
        eval_size,
        report_rows,
        predictions,
    }
}

/// True when `v` is an array of one prediction with seven probabilities in (0, 1).
pub fn single_prediction_is_valid(v: &serde_json::Value) -> bool {
    let Some([p]) = v.as_array().map(Vec::as_slice) else {
        return false;
    };
    let Some(probs) = p["probabilities"].as_object() else {
        return false;
    };
    probs.len() == 7
        && CANONICAL_TAGS.iter().all(|t| {
            probs
                .get(*t)
                .and_then(|x| x.as_f64())
                .is_some_and(|x| x > 0.0 && x < 1.0)
        })
}
