use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_trustlab");

const MANIFEST: &str = r#"
iterations_per_cell = 3
base_seed = 5
output = "store.jsonl"

[matrix]
senders = ["nash", "probe", "llm:toy"]
objectives = ["helpful"]

[providers.toy]
model_id = "toy-1"
endpoint_url = "http://127.0.0.1:9/v1/chat/completions"
max_retries = 1
backoff_base_ms = 1
backoff_max_ms = 2
timeout_secs = 2
mock_script = ["AMOUNT: 99", "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6",
  "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6", "AMOUNT: 6"]
"#;

fn trustlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn first_game_id(store: &Path, sender: &str) -> String {
    let line = fs::read_to_string(store)
        .unwrap()
        .lines()
        .find(|l| l.contains(&format!("\"sender_id\":\"{sender}\"")))
        .unwrap()
        .to_string();
    serde_json::from_str::<serde_json::Value>(&line).unwrap()["game_id"].as_str().unwrap().to_string()
}

#[test]
fn run_report_replay_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("m.toml"), MANIFEST).unwrap();

    let run = trustlab(d, &["run", "--manifest", "m.toml", "--mock", "--jobs", "3"]);
    assert_eq!(run.status.code(), Some(0), "{}", text(&run));
    assert_eq!(fs::read_to_string(d.join("store.jsonl")).unwrap().lines().count(), 27);

    let again = trustlab(d, &["run", "--manifest", "m.toml", "--mock"]);
    assert_eq!(again.status.code(), Some(2), "{}", text(&again));
    let resumed = trustlab(d, &["run", "--manifest", "m.toml", "--mock", "--resume"]);
    assert_eq!(resumed.status.code(), Some(0));
    assert!(text(&resumed).contains("0 played"));

    let report = trustlab(d, &["report", "--store", "store.jsonl", "--out", "rep"]);
    assert_eq!(report.status.code(), Some(0), "{}", text(&report));
    let board = fs::read_to_string(d.join("rep/leaderboard.txt")).unwrap();
    assert!(board.contains("(A)"));

    let id = first_game_id(&d.join("store.jsonl"), "llm:toy");
    let replay = trustlab(d, &["replay", "--store", "store.jsonl", &id]);
    assert_eq!(replay.status.code(), Some(0), "{}", text(&replay));
    let out = text(&replay);
    assert!(out.contains("verified"));
    assert!(out.contains(&format!("{id}/r1/s0/a2")), "{out}");
    assert!(out.contains("AMOUNT: 99"));
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("m.toml"), MANIFEST).unwrap();
    assert_eq!(trustlab(d, &["run", "--manifest", "m.toml", "--mock"]).status.code(), Some(0));

    let id = first_game_id(&d.join("store.jsonl"), "probe");
    let store = fs::read_to_string(d.join("store.jsonl")).unwrap();
    let tampered: Vec<String> = store
        .lines()
        .map(|l| {
            if l.contains(&id) {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                let total = v["record"]["sender_total"].as_i64().unwrap();
                v["record"]["sender_total"] = (total + 100).into();
                v.to_string()
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(d.join("store.jsonl"), tampered.join("\n") + "\n").unwrap();

    let replay = trustlab(d, &["replay", "--store", "store.jsonl", &id]);
    assert_eq!(replay.status.code(), Some(1), "{}", text(&replay));
    assert!(text(&replay).contains("differ from recomputed"));

    assert_eq!(trustlab(d, &["replay", "--store", "store.jsonl", "g0"]).status.code(), Some(2));
}

#[test]
fn input_errors_exit_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    fs::write(d.join("bad.toml"), "[matrix]\nsenders = [\"nash\"\n").unwrap();
    let run = trustlab(d, &["run", "--manifest", "bad.toml", "--mock"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(text(&run).contains("line 2"), "{}", text(&run));
    assert!(!d.join("store.jsonl").exists());

    let report = trustlab(d, &["report", "--store", "none.jsonl", "--out", "rep"]);
    assert_eq!(report.status.code(), Some(2));
    assert!(!d.join("rep").exists());

    fs::write(d.join("m.toml"), MANIFEST).unwrap();
    trustlab(d, &["run", "--manifest", "m.toml", "--mock"]);
    let store = fs::read_to_string(d.join("store.jsonl")).unwrap();
    let mut lines: Vec<&str> = store.lines().collect();
    lines[4] = "{\"truncated\":";
    fs::write(d.join("corrupt.jsonl"), lines.join("\n") + "\n").unwrap();
    let report = trustlab(d, &["report", "--store", "corrupt.jsonl", "--out", "rep"]);
    assert_eq!(report.status.code(), Some(1));
    assert!(text(&report).contains("line 5"), "{}", text(&report));
    assert!(!d.join("rep").exists());

    let unknown = trustlab(d, &["report", "--store", "store.jsonl", "--out", "rep", "--verbose"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn unreachable_provider_without_mock_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = MANIFEST.replace("iterations_per_cell = 3", "iterations_per_cell = 1");
    fs::write(d.join("m.toml"), manifest).unwrap();
    let run = trustlab(d, &["run", "--manifest", "m.toml"]);
    assert_eq!(run.status.code(), Some(1), "{}", text(&run));
    assert!(text(&run).contains("FAILED"));
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let help = text(&trustlab(dir.path(), &["run", "--help"]));
    for flag in ["--manifest", "--store", "--jobs", "--resume", "--mock"] {
        assert!(help.contains(flag), "{flag}");
    }
    let help = text(&trustlab(dir.path(), &["report", "--help"]));
    assert!(help.contains("--out") && help.contains("--store"));
    let help = text(&trustlab(dir.path(), &["validate-templates", "--help"]));
    assert!(help.contains("--templates"));
    assert_eq!(trustlab(dir.path(), &["validate-templates"]).status.code(), Some(0));
}

#[test]
fn shipped_manifests_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests");
    let offline = trustlab::runner::RunManifest::load(&root.join("offline.toml")).unwrap();
    assert_eq!(offline.cells.len(), 12);
    let baseline = trustlab::runner::RunManifest::load(&root.join("baseline.toml")).unwrap();
    assert_eq!(baseline.cells.len(), 5 * 3 * 2 * 7 * 3);
    assert_eq!(baseline.total_games(), 630 * 30);
}

#[test]
fn offline_manifest_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/offline.toml");
    let store = dir.path().join("store.jsonl");
    let out = Command::new(BIN)
        .args(["run", "--mock", "--jobs", "4", "--manifest"])
        .arg(&manifest)
        .arg("--store")
        .arg(&store)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 36);
}
