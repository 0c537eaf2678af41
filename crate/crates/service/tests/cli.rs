use std::net::SocketAddr;
use std::path::Path;
use std::process::Command as Process;

use aromagen_device::{serve, VirtualClock};
use aromagen_service::cli::{run, Cli};
use clap::Parser;
use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn invoke(log: &Path, args: &[&str]) -> Result<String, aromagen_service::ApiError> {
    let mut argv = vec!["aromagen", "--log", log.to_str().unwrap()];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn session_id(json_line: &str) -> String {
    let v: Value = serde_json::from_str(json_line).unwrap();
    v["session_id"].as_str().unwrap().to_owned()
}

/// A virtual-clock simulator on its own runtime thread.
fn spawn_simulator() -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
            tx.send(sim.local_addr()).unwrap();
            std::future::pending::<()>().await;
        });
    });
    rx.recv().unwrap()
}

#[test]
fn generate_prints_release_order_table() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let text = invoke(&log, &["generate", "--text", "spiced chai latte"]).unwrap();
    assert!(text.starts_with("Session "), "{text}");
    assert!(text.contains("(active; 0 refinement turns)"));
    let total = text
        .lines()
        .find(|l| l.trim_start().starts_with("Total"))
        .unwrap();
    assert!(
        total.contains("1.00") && total.ends_with("60.00 s"),
        "{total}"
    );
    let rows: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("Odorant"))
        .skip(1)
        .take_while(|l| !l.starts_with("Total"))
        .collect();
    assert!((3..=6).contains(&rows.len()), "{text}");
    let seconds: f64 = rows
        .iter()
        .map(|r| {
            r.split_whitespace()
                .rev()
                .nth(1)
                .unwrap()
                .parse::<f64>()
                .unwrap()
        })
        .sum();
    assert!((seconds - 60.0).abs() < 1e-9);
}

#[test]
fn session_lifecycle_persists_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let created = invoke(&log, &["generate", "--text", "miso ramen", "--json"]).unwrap();
    let id = session_id(&created);

    let refined = invoke(&log, &["refine", &id, "--feedback", "more smoky", "--json"]).unwrap();
    let v: Value = serde_json::from_str(&refined).unwrap();
    assert_eq!(v["turn"]["index"], 1);
    assert!(!v["diff"].as_array().unwrap().is_empty());

    let done = invoke(&log, &["satisfy", &id]).unwrap();
    assert!(done.contains("(satisfied; 1 refinement turn)"), "{done}");

    let shown = invoke(&log, &["show", &id, "--json"]).unwrap();
    let v: Value = serde_json::from_str(&shown).unwrap();
    assert_eq!(v["status"], "satisfied");
    assert_eq!(v["turns"].as_array().unwrap().len(), 2);

    let err = invoke(&log, &["refine", &id, "--feedback", "again"]).unwrap_err();
    assert_eq!(err.code, "invalid_state");
    let err = invoke(&log, &["show", "missing"]).unwrap_err();
    assert_eq!(err.code, "session_not_found");
}

#[test]
fn play_against_simulator() {
    let addr = spawn_simulator();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let id = session_id(&invoke(&log, &["generate", "--text", "pizza", "--json"]).unwrap());
    let out = invoke(
        &log,
        &["play", &id, "--device", &addr.to_string(), "--json"],
    )
    .unwrap();
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["completed"], true);
    let last = report["steps"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["ended_at_ms"], 60_000);

    let table = invoke(&log, &["play", &id, "--device", &addr.to_string()]).unwrap();
    assert!(table.contains("Completed: 60000 ms dispensed"), "{table}");
}

#[test]
fn analyze_fixture_log() {
    let log = Path::new(FIXTURES).join("sessions.jsonl");
    let text = invoke(&log, &["analyze"]).unwrap();
    assert!(text.contains("Satisfied sessions: 7 (of 7 logged)"));
    assert!(text.contains("Converged within two refinement turns: 85.7% (n = 6)"));

    let ratings = Path::new(FIXTURES).join("ratings.csv");
    let out = invoke(
        &log,
        &["analyze", "--ratings", ratings.to_str().unwrap(), "--json"],
    )
    .unwrap();
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["convergence"]["refiners"]["count"], 6);
    assert_eq!(v["ratings"]["conditions"].as_array().unwrap().len(), 3);
    assert_eq!(v["ratings"]["distance_friedman"]["df"], 2);
}

#[test]
fn binary_reports_errors_with_exit_status() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let bin = env!("CARGO_BIN_EXE_aromagen");

    let gen = Process::new(bin)
        .args([
            "--log",
            log.to_str().unwrap(),
            "generate",
            "--text",
            "salad",
            "--json",
        ])
        .output()
        .unwrap();
    assert!(gen.status.success());
    let id = session_id(std::str::from_utf8(&gen.stdout).unwrap());

    let play = Process::new(bin)
        .args([
            "--log",
            log.to_str().unwrap(),
            "play",
            &id,
            "--device",
            &dead,
        ])
        .output()
        .unwrap();
    assert!(!play.status.success());
    let stderr = String::from_utf8(play.stderr).unwrap();
    assert!(stderr.contains("error[device_unreachable]"), "{stderr}");

    let empty = Process::new(bin)
        .args(["--log", log.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(!empty.status.success());
    assert!(String::from_utf8(empty.stderr)
        .unwrap()
        .contains("error[invalid_input]"));
}
