//! End-to-end checks of the `lana` binary: subcommand plumbing, artifact
//! layout, and the exit-code contract (0 ok, 2 config, 3 invariant,
//! 4 component).

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn lana(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lana"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "lana-cli-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_emits_a_valid_game_to_stdout() {
    let out = lana(&["gen", "--seed", "3", "--n", "4", "--kind", "cyclic"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let game = lana_core::game::PreferenceGame::from_json(&stdout(&out)).unwrap();
    assert!(lana_core::game::validate_game(&game).is_empty());
}

#[test]
fn gen_rejects_tiny_games_with_component_exit() {
    let out = lana(&["gen", "--seed", "1", "--n", "1", "--kind", "uniform"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("at least 2"));
}

#[test]
fn solve_prints_the_equilibrium_certificate() {
    let dir = scratch("solve");
    let game_path = dir.join("game.json");
    let gen = lana(&[
        "gen",
        "--seed",
        "5",
        "--n",
        "3",
        "--kind",
        "cyclic",
        "--out",
        game_path.to_str().unwrap(),
    ]);
    assert!(gen.status.success());
    let out = lana(&["solve", "--game-file", game_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(value["contexts"][0]["exploitability"].as_f64().unwrap() <= 1e-6);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_writes_artifacts_and_reports_progress() {
    let dir = scratch("run");
    let out = lana(&[
        "run",
        "--gen-seed",
        "2",
        "--n",
        "3",
        "--kind",
        "cyclic",
        "--steps",
        "20",
        "--seeds",
        "1,2",
        "--output-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("run_seed1.csv").exists());
    assert!(dir.join("run_seed2.csv").exists());
    assert!(dir.join("run_seed1.svg").exists());
    assert!(dir.join("run_summary.json").exists());
    let text = stdout(&out);
    assert!(text.contains("seed 1"), "{text}");
    let csv = fs::read_to_string(dir.join("run_seed1.csv")).unwrap();
    assert!(csv.starts_with(lana_cli::CSV_HEADER));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn flags_override_config_document_values() {
    let dir = scratch("override");
    let config_path = dir.join("cfg.json");
    fs::write(
        &config_path,
        format!(
            r#"{{
                "generator": {{"seed": 4, "n": 3, "contexts": 1, "kind": "uniform"}},
                "steps": 500,
                "output_dir": "{}"
            }}"#,
            dir.join("out").to_str().unwrap()
        ),
    )
    .unwrap();
    let out = lana(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--steps",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/run_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["steps"], 5);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_with_code_2() {
    let out = lana(&[
        "run",
        "--gen-seed",
        "1",
        "--n",
        "3",
        "--kind",
        "uniform",
        "--schedule",
        "constant",
        "--gamma",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gamma"));
}

#[test]
fn invalid_game_fails_run_with_exit_3() {
    let dir = scratch("badgame");
    let game_path = dir.join("bad.json");
    fs::write(
        &game_path,
        r#"{"contexts": [{"context_id": "c", "responses": ["a", "b"], "P": [0.5, 0.7, 0.4, 0.5]}]}"#,
    )
    .unwrap();
    let out = lana(&[
        "run",
        "--game-file",
        game_path.to_str().unwrap(),
        "--output-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("violation"));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_reports_injected_game_violations_with_exit_3() {
    let dir = scratch("verify-inject");
    let game_path = dir.join("bad.json");
    fs::write(
        &game_path,
        r#"{"contexts": [{"context_id": "c", "responses": ["a", "b"], "P": [0.6, 0.7, 0.3, 0.5]}]}"#,
    )
    .unwrap();
    let out = lana(&[
        "verify",
        "--game-file",
        game_path.to_str().unwrap(),
        "--output-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let text = stdout(&out);
    assert!(text.contains("[FAIL] game-validation"), "{text}");
    // Identical injection twice gives an identical report.
    let again = lana(&[
        "verify",
        "--game-file",
        game_path.to_str().unwrap(),
        "--output-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(stdout(&again), text);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_accepts_generator_flags() {
    let out = lana(&[
        "solve",
        "--gen-seed",
        "7",
        "--n",
        "2",
        "--kind",
        "condorcet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let pi: Vec<f64> = value["contexts"][0]["pi_star"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // A 2-response game with a strict winner is dominance-solvable.
    assert!(pi.iter().any(|&p| p > 1.0 - 1e-6));
}
