//! Experiment orchestration: load or generate the game, solve it, run the
//! dynamics per seed, and write the CSV / JSON / SVG artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use lana_core::analysis::{TrajectorySummary, SLACK_TOL};
use lana_core::dynamics::{run_dynamics, DeltaRule, UpdateKind};
use lana_core::game::{random_game_with_contexts, validate_game, PreferenceGame};
use lana_core::nash::{solve_game, NashSolution};
use lana_core::rng::{stream, RngStream};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::output::{trajectory_csv, trajectory_plot_svg};

/// Loads the configured game file or generates one, then validates it.
/// Invariant violations are reported together and fail with exit code 3.
pub fn load_or_generate_game(cfg: &RunConfig) -> Result<PreferenceGame> {
    let game = if let Some(path) = &cfg.game_file {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Component(format!("reading {}: {e}", path.display())))?;
        PreferenceGame::from_json(&text)?
    } else {
        let gen = cfg
            .generator
            .as_ref()
            .ok_or_else(|| HarnessError::Config("no game source configured".into()))?;
        let mut rng = RngStream::new(gen.seed, stream::GAME_GEN);
        random_game_with_contexts(&mut rng, gen.n, gen.contexts, gen.kind)?
    };
    let violations = validate_game(&game);
    if !violations.is_empty() {
        let listing: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(HarnessError::Invariant(format!(
            "game failed validation with {} violation(s): {}",
            violations.len(),
            listing.join("; ")
        )));
    }
    Ok(game)
}

/// Outcome of one seed in one update mode.
#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub mode: UpdateKind,
    pub csv: String,
    pub svg: String,
    pub summary: Option<TrajectorySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Final win rates of the two stochastic loss orientations side by side.
/// No directional claim is attached; the numbers are reported for audit.
#[derive(Debug, Clone, Serialize)]
pub struct ModeComparison {
    pub seed: u64,
    pub literal_final_winrate: Option<f64>,
    pub corrected_final_winrate: Option<f64>,
    pub literal_final_kl: Option<f64>,
    pub corrected_final_kl: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub nash: NashSolution,
    pub seeds: Vec<SeedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ModeComparison>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        out.push('\n');
        out
    }
}

fn mean_final<F: Fn(&lana_core::analysis::PlayerSummary) -> f64>(
    summary: &Option<TrajectorySummary>,
    f: F,
) -> Option<f64> {
    summary
        .as_ref()
        .map(|s| s.players.iter().map(f).sum::<f64>() / s.players.len() as f64)
}

fn run_one(
    cfg: &RunConfig,
    game: &PreferenceGame,
    nash: &NashSolution,
    seed: u64,
    mode: UpdateKind,
    out_dir: &Path,
    suffix: &str,
) -> SeedReport {
    let mut dyn_cfg = cfg.dynamics_for_seed(seed);
    dyn_cfg.update.kind = mode;
    let csv_name = format!("run_seed{seed}{suffix}.csv");
    let svg_name = format!("run_seed{seed}{suffix}.svg");

    let (trajectory, error) = match run_dynamics(&dyn_cfg, game, nash) {
        Ok(t) => (t, None),
        Err(failure) => (failure.partial.clone(), Some(failure.error.to_string())),
    };
    let mut report = SeedReport {
        seed,
        mode,
        csv: csv_name.clone(),
        svg: svg_name.clone(),
        summary: trajectory.summary.clone(),
        error,
    };
    if let Err(e) = fs::write(out_dir.join(&csv_name), trajectory_csv(&trajectory)) {
        report.error.get_or_insert(e.to_string());
        return report;
    }
    if let Err(e) = fs::write(out_dir.join(&svg_name), trajectory_plot_svg(&trajectory)) {
        report.error.get_or_insert(e.to_string());
        return report;
    }
    // The per-step inequality is an invariant of adaptive mirror runs.
    if mode == UpdateKind::ExactMirror && dyn_cfg.delta_rule == DeltaRule::Adaptive {
        if let Some(summary) = &report.summary {
            if let Some(min_slack) = summary.min_lemma_slack {
                if min_slack < SLACK_TOL {
                    report.error.get_or_insert(format!(
                        "step-inequality slack {min_slack} below {SLACK_TOL}"
                    ));
                }
            }
        }
    }
    report
}

/// Runs every configured seed, writes per-seed artifacts and the summary
/// document, and returns the report. Per-seed failures are recorded and the
/// remaining seeds still run; the first failure kind decides the exit code.
pub fn run_command(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let game = load_or_generate_game(cfg)?;
    let nash = solve_game(&game, cfg.nash_tol, cfg.nash_max_iter)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let dual = cfg.dual_mode_audit;
    let mut seeds = Vec::new();
    let mut comparison = Vec::new();
    for &seed in &cfg.seeds {
        if dual {
            let literal = run_one(
                cfg,
                &game,
                &nash,
                seed,
                UpdateKind::SgdLiteral,
                &cfg.output_dir,
                "_sgd-literal",
            );
            let corrected = run_one(
                cfg,
                &game,
                &nash,
                seed,
                UpdateKind::SgdCorrected,
                &cfg.output_dir,
                "_sgd-corrected",
            );
            comparison.push(ModeComparison {
                seed,
                literal_final_winrate: mean_final(&literal.summary, |p| p.final_winrate_vs_init),
                corrected_final_winrate: mean_final(&corrected.summary, |p| {
                    p.final_winrate_vs_init
                }),
                literal_final_kl: mean_final(&literal.summary, |p| p.final_kl_to_star),
                corrected_final_kl: mean_final(&corrected.summary, |p| p.final_kl_to_star),
            });
            seeds.push(literal);
            seeds.push(corrected);
        } else {
            seeds.push(run_one(
                cfg,
                &game,
                &nash,
                seed,
                cfg.update_mode,
                &cfg.output_dir,
                "",
            ));
        }
    }

    let report = RunReport {
        config: cfg.clone(),
        nash,
        seeds,
        comparison: if dual { Some(comparison) } else { None },
    };
    fs::write(cfg.output_dir.join("run_summary.json"), report.to_json())?;

    if let Some(bad) = report.seeds.iter().find(|s| s.error.is_some()) {
        let msg = format!("seed {}: {}", bad.seed, bad.error.clone().unwrap());
        return Err(if msg.contains("slack") {
            HarnessError::Invariant(msg)
        } else {
            HarnessError::Component(msg)
        });
    }
    Ok(report)
}

/// Generates a random game and writes it as JSON.
pub fn gen_command(
    seed: u64,
    n: usize,
    contexts: usize,
    kind: lana_core::game::GameKind,
    out: Option<&Path>,
) -> Result<String> {
    let mut rng = RngStream::new(seed, stream::GAME_GEN);
    let game = random_game_with_contexts(&mut rng, n, contexts, kind)?;
    let text = game.to_json();
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &text)?;
    }
    Ok(text)
}

/// Solves the configured game and writes the equilibrium with its
/// exploitability certificate as JSON.
pub fn solve_command(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let game = load_or_generate_game(cfg)?;
    let nash = solve_game(&game, cfg.nash_tol, cfg.nash_max_iter)?;
    let mut text = serde_json::to_string_pretty(&nash).expect("solution serialization cannot fail");
    text.push('\n');
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &text)?;
    }
    Ok(text)
}

/// Convenience used by tests: a config whose artifacts land under `dir`.
pub fn with_output_dir(mut cfg: RunConfig, dir: impl Into<PathBuf>) -> RunConfig {
    cfg.output_dir = dir.into();
    cfg
}
