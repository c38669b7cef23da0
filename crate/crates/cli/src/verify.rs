//! The verification battery: every acceptance criterion as a self-contained,
//! deterministic check with its tolerance and runtime budget pinned in code.
//!
//! The `verify` subcommand prints one pass/fail line per criterion; the
//! acceptance test target asserts the same outcomes.

use std::fs;
use std::path::Path;
use std::time::Instant;

use lana_core::analysis::{horizon_bound_check, SLACK_TOL};
use lana_core::dynamics::{
    adaptive_delta, maio_update, run_dynamics, sgd_loss_gradient, DynamicsConfig, PolicyInit,
    Schedule, UpdateKind, UpdateMode,
};
use lana_core::game::{random_game, validate_game, GameKind, PreferenceGame};
use lana_core::judge::{JudgeKind, JudgeMode, OpponentConstruction};
use lana_core::nash::{brute_force_nash, solve_game, solve_nash};
use lana_core::policy::{floor_simplex, random_simplex, BoundParams};
use lana_core::rng::{stream, RngStream};

use crate::config::{GeneratorSpec, RunConfig};
use crate::error::{HarnessError, Result};
use crate::runner::run_command;

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub budget_seconds: f64,
    pub details: String,
}

impl CriterionOutcome {
    fn finish(
        id: &'static str,
        start: Instant,
        budget_seconds: f64,
        passed: bool,
        details: String,
    ) -> CriterionOutcome {
        let seconds = start.elapsed().as_secs_f64();
        CriterionOutcome {
            id,
            passed: passed && seconds < budget_seconds,
            seconds,
            budget_seconds,
            details,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:<22} {:>7.2}s (budget {:>4.0}s)  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.seconds,
            self.budget_seconds,
            self.details
        )
    }
}

#[derive(Debug)]
pub struct BatteryReport {
    pub outcomes: Vec<CriterionOutcome>,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            out.push_str(&o.line());
            out.push('\n');
        }
        out.push_str(&format!(
            "{}/{} criteria passed\n",
            self.outcomes.iter().filter(|o| o.passed).count(),
            self.outcomes.len()
        ));
        out
    }
}

/// Validates the supplied game file when one is configured, or the three
/// generator families otherwise.
pub fn check_game_validation(cfg: &RunConfig) -> CriterionOutcome {
    let start = Instant::now();
    if let Some(path) = &cfg.game_file {
        let outcome = fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| PreferenceGame::from_json(&text).map_err(|e| e.to_string()))
            .map(|game| validate_game(&game));
        return match outcome {
            Ok(violations) if violations.is_empty() => CriterionOutcome::finish(
                "game-validation",
                start,
                5.0,
                true,
                format!("{} is a valid game", path.display()),
            ),
            Ok(violations) => {
                let listing: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                CriterionOutcome::finish(
                    "game-validation",
                    start,
                    5.0,
                    false,
                    format!("{} violation(s): {}", violations.len(), listing.join("; ")),
                )
            }
            Err(e) => CriterionOutcome::finish("game-validation", start, 5.0, false, e),
        };
    }
    let mut rng = RngStream::new(90, stream::GAME_GEN);
    let mut count = 0;
    for kind in [GameKind::Uniform, GameKind::Condorcet, GameKind::Cyclic] {
        for n in 2..=10 {
            let game = random_game(&mut rng, n, kind).unwrap();
            count += validate_game(&game).len();
        }
    }
    CriterionOutcome::finish(
        "game-validation",
        start,
        5.0,
        count == 0,
        format!("{count} violations across 27 generated games"),
    )
}

/// Criterion 1: the mirror step against an improved opponent equals the
/// normalized geometric mixture `pi^(1-gamma) * tilde^gamma` to 1e-12 on
/// 1000 random triples with n in 2..=50.
pub fn check_geometric_identity() -> CriterionOutcome {
    let start = Instant::now();
    let mut rng = RngStream::new(910, stream::TEST);
    let mut worst = 0.0f64;
    for round in 0..1000 {
        let n = 2 + round % 49;
        let pi = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
        let tilde = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
        let gamma = rng.next_open01();
        let step = adaptive_delta(&pi, &tilde, gamma).unwrap();
        let updated = maio_update(&pi, &step, 0.0).unwrap();

        let logs: Vec<f64> = pi
            .iter()
            .zip(&tilde)
            .map(|(&p, &t)| (1.0 - gamma) * p.ln() + gamma * t.ln())
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut expected: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = expected.iter().sum();
        for x in &mut expected {
            *x /= sum;
        }

        let err = updated
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    CriterionOutcome::finish(
        "geometric-identity",
        start,
        5.0,
        worst <= 1e-12,
        format!("max |mirror - mixture| = {worst:.3e} over 1000 triples (tol 1e-12)"),
    )
}

fn tournament_judge(round: usize) -> JudgeMode {
    match round % 5 {
        0 => JudgeMode::new(JudgeKind::GroundTruthSampled, 0.0).unwrap(),
        1 => JudgeMode::new(JudgeKind::GroundTruthDeterministic, 0.0).unwrap(),
        2 => JudgeMode::new(JudgeKind::SelfJudge, 0.0).unwrap(),
        3 => JudgeMode::new(JudgeKind::GroundTruthSampled, 0.2).unwrap(),
        _ => JudgeMode::new(JudgeKind::SelfJudge, 0.1).unwrap(),
    }
}

fn tournament_kind(round: usize) -> GameKind {
    match round % 3 {
        0 => GameKind::Uniform,
        1 => GameKind::Condorcet,
        _ => GameKind::Cyclic,
    }
}

/// The shared suite behind criteria 2 and 3: 100 tournament-judge
/// exact-mirror runs of 200 steps on games with n <= 10. Returns the runs
/// and the seconds they took, so both criteria count the run time against
/// their budgets.
pub fn tournament_suite() -> (Vec<lana_core::analysis::Trajectory>, f64) {
    let start = Instant::now();
    let mut game_rng = RngStream::new(920, stream::GAME_GEN);
    let mut runs = Vec::with_capacity(100);
    for round in 0..100 {
        let n = 2 + round % 9;
        let game = random_game(&mut game_rng, n, tournament_kind(round)).unwrap();
        let nash = solve_game(&game, 1e-8, 1_000_000).unwrap();
        let cfg = DynamicsConfig {
            steps: 200,
            judge: tournament_judge(round),
            schedule: Schedule::Constant { gamma: 0.1 },
            ..DynamicsConfig::exact_mirror(round as u64)
        };
        runs.push(run_dynamics(&cfg, &game, &nash).unwrap());
    }
    (runs, start.elapsed().as_secs_f64())
}

/// Criterion 2: zero step-inequality violations beyond -1e-9 slack across
/// the tournament suite.
pub fn check_lemma_inequality(
    runs: &[lana_core::analysis::Trajectory],
    suite_seconds: f64,
) -> CriterionOutcome {
    let start = Instant::now();
    let mut min_slack = f64::INFINITY;
    let mut checked = 0usize;
    let mut violations = 0usize;
    for traj in runs {
        for rec in &traj.records {
            if let Some(slack) = rec.lemma_slack_min {
                checked += 1;
                min_slack = min_slack.min(slack);
                if slack < SLACK_TOL {
                    violations += 1;
                }
            }
        }
    }
    let mut outcome = CriterionOutcome::finish(
        "lemma-inequality",
        start,
        60.0,
        violations == 0 && checked > 0,
        format!(
            "{violations} violations in {checked} steps across {} runs; min slack {min_slack:.3e} (tol {SLACK_TOL:e})",
            runs.len()
        ),
    );
    outcome.seconds += suite_seconds;
    outcome.passed = outcome.passed && outcome.seconds < outcome.budget_seconds;
    outcome
}

/// Criterion 3: the fixed-horizon bound holds on every constant-step run of
/// the tournament suite, with all three right-hand components reported.
pub fn check_horizon_bound(
    runs: &[lana_core::analysis::Trajectory],
    suite_seconds: f64,
) -> CriterionOutcome {
    let start = Instant::now();
    let bp = BoundParams::default();
    let mut holds = 0usize;
    let mut sample = String::new();
    let mut failure: Option<String> = None;
    for (i, traj) in runs.iter().enumerate() {
        let report = match horizon_bound_check(traj, &bp) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(format!("run {i}: {e}"));
                break;
            }
        };
        if report.holds {
            holds += 1;
        }
        if i == 0 {
            let p = &report.players[0];
            sample = format!(
                "run 0 p1: lhs {:.4} <= tilde {:.4} + contraction {:.3e} + norm {:.4}",
                p.lhs_final_kl, p.kl_tilde_at_c, p.contraction_term, p.norm_term
            );
        }
    }
    let (passed, details) = match failure {
        Some(msg) => (false, msg),
        None => (
            holds == runs.len(),
            format!("holds on {holds}/{} runs; {sample}", runs.len()),
        ),
    };
    let mut outcome = CriterionOutcome::finish("horizon-bound", start, 60.0, passed, details);
    outcome.seconds += suite_seconds;
    outcome.passed = outcome.passed && outcome.seconds < outcome.budget_seconds;
    outcome
}

/// Criterion 4: with the equilibrium as the improved opponent and
/// gamma = 0.3, KL contracts at least geometrically:
/// `KL(pi*, pi_t) <= (1-gamma)^t KL(pi*, pi_0) + 1e-9` for 50 steps on 20
/// random games.
pub fn check_expert_contraction() -> CriterionOutcome {
    let start = Instant::now();
    let gamma = 0.3;
    let mut game_rng = RngStream::new(940, stream::GAME_GEN);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut passed = true;
    for round in 0..20 {
        let n = 3 + round % 8;
        let game = random_game(&mut game_rng, n, tournament_kind(round)).unwrap();
        let nash = solve_game(&game, 1e-8, 1_000_000).unwrap();
        let cfg = DynamicsConfig {
            steps: 50,
            schedule: Schedule::Constant { gamma },
            construction: OpponentConstruction::ExpertPolicy,
            init: PolicyInit::Random,
            ..DynamicsConfig::exact_mirror(round as u64)
        };
        let traj = run_dynamics(&cfg, &game, &nash).unwrap();
        for player in 1..=2 {
            let kls: Vec<f64> = traj
                .records_for(player)
                .map(|r| r.kl_to_star_mean)
                .collect();
            let kl0 = kls[0];
            for (t, &kl) in kls.iter().enumerate() {
                let excess = kl - (1.0 - gamma).powi(t as i32) * kl0;
                worst_excess = worst_excess.max(excess);
                if excess > 1e-9 {
                    passed = false;
                }
            }
        }
    }
    CriterionOutcome::finish(
        "expert-contraction",
        start,
        5.0,
        passed,
        format!("worst excess over (1-gamma)^t bound: {worst_excess:.3e} (tol 1e-9)"),
    )
}

/// Criterion 5: equilibrium oracle quality. Exploitability <= 1e-6 on 200
/// random games with n in 3..=20; agreement with support enumeration within
/// 1e-4 exploitability on small games; the canonical 3-cycle solves to the
/// uniform equilibrium within 1e-4 per coordinate.
pub fn check_nash_oracle() -> CriterionOutcome {
    let start = Instant::now();
    let mut game_rng = RngStream::new(950, stream::GAME_GEN);
    let mut worst_exploit = 0.0f64;
    let mut passed = true;
    let mut details = Vec::new();

    for round in 0..200 {
        let n = 3 + round % 18;
        let game = random_game(&mut game_rng, n, tournament_kind(round)).unwrap();
        match solve_nash(&game.contexts[0], 1e-6, 1_000_000) {
            Ok(sol) => {
                worst_exploit = worst_exploit.max(sol.exploitability);
                if sol.exploitability > 1e-6 {
                    passed = false;
                }
                if n <= 4 {
                    let exact = brute_force_nash(&game.contexts[0]).unwrap();
                    if (sol.exploitability - exact.exploitability).abs() > 1e-4 {
                        passed = false;
                        details.push(format!("round {round}: brute-force disagreement"));
                    }
                }
            }
            Err(e) => {
                passed = false;
                details.push(format!("round {round} (n={n}): {e}"));
            }
        }
    }

    let mut small_rng = RngStream::new(951, stream::GAME_GEN);
    let mut worst_gap = 0.0f64;
    for round in 0..200 {
        let n = 2 + round % 3;
        let game = random_game(&mut small_rng, n, tournament_kind(round)).unwrap();
        let fast = solve_nash(&game.contexts[0], 1e-6, 1_000_000).unwrap();
        let exact = brute_force_nash(&game.contexts[0]).unwrap();
        let gap = (fast.exploitability - exact.exploitability).abs();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-4 {
            passed = false;
        }
    }

    let rps = lana_core::game::rock_paper_scissors();
    let sol = solve_nash(&rps.contexts[0], 1e-6, 1_000_000).unwrap();
    let rps_dev = sol
        .pi_star
        .iter()
        .map(|p| (p - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    if rps_dev > 1e-4 {
        passed = false;
    }

    CriterionOutcome::finish(
        "nash-oracle",
        start,
        120.0,
        passed,
        format!(
            "200 games: worst exploitability {worst_exploit:.3e} (tol 1e-6); 200 small games: worst oracle gap {worst_gap:.3e} (tol 1e-4); 3-cycle deviation {rps_dev:.3e}{}",
            if details.is_empty() {
                String::new()
            } else {
                format!("; {}", details.join("; "))
            }
        ),
    )
}

/// Criterion 6: analytic SGD gradients match central finite differences of
/// the stated losses (h = 1e-5) within 1e-6 relative error at 100 random
/// points, both loss orientations.
pub fn check_gradients() -> CriterionOutcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut rng = RngStream::new(960, stream::TEST);
    let mut worst_rel = 0.0f64;
    let mut passed = true;
    for kind in [UpdateKind::SgdLiteral, UpdateKind::SgdCorrected] {
        for _ in 0..100 {
            let n = 2 + rng.next_index(9);
            let theta: Vec<f64> = (0..n).map(|_| 6.0 * rng.next_f64() - 3.0).collect();
            let opponent = floor_simplex(&random_simplex(n, &mut rng), 1e-6);
            let preferred = rng.next_index(n);
            let rejected = (preferred + 1 + rng.next_index(n - 1)) % n;
            let (_, grad) =
                sgd_loss_gradient(&theta, &opponent, preferred, rejected, kind).unwrap();
            for i in 0..n {
                let mut plus = theta.clone();
                plus[i] += h;
                let mut minus = theta.clone();
                minus[i] -= h;
                let (lp, _) =
                    sgd_loss_gradient(&plus, &opponent, preferred, rejected, kind).unwrap();
                let (lm, _) =
                    sgd_loss_gradient(&minus, &opponent, preferred, rejected, kind).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-3);
                worst_rel = worst_rel.max(rel);
                if rel > 1e-6 {
                    passed = false;
                }
            }
        }
    }
    CriterionOutcome::finish(
        "gradient-check",
        start,
        5.0,
        passed,
        format!("worst relative error {worst_rel:.3e} over both modes (tol 1e-6)"),
    )
}

/// Criterion 7: alignment improves on winner-has-it games. The corrected
/// stochastic mode must reach a mean win rate >= 0.6 against its own start,
/// and the exact-mirror tournament must cut exploitability on at least 18
/// of 20 seeds.
pub fn check_alignment_improvement() -> CriterionOutcome {
    let start = Instant::now();
    let seeds = 20u64;

    let mut winrates = Vec::new();
    for seed in 0..seeds {
        let mut game_rng = RngStream::new(970 + seed, stream::GAME_GEN);
        let game = random_game(&mut game_rng, 5, GameKind::Condorcet).unwrap();
        let nash = solve_game(&game, 1e-6, 1_000_000).unwrap();
        let cfg = DynamicsConfig {
            update: UpdateMode::sgd(UpdateKind::SgdCorrected, 0.1, 1),
            steps: 2000,
            judge: JudgeMode::new(JudgeKind::GroundTruthDeterministic, 0.0).unwrap(),
            ..DynamicsConfig::exact_mirror(seed)
        };
        let traj = run_dynamics(&cfg, &game, &nash).unwrap();
        let summary = traj.summary.unwrap();
        let mean: f64 = summary
            .players
            .iter()
            .map(|p| p.final_winrate_vs_init)
            .sum::<f64>()
            / summary.players.len() as f64;
        winrates.push(mean);
    }
    let mean_winrate = winrates.iter().sum::<f64>() / winrates.len() as f64;

    // Tournament calibration: small constant steps and a wider smoothing
    // mass keep the noisy last-iterate process from entrenching on a
    // near-point-mass away from the winner (duplicate pairs freeze updates
    // there).
    let mut improved = 0usize;
    for seed in 0..seeds {
        let mut game_rng = RngStream::new(970 + seed, stream::GAME_GEN);
        let game = random_game(&mut game_rng, 5, GameKind::Condorcet).unwrap();
        let nash = solve_game(&game, 1e-6, 1_000_000).unwrap();
        let cfg = DynamicsConfig {
            steps: 2000,
            judge: JudgeMode::new(JudgeKind::GroundTruthSampled, 0.0).unwrap(),
            schedule: Schedule::Constant { gamma: 0.05 },
            construction: OpponentConstruction::SmoothedPreferred { mu: 0.05 },
            ..DynamicsConfig::exact_mirror(seed)
        };
        let traj = run_dynamics(&cfg, &game, &nash).unwrap();
        let summary = traj.summary.unwrap();
        let initial: f64 = summary
            .players
            .iter()
            .map(|p| p.initial_exploitability)
            .sum::<f64>()
            / summary.players.len() as f64;
        let final_: f64 = summary
            .players
            .iter()
            .map(|p| p.final_exploitability)
            .sum::<f64>()
            / summary.players.len() as f64;
        if final_ < initial {
            improved += 1;
        }
    }

    let passed = mean_winrate >= 0.6 && improved >= 18;
    CriterionOutcome::finish(
        "alignment-improvement",
        start,
        120.0,
        passed,
        format!(
            "corrected-mode mean winrate vs start {mean_winrate:.4} (need >= 0.6); tournament exploitability improved on {improved}/20 seeds (need >= 18)"
        ),
    )
}

/// Criterion 8: the literal-loss run completes and its trajectory is emitted
/// alongside the corrected run with a comparison summary. No directional
/// claim is asserted.
pub fn check_dual_mode_audit(out_dir: &Path) -> CriterionOutcome {
    let start = Instant::now();
    let dir = out_dir.join("dual-mode-audit");
    let cfg = RunConfig {
        generator: Some(GeneratorSpec {
            seed: 98,
            n: 5,
            contexts: 1,
            kind: GameKind::Condorcet,
        }),
        steps: 500,
        judge: JudgeMode::new(JudgeKind::GroundTruthDeterministic, 0.0).unwrap(),
        dual_mode_audit: true,
        seeds: vec![1],
        output_dir: dir.clone(),
        ..RunConfig::default()
    };
    let outcome = run_command(&cfg);
    let (passed, details) = match outcome {
        Ok(report) => {
            let literal_csv = dir.join("run_seed1_sgd-literal.csv").exists();
            let corrected_csv = dir.join("run_seed1_sgd-corrected.csv").exists();
            match report.comparison.as_deref() {
                Some([cmp]) => (
                    literal_csv && corrected_csv,
                    format!(
                        "literal winrate {:.4} vs corrected {:.4}; both trajectories emitted",
                        cmp.literal_final_winrate.unwrap_or(f64::NAN),
                        cmp.corrected_final_winrate.unwrap_or(f64::NAN)
                    ),
                ),
                _ => (false, "comparison summary missing".into()),
            }
        }
        Err(e) => (false, e.to_string()),
    };
    CriterionOutcome::finish("dual-mode-audit", start, 60.0, passed, details)
}

/// Criterion 9: running the same config twice produces byte-identical CSVs.
pub fn check_reproducibility(out_dir: &Path) -> CriterionOutcome {
    let start = Instant::now();
    let make_cfg = |dir: std::path::PathBuf| RunConfig {
        generator: Some(GeneratorSpec {
            seed: 99,
            n: 4,
            contexts: 2,
            kind: GameKind::Cyclic,
        }),
        steps: 100,
        judge: JudgeMode::new(JudgeKind::GroundTruthSampled, 0.1).unwrap(),
        seeds: vec![1, 2],
        output_dir: dir,
        ..RunConfig::default()
    };
    let dir_a = out_dir.join("repro-a");
    let dir_b = out_dir.join("repro-b");
    let run = |dir: &std::path::PathBuf| -> Result<Vec<(String, Vec<u8>)>> {
        run_command(&make_cfg(dir.clone()))?;
        let mut files = Vec::new();
        for seed in [1, 2] {
            let name = format!("run_seed{seed}.csv");
            files.push((name.clone(), fs::read(dir.join(&name))?));
        }
        Ok(files)
    };
    let (passed, details) = match (run(&dir_a), run(&dir_b)) {
        (Ok(a), Ok(b)) => {
            let identical = a == b;
            let bytes: usize = a.iter().map(|(_, data)| data.len()).sum();
            (
                identical,
                format!(
                    "2 seeds x 2 runs, {bytes} CSV bytes compared: {}",
                    if identical {
                        "byte-identical"
                    } else {
                        "DIFFER"
                    }
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => (false, e.to_string()),
    };
    CriterionOutcome::finish("reproducibility", start, 60.0, passed, details)
}

/// Runs the whole battery. The game-validation row reflects the configured
/// game file when one is given; the numbered criteria are self-contained.
/// A game that fails validation stops the battery: its report would not be
/// about a well-formed subject.
pub fn run_battery(cfg: &RunConfig) -> BatteryReport {
    let validation = check_game_validation(cfg);
    let valid = validation.passed;
    let mut outcomes = vec![validation];
    if valid {
        outcomes.push(check_geometric_identity());
        let (suite, suite_seconds) = tournament_suite();
        outcomes.push(check_lemma_inequality(&suite, suite_seconds));
        outcomes.push(check_horizon_bound(&suite, suite_seconds));
        outcomes.push(check_expert_contraction());
        outcomes.push(check_nash_oracle());
        outcomes.push(check_gradients());
        outcomes.push(check_alignment_improvement());
        outcomes.push(check_dual_mode_audit(&cfg.output_dir.join("verify")));
        outcomes.push(check_reproducibility(&cfg.output_dir.join("verify")));
    }
    BatteryReport { outcomes }
}

/// Prints the pass/fail table and returns an error carrying exit code 3
/// when any criterion failed.
pub fn verify_command(cfg: &RunConfig) -> Result<BatteryReport> {
    let report = run_battery(cfg);
    print!("{}", report.table());
    if report.passed() {
        Ok(report)
    } else {
        Err(HarnessError::Invariant(
            "verification battery has failing criteria".into(),
        ))
    }
}
