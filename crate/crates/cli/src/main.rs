use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use lana_cli::config::RunConfig;
use lana_cli::error::{HarnessError, Result};
use lana_cli::{gen_command, run_command, solve_command, verify_command};
use lana_core::dynamics::{DeltaRule, PolicyInit, Schedule, UpdateKind};
use lana_core::game::GameKind;
use lana_core::judge::{JudgeKind, OpponentConstruction};

/// Nash learning on finite preference games: generate games, solve them
/// exactly, run the self-play dynamics, and verify the convergence bounds.
#[derive(Parser)]
#[command(name = "lana", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random preference game and emit it as JSON.
    Gen {
        #[arg(long)]
        seed: u64,
        /// Responses per context.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        contexts: usize,
        /// uniform | condorcet | cyclic
        #[arg(long, value_parser = parse_kebab::<GameKind>)]
        kind: GameKind,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the game and emit the equilibrium with its exploitability
    /// certificate.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the dynamics for every configured seed and write CSV/SVG/JSON
    /// artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full verification battery and print a pass/fail table.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Config document plus field-level overrides; flags win over the document.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config document.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Path to a game JSON file (replaces any generator).
    #[arg(long)]
    game_file: Option<PathBuf>,
    /// Random-game generator seed.
    #[arg(long)]
    gen_seed: Option<u64>,
    /// Responses per generated context.
    #[arg(long)]
    n: Option<usize>,
    /// Generated context count.
    #[arg(long)]
    contexts: Option<usize>,
    /// uniform | condorcet | cyclic
    #[arg(long, value_parser = parse_kebab::<GameKind>)]
    kind: Option<GameKind>,

    /// exact-mirror | sgd-literal | sgd-corrected
    #[arg(long, value_parser = parse_kebab::<UpdateKind>)]
    update_mode: Option<UpdateKind>,
    /// ground-truth-deterministic | ground-truth-sampled | self-judge | expert
    #[arg(long, value_parser = parse_kebab::<JudgeKind>)]
    judge: Option<JudgeKind>,
    /// Verdict flip probability in [0, 1/2).
    #[arg(long)]
    noise_epsilon: Option<f64>,
    /// smoothed-preferred | best-response | expert-policy
    #[arg(long)]
    opponent: Option<String>,
    /// Smoothing mass for the smoothed-preferred construction.
    #[arg(long)]
    mu: Option<f64>,
    /// constant | harmonic
    #[arg(long)]
    schedule: Option<String>,
    /// Step size for the schedule.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sgd_lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epsilon_floor: Option<f64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    /// Gauss-Seidel update order (second player sees the first player's
    /// fresh policy).
    #[arg(long)]
    sequential: bool,
    /// adaptive | literal-reward
    #[arg(long, value_parser = parse_kebab::<DeltaRule>)]
    delta_rule: Option<DeltaRule>,
    /// uniform | random
    #[arg(long, value_parser = parse_kebab::<PolicyInit>)]
    init: Option<PolicyInit>,
    /// Run both stochastic loss orientations per seed with a comparison.
    #[arg(long)]
    dual_mode_audit: bool,
    #[arg(long)]
    nash_tol: Option<f64>,
    #[arg(long)]
    nash_max_iter: Option<usize>,
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    HarnessError::Config(format!("reading {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
            }
            None => RunConfig::default(),
        };

        if let Some(path) = &self.game_file {
            cfg.game_file = Some(path.clone());
            cfg.generator = None;
        }
        if self.gen_seed.is_some()
            || self.n.is_some()
            || self.contexts.is_some()
            || self.kind.is_some()
        {
            let mut gen = cfg.generator.take().unwrap_or(lana_cli::GeneratorSpec {
                seed: 0,
                n: 0,
                contexts: 1,
                kind: GameKind::Uniform,
            });
            if let Some(seed) = self.gen_seed {
                gen.seed = seed;
            }
            if let Some(n) = self.n {
                gen.n = n;
            }
            if let Some(contexts) = self.contexts {
                gen.contexts = contexts;
            }
            if let Some(kind) = self.kind {
                gen.kind = kind;
            }
            if gen.n == 0 {
                return Err(HarnessError::Config(
                    "generator needs --n (and --gen-seed, --kind)".into(),
                ));
            }
            cfg.generator = Some(gen);
            cfg.game_file = None;
        }

        if let Some(v) = self.update_mode {
            cfg.update_mode = v;
        }
        if let Some(v) = self.judge {
            cfg.judge.kind = v;
        }
        if let Some(v) = self.noise_epsilon {
            cfg.judge.noise_epsilon = v;
        }
        if let Some(name) = &self.opponent {
            cfg.opponent = match name.as_str() {
                "smoothed-preferred" => OpponentConstruction::SmoothedPreferred {
                    mu: self.mu.unwrap_or(lana_core::judge::default_mu()),
                },
                "best-response" => OpponentConstruction::BestResponse,
                "expert-policy" => OpponentConstruction::ExpertPolicy,
                other => {
                    return Err(HarnessError::Config(format!(
                        "opponent: unknown construction {other}"
                    )))
                }
            };
        } else if let Some(mu) = self.mu {
            if let OpponentConstruction::SmoothedPreferred { .. } = cfg.opponent {
                cfg.opponent = OpponentConstruction::SmoothedPreferred { mu };
            }
        }
        match (self.schedule.as_deref(), self.gamma) {
            (Some("constant"), g) => {
                cfg.schedule = Schedule::Constant {
                    gamma: g.unwrap_or(0.1),
                }
            }
            (Some("harmonic"), g) => {
                cfg.schedule = Schedule::Harmonic {
                    gamma: g.unwrap_or(0.5),
                }
            }
            (Some(other), _) => return Err(HarnessError::Config(format!(
                "schedule: unknown kind {other} (constant | harmonic; explicit lists via --config)"
            ))),
            (None, Some(gamma)) => match cfg.schedule {
                Schedule::Constant { .. } => cfg.schedule = Schedule::Constant { gamma },
                Schedule::Harmonic { .. } => cfg.schedule = Schedule::Harmonic { gamma },
                Schedule::Explicit { .. } => {
                    return Err(HarnessError::Config(
                        "gamma: cannot override an explicit schedule".into(),
                    ))
                }
            },
            (None, None) => {}
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.sgd_lr {
            cfg.sgd_lr = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.epsilon_floor {
            cfg.epsilon_floor = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.convergence_tol {
            cfg.convergence_tol = v;
        }
        if self.sequential {
            cfg.sequential = true;
        }
        if let Some(v) = self.delta_rule {
            cfg.delta_rule = v;
        }
        if let Some(v) = self.init {
            cfg.init = v;
        }
        if self.dual_mode_audit {
            cfg.dual_mode_audit = true;
        }
        if let Some(v) = self.nash_tol {
            cfg.nash_tol = v;
        }
        if let Some(v) = self.nash_max_iter {
            cfg.nash_max_iter = v;
        }

        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(text: String, out: Option<&PathBuf>) {
    match out {
        Some(path) => println!("wrote {}", path.display()),
        None => print!("{text}"),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            seed,
            n,
            contexts,
            kind,
            out,
        } => {
            let text = gen_command(seed, n, contexts, kind, out.as_deref())?;
            emit(text, out.as_ref());
            Ok(())
        }
        Command::Solve { config, out } => {
            let cfg = config.build()?;
            let text = solve_command(&cfg, out.as_deref())?;
            emit(text, out.as_ref());
            Ok(())
        }
        Command::Run { config } => {
            let cfg = config.build()?;
            let report = run_command(&cfg)?;
            for seed in &report.seeds {
                if let Some(summary) = &seed.summary {
                    let mean_kl: f64 = summary
                        .players
                        .iter()
                        .map(|p| p.final_kl_to_star)
                        .sum::<f64>()
                        / summary.players.len() as f64;
                    let mean_win: f64 = summary
                        .players
                        .iter()
                        .map(|p| p.final_winrate_vs_init)
                        .sum::<f64>()
                        / summary.players.len() as f64;
                    println!(
                        "seed {} [{}]: {} steps, final KL {:.6}, winrate vs start {:.4} -> {}",
                        seed.seed, seed.mode, summary.steps_executed, mean_kl, mean_win, seed.csv
                    );
                }
            }
            println!("wrote {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Verify { config } => {
            let cfg = config.build()?;
            verify_command(&cfg).map(|_| ())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
