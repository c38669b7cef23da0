//! Run configuration: the JSON document schema, defaults, validation, and
//! canonical serialization.
//!
//! Unknown keys are rejected, defaults are filled in on parse and echoed
//! back on serialization, so `serialize(parse(doc))` is idempotent.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use lana_core::dynamics::{
    default_batch, default_sgd_lr, DeltaRule, DynamicsConfig, PolicyInit, Schedule, UpdateKind,
    UpdateMode,
};
use lana_core::game::GameKind;
use lana_core::judge::{JudgeMode, OpponentConstruction};
use lana_core::policy::DEFAULT_EPSILON_FLOOR;

use crate::error::{HarnessError, Result};

/// Parameters of the random-game generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_contexts")]
    pub contexts: usize,
    pub kind: GameKind,
}

fn default_contexts() -> usize {
    1
}

/// The whole experiment description. One of `game_file` / `generator` names
/// the game; everything else has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,

    #[serde(default = "default_update_mode")]
    pub update_mode: UpdateKind,
    #[serde(default)]
    pub judge: JudgeMode,
    #[serde(default)]
    pub opponent: OpponentConstruction,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_sgd_lr")]
    pub sgd_lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_epsilon_floor")]
    pub epsilon_floor: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Early-stop threshold on the mean KL to the equilibrium; 0 disables.
    #[serde(default)]
    pub convergence_tol: f64,
    #[serde(default)]
    pub sequential: bool,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    #[serde(default)]
    pub init: PolicyInit,
    /// Run both stochastic loss orientations per seed and emit a comparison.
    #[serde(default)]
    pub dual_mode_audit: bool,
    #[serde(default = "default_nash_tol")]
    pub nash_tol: f64,
    #[serde(default = "default_nash_max_iter")]
    pub nash_max_iter: usize,
}

fn default_update_mode() -> UpdateKind {
    UpdateKind::ExactMirror
}

fn default_steps() -> usize {
    2000
}

fn default_epsilon_floor() -> f64 {
    DEFAULT_EPSILON_FLOOR
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_nash_tol() -> f64 {
    1e-6
}

fn default_nash_max_iter() -> usize {
    1_000_000
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            game_file: None,
            generator: None,
            update_mode: default_update_mode(),
            judge: JudgeMode::default(),
            opponent: OpponentConstruction::default(),
            schedule: Schedule::default(),
            steps: default_steps(),
            sgd_lr: default_sgd_lr(),
            batch: default_batch(),
            epsilon_floor: default_epsilon_floor(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            convergence_tol: 0.0,
            sequential: false,
            delta_rule: DeltaRule::default(),
            init: PolicyInit::default(),
            dual_mode_audit: false,
            nash_tol: default_nash_tol(),
            nash_max_iter: default_nash_max_iter(),
        }
    }
}

impl RunConfig {
    /// Field-level constraints beyond what the schema can express.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(HarnessError::Config(msg));
        match (&self.game_file, &self.generator) {
            (None, None) => {
                return cfg_err("one of game_file / generator is required".into());
            }
            (Some(_), Some(_)) => {
                return cfg_err("game_file and generator are mutually exclusive".into());
            }
            _ => {}
        }
        if let Some(gen) = &self.generator {
            if gen.n < 2 {
                return cfg_err(format!("generator.n: {} is below the minimum of 2", gen.n));
            }
            if gen.contexts == 0 {
                return cfg_err("generator.contexts: must be at least 1".into());
            }
        }
        if self.seeds.is_empty() {
            return cfg_err("seeds: at least one seed is required".into());
        }
        if !(self.nash_tol > 0.0) {
            return cfg_err(format!("nash_tol: {} must be positive", self.nash_tol));
        }
        if self.nash_max_iter == 0 {
            return cfg_err("nash_max_iter: must be at least 1".into());
        }
        // Dynamics-level constraints (schedule range, learning rate, batch,
        // floor, noise) are checked by the owning types.
        self.dynamics_for_seed(self.seeds[0])
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// The dynamics description for one seed.
    pub fn dynamics_for_seed(&self, seed: u64) -> DynamicsConfig {
        DynamicsConfig {
            update: UpdateMode {
                kind: self.update_mode,
                sgd_lr: self.sgd_lr,
                batch: self.batch,
            },
            schedule: self.schedule.clone(),
            steps: self.steps,
            judge: self.judge,
            construction: self.opponent,
            epsilon_floor: self.epsilon_floor,
            convergence_tol: self.convergence_tol,
            sequential: self.sequential,
            delta_rule: self.delta_rule,
            init: self.init,
            seed,
        }
    }

    /// Canonical serialization with all defaults filled in.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serialization cannot fail");
        out.push('\n');
        out
    }
}

/// Parses and validates a config document. Schema violations name the field
/// and constraint.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
