//! Experiment harness: configuration, orchestration across seeds and modes,
//! deterministic artifact serialization, and the verification battery.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod verify;

pub use config::{parse_config, GeneratorSpec, RunConfig};
pub use error::{HarnessError, Result};
pub use output::{trajectory_csv, trajectory_plot_svg, CSV_HEADER};
pub use runner::{gen_command, load_or_generate_game, run_command, solve_command, RunReport};
pub use verify::{run_battery, verify_command, BatteryReport, CriterionOutcome};
