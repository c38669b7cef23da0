//! Mirror-descent Nash learning on finite preference games.
//!
//! The crate provides the full desk-scale engine: preference-game types and
//! generators, an exact equilibrium oracle with exploitability certificates,
//! judges that turn sampled response pairs into preference verdicts, the
//! two-player update dynamics (exact mirror steps and two stochastic loss
//! modes), and numerical checks of the per-step and fixed-horizon
//! convergence inequalities.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod judge;
pub mod nash;
pub mod policy;
pub mod rng;

pub use analysis::{
    horizon_bound_check, lemma_step_check, summarize, StepRecord, Trajectory, TrajectorySummary,
};
pub use dynamics::{
    adaptive_delta, lana_exact_step, lana_sgd_step, maio_update, mirror_map, run_dynamics,
    DeltaRule, DynamicsConfig, PolicyInit, Schedule, UpdateKind, UpdateMode,
};
pub use error::{CoreError, Result};
pub use game::{
    expected_winrate, random_game, random_game_with_contexts, validate_game, ContextGame, GameKind,
    PreferenceGame, Violation,
};
pub use judge::{
    judge, sample_pair, ImprovedOpponent, JudgeKind, JudgeMode, JudgeVerdict, OpponentConstruction,
    PairSample,
};
pub use nash::{
    brute_force_nash, exploitability, solve_game, solve_nash, NashSolution, SolveMethod,
};
pub use policy::{entropy, kl_divergence, BoundParams, LogitPolicy, Policy};
pub use rng::RngStream;
