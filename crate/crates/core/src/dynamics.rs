//! The update engine: exact mirror-space updates against an improved
//! opponent, and the stochastic two-player loop with its SGD loss modes.
//!
//! Policies live on the simplex; an update moves in the dual (log) space by
//! `delta` and projects back, which closes to `pi' ∝ pi * exp(delta)`. The
//! adaptive rule sets `delta = gamma * log(pi_tilde / pi)`, so one step is a
//! geometric mixture that interpolates toward the improved opponent and
//! reaches it exactly at `gamma = 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{lemma_step_check, ContextStepRecord, StepFlags, StepRecord, Trajectory};
use crate::error::{CoreError, Result};
use crate::game::PreferenceGame;
use crate::judge::{
    best_response, expert_opponent, judge, sample_pair, smoothed_preferred, ImprovedOpponent,
    JudgeMode, JudgeVerdict, OpponentConstruction, PairSample,
};
use crate::nash::{exploitability, NashSolution};
use crate::policy::{
    floor_if_needed, kl_divergence, random_simplex, softmax, BoundParams, LogitPolicy, Policy,
    DEFAULT_EPSILON_FLOOR,
};
use crate::rng::{stream, RngStream};

pub const PLAYERS: usize = 2;

/// Learning-rate schedule for the mirror step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    Constant {
        gamma: f64,
    },
    /// `gamma / (t + 1)` at step `t`.
    Harmonic {
        gamma: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { gamma: 0.1 }
    }
}

impl Schedule {
    /// Step size at 0-based step `t`.
    pub fn gamma_at(&self, t: usize) -> f64 {
        match self {
            Schedule::Constant { gamma } => *gamma,
            Schedule::Harmonic { gamma } => gamma / (t + 1) as f64,
            Schedule::Explicit { values } => values[t],
        }
    }

    pub fn constant_gamma(&self) -> Option<f64> {
        match self {
            Schedule::Constant { gamma } => Some(*gamma),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Schedule::Constant { .. } => "constant",
            Schedule::Harmonic { .. } => "harmonic",
            Schedule::Explicit { .. } => "explicit",
        }
    }

    /// Every step size within the horizon must lie in `(0, 1]`.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            Schedule::Constant { gamma } | Schedule::Harmonic { gamma } => {
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(CoreError::param(
                        "gamma",
                        format!("{gamma} is outside (0, 1]"),
                    ));
                }
            }
            Schedule::Explicit { values } => {
                if values.len() < horizon {
                    return Err(CoreError::param(
                        "schedule",
                        format!("{} explicit values for horizon {horizon}", values.len()),
                    ));
                }
                for (t, g) in values.iter().take(horizon).enumerate() {
                    if !(*g > 0.0 && *g <= 1.0) {
                        return Err(CoreError::param(
                            "schedule",
                            format!("value {g} at step {t} is outside (0, 1]"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Which update is applied each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    /// Closed-form mirror update on the simplex.
    ExactMirror,
    /// Stochastic logit descent on the loss exactly as the algorithm states
    /// it: descending it raises the likelihood of the *rejected* response.
    /// Kept for side-by-side study; see `SgdCorrected`.
    SgdLiteral,
    /// Same loss with the orientation flipped so that descent raises the
    /// likelihood of the *preferred* response.
    SgdCorrected,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateKind::ExactMirror => write!(f, "exact-mirror"),
            UpdateKind::SgdLiteral => write!(f, "sgd-literal"),
            UpdateKind::SgdCorrected => write!(f, "sgd-corrected"),
        }
    }
}

/// Update kind plus the SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateMode {
    pub kind: UpdateKind,
    #[serde(default = "default_sgd_lr")]
    pub sgd_lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

pub fn default_sgd_lr() -> f64 {
    0.1
}

pub fn default_batch() -> usize {
    1
}

impl UpdateMode {
    pub fn exact_mirror() -> Self {
        UpdateMode {
            kind: UpdateKind::ExactMirror,
            sgd_lr: default_sgd_lr(),
            batch: default_batch(),
        }
    }

    pub fn sgd(kind: UpdateKind, sgd_lr: f64, batch: usize) -> Self {
        UpdateMode {
            kind,
            sgd_lr,
            batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sgd_lr > 0.0) {
            return Err(CoreError::param("sgd_lr", "must be positive"));
        }
        if self.batch == 0 {
            return Err(CoreError::param("batch", "must be at least 1"));
        }
        Ok(())
    }
}

/// Which dual-space increment is applied.
///
/// The two readings of the adaptive reward differ in sign and in whether the
/// step size survives the substitution; both are implemented so they can be
/// compared side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRule {
    /// `delta = gamma * log(pi_tilde / pi)`: interpolates toward the
    /// improved opponent. This is the form the convergence analysis uses.
    #[default]
    Adaptive,
    /// `delta = gamma * Q` with `Q = log(pi / pi_tilde) / gamma`: the step
    /// size cancels and the step moves away from the improved opponent.
    LiteralReward,
}

/// Initial policy for both players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyInit {
    /// Both players start at the uniform policy (shared start).
    #[default]
    Uniform,
    /// Each player starts at an independent random simplex point.
    Random,
}

/// One dual-space step for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorStep {
    pub delta: Vec<f64>,
    pub gamma: f64,
    /// Dual coordinates of the pre-projection point: `log(pi) + delta`.
    pub dual_point: Vec<f64>,
    /// Reward vector `Q` with `delta = gamma * Q`.
    pub q_rewards: Vec<f64>,
}

impl MirrorStep {
    pub fn max_abs_delta(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

/// The mirror map for negative entropy: elementwise natural log.
pub fn mirror_map(p: &[f64]) -> Result<Vec<f64>> {
    p.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > 0.0 {
                Ok(x.ln())
            } else {
                Err(CoreError::ZeroSupport { index: i, value: x })
            }
        })
        .collect()
}

fn build_step(
    pi_t: &[f64],
    pi_tilde: &[f64],
    gamma: f64,
    delta_of: impl Fn(f64, f64) -> f64,
) -> Result<MirrorStep> {
    if pi_t.len() != pi_tilde.len() {
        return Err(CoreError::LengthMismatch {
            left: pi_t.len(),
            right: pi_tilde.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(CoreError::param("gamma", "must be positive"));
    }
    let log_t = mirror_map(pi_t)?;
    let log_tilde = mirror_map(pi_tilde)?;
    let delta: Vec<f64> = log_t
        .iter()
        .zip(&log_tilde)
        .map(|(&lt, &ltl)| delta_of(lt, ltl))
        .collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(CoreError::param("delta", "non-finite dual increment"));
    }
    let dual_point = log_t.iter().zip(&delta).map(|(l, d)| l + d).collect();
    let q_rewards = delta.iter().map(|d| d / gamma).collect();
    Ok(MirrorStep {
        delta,
        gamma,
        dual_point,
        q_rewards,
    })
}

/// Adaptive increment `delta = gamma * (log pi_tilde - log pi_t)`.
/// Both vectors must have full support (apply the floor first).
pub fn adaptive_delta(pi_t: &[f64], pi_tilde: &[f64], gamma: f64) -> Result<MirrorStep> {
    build_step(pi_t, pi_tilde, gamma, |log_t, log_tilde| {
        gamma * (log_tilde - log_t)
    })
}

/// Literal-reward increment `delta = log pi_t - log pi_tilde`; the step size
/// cancels out of `gamma * Q` entirely.
pub fn literal_reward_delta(pi_t: &[f64], pi_tilde: &[f64], gamma: f64) -> Result<MirrorStep> {
    build_step(pi_t, pi_tilde, gamma, |log_t, log_tilde| log_t - log_tilde)
}

/// Applies a mirror step: `pi' ∝ pi * exp(delta)`, normalized, floored when
/// an entry would drop below `epsilon_floor`. Overflow is guarded by
/// subtracting the maximum dual coordinate before exponentiation.
pub fn maio_update(pi_t: &[f64], step: &MirrorStep, epsilon_floor: f64) -> Result<Vec<f64>> {
    if pi_t.len() != step.delta.len() {
        return Err(CoreError::LengthMismatch {
            left: pi_t.len(),
            right: step.delta.len(),
        });
    }
    let log_t = mirror_map(pi_t)?;
    let w: Vec<f64> = log_t.iter().zip(&step.delta).map(|(l, d)| l + d).collect();
    let max = w.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out: Vec<f64> = w.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(floor_if_needed(&out, epsilon_floor))
}

/// Loss value and its gradient in the player's own logits for one verdict.
///
/// Literal mode: `loss = log opp(preferred) - log own(rejected)`; the
/// opponent term is constant in the player's logits, so the gradient is
/// `softmax(theta) - e_rejected` and descent raises the rejected response.
/// Corrected mode: `loss = log opp(rejected) - log own(preferred)` with
/// gradient `softmax(theta) - e_preferred`, so descent raises the preferred
/// response.
pub fn sgd_loss_gradient(
    theta: &[f64],
    opponent: &[f64],
    preferred: usize,
    rejected: usize,
    kind: UpdateKind,
) -> Result<(f64, Vec<f64>)> {
    let own = softmax(theta);
    let (opp_term, own_target) = match kind {
        UpdateKind::SgdLiteral => (opponent[preferred], rejected),
        UpdateKind::SgdCorrected => (opponent[rejected], preferred),
        UpdateKind::ExactMirror => {
            return Err(CoreError::param(
                "update_mode",
                "exact-mirror has no SGD loss",
            ))
        }
    };
    let loss = opp_term.ln() - own[own_target].ln();
    let mut grad = own;
    grad[own_target] -= 1.0;
    Ok((loss, grad))
}

/// One SGD descent step on a single verdict; returns the updated logits and
/// the loss value at the pre-update parameters.
pub fn lana_sgd_step(
    theta: &[f64],
    opponent: &[f64],
    verdict: &JudgeVerdict,
    mode: &UpdateMode,
) -> Result<(Vec<f64>, f64)> {
    mode.validate()?;
    let (loss, grad) = sgd_loss_gradient(
        theta,
        opponent,
        verdict.preferred,
        verdict.rejected,
        mode.kind,
    )?;
    let updated = theta
        .iter()
        .zip(&grad)
        .map(|(t, g)| t - mode.sgd_lr * g)
        .collect();
    Ok((updated, loss))
}

/// Policies of the two players.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPlayerState {
    pub policies: [Policy; PLAYERS],
}

/// What happened to one context of one player during a step.
#[derive(Debug, Clone)]
pub struct ContextStepDetail {
    pub verdict: Option<JudgeVerdict>,
    pub improved: Option<ImprovedOpponent>,
    pub step: Option<MirrorStep>,
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct PlayerStepDetail {
    pub contexts: Vec<ContextStepDetail>,
}

/// Fixed inputs of one exact-mirror step.
pub struct ExactStepInputs<'a> {
    pub game: &'a PreferenceGame,
    pub judge: JudgeMode,
    pub construction: OpponentConstruction,
    pub epsilon_floor: f64,
    pub delta_rule: DeltaRule,
    /// Gauss-Seidel order: the second player sees the first player's fresh
    /// policy. Default is a simultaneous update from the pre-step snapshot.
    pub sequential: bool,
    /// Equilibrium policy for expert judging / expert opponents.
    pub expert: Option<&'a Policy>,
}

/// Per-purpose random streams owned by one run.
pub struct RunRngs {
    pub pair: [RngStream; PLAYERS],
    pub judge: [RngStream; PLAYERS],
    pub init: RngStream,
}

impl RunRngs {
    pub fn for_seed(seed: u64) -> RunRngs {
        RunRngs {
            pair: [
                RngStream::new(seed, stream::PAIR_P1),
                RngStream::new(seed, stream::PAIR_P2),
            ],
            judge: [
                RngStream::new(seed, stream::JUDGE_P1),
                RngStream::new(seed, stream::JUDGE_P2),
            ],
            init: RngStream::new(seed, stream::INIT),
        }
    }
}

/// One step of the two-player loop in exact-mirror mode: each player samples
/// a response pair per context, the opponent judges it, the preferred sample
/// becomes the improved opponent, and the player takes one mirror step
/// toward it. Duplicate pairs skip that player's update for that context.
pub fn lana_exact_step(
    state: &TwoPlayerState,
    inputs: &ExactStepInputs<'_>,
    gamma: f64,
    rngs: &mut RunRngs,
) -> Result<(TwoPlayerState, Vec<PlayerStepDetail>)> {
    let game = inputs.game;
    let mut next = state.clone();
    let mut details = Vec::with_capacity(PLAYERS);

    for i in 0..PLAYERS {
        let opponent = if inputs.sequential && i == 1 {
            next.policies[0].clone()
        } else {
            state.policies[1 - i].clone()
        };
        let mut contexts = Vec::with_capacity(game.contexts.len());

        for (c, ctx) in game.contexts.iter().enumerate() {
            let own = state.policies[i].contexts[c].probs.clone();
            let opp = &opponent.contexts[c].probs;
            let expert = inputs.expert.map(|e| e.contexts[c].probs.as_slice());

            let (verdict, improved) = match inputs.construction {
                OpponentConstruction::SmoothedPreferred { mu } => {
                    match sample_pair(&own, &mut rngs.pair[i]) {
                        PairSample::Duplicate => {
                            contexts.push(ContextStepDetail {
                                verdict: None,
                                improved: None,
                                step: None,
                                duplicate: true,
                            });
                            continue;
                        }
                        PairSample::Pair(y, y2) => {
                            let v =
                                judge(inputs.judge, ctx, opp, expert, y, y2, &mut rngs.judge[i])?;
                            let imp = smoothed_preferred(&v, ctx.n(), mu, inputs.epsilon_floor);
                            (Some(v), imp)
                        }
                    }
                }
                OpponentConstruction::BestResponse => {
                    (None, best_response(ctx, &own, inputs.epsilon_floor))
                }
                OpponentConstruction::ExpertPolicy => {
                    let scores = expert.ok_or(CoreError::MissingExpert)?;
                    (None, expert_opponent(scores, inputs.epsilon_floor))
                }
            };

            let step = match inputs.delta_rule {
                DeltaRule::Adaptive => adaptive_delta(&own, &improved.dist, gamma)?,
                DeltaRule::LiteralReward => literal_reward_delta(&own, &improved.dist, gamma)?,
            };
            let updated = maio_update(&own, &step, inputs.epsilon_floor)?;
            next.policies[i].contexts[c].probs = updated;
            contexts.push(ContextStepDetail {
                verdict,
                improved: Some(improved),
                step: Some(step),
                duplicate: false,
            });
        }
        details.push(PlayerStepDetail { contexts });
    }
    Ok((next, details))
}

/// Full description of one dynamics run; echoed into every trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub update: UpdateMode,
    pub schedule: Schedule,
    pub steps: usize,
    pub judge: JudgeMode,
    pub construction: OpponentConstruction,
    pub epsilon_floor: f64,
    /// Early stop once the mean KL to the equilibrium drops below this;
    /// zero disables early stopping.
    pub convergence_tol: f64,
    pub sequential: bool,
    pub delta_rule: DeltaRule,
    pub init: PolicyInit,
    pub seed: u64,
}

impl DynamicsConfig {
    pub fn exact_mirror(seed: u64) -> DynamicsConfig {
        DynamicsConfig {
            update: UpdateMode::exact_mirror(),
            schedule: Schedule::default(),
            steps: 2000,
            judge: JudgeMode::default(),
            construction: OpponentConstruction::default(),
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            convergence_tol: 0.0,
            sequential: false,
            delta_rule: DeltaRule::Adaptive,
            init: PolicyInit::Uniform,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.update.validate()?;
        self.schedule.validate(self.steps)?;
        self.judge.validate()?;
        self.construction.validate()?;
        if !(0.0..=1e-3).contains(&self.epsilon_floor) {
            return Err(CoreError::param(
                "epsilon_floor",
                format!("{} is outside [0, 1e-3]", self.epsilon_floor),
            ));
        }
        if self.convergence_tol < 0.0 {
            return Err(CoreError::param("convergence_tol", "must be >= 0"));
        }
        if self.update.kind == UpdateKind::ExactMirror && self.epsilon_floor == 0.0 {
            if let OpponentConstruction::SmoothedPreferred { mu } = self.construction {
                if mu == 0.0 {
                    return Err(CoreError::param(
                        "epsilon_floor",
                        "mu and epsilon_floor cannot both be zero: the improved opponent would lose support",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A run that stopped on a component error; whatever was recorded before the
/// failure is preserved.
#[derive(Debug)]
pub struct DynamicsFailure {
    pub error: CoreError,
    pub partial: Trajectory,
}

impl fmt::Display for DynamicsFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dynamics aborted after {} records: {}",
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for DynamicsFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

enum EngineState {
    Mirror(TwoPlayerState),
    Sgd([LogitPolicy; PLAYERS]),
}

impl EngineState {
    fn policies(&self) -> [Policy; PLAYERS] {
        match self {
            EngineState::Mirror(s) => s.policies.clone(),
            EngineState::Sgd(logits) => [logits[0].policy(), logits[1].policy()],
        }
    }
}

/// Runs the configured dynamics for both players over the whole game,
/// emitting one record per step per player. Stops early once the mean KL to
/// the equilibrium falls below `convergence_tol` (when positive).
pub fn run_dynamics(
    cfg: &DynamicsConfig,
    game: &PreferenceGame,
    nash: &NashSolution,
) -> std::result::Result<Trajectory, Box<DynamicsFailure>> {
    let mut trajectory = Trajectory {
        config: cfg.clone(),
        records: Vec::new(),
        summary: None,
    };
    let fail = |error: CoreError, partial: Trajectory| Box::new(DynamicsFailure { error, partial });

    if let Err(e) = cfg.validate() {
        return Err(fail(e, trajectory));
    }
    if let Err(e) = game.check_shape() {
        return Err(fail(e, trajectory));
    }
    let pi_star = nash.policy();
    if let Err(e) = game.check_policy(&pi_star) {
        return Err(fail(e, trajectory));
    }

    let mut rngs = RunRngs::for_seed(cfg.seed);
    let bp = BoundParams::default();

    let mut state = match (cfg.update.kind, cfg.init) {
        (UpdateKind::ExactMirror, PolicyInit::Uniform) => EngineState::Mirror(TwoPlayerState {
            policies: [Policy::uniform_for(game), Policy::uniform_for(game)],
        }),
        (UpdateKind::ExactMirror, PolicyInit::Random) => EngineState::Mirror(TwoPlayerState {
            policies: [
                Policy::random_for(game, &mut rngs.init),
                Policy::random_for(game, &mut rngs.init),
            ],
        }),
        (_, init) => {
            let mut logits = [LogitPolicy::zeros_for(game), LogitPolicy::zeros_for(game)];
            if init == PolicyInit::Random {
                for player in &mut logits {
                    for ctx in &mut player.contexts {
                        let probs = random_simplex(ctx.theta.len(), &mut rngs.init);
                        ctx.theta = probs.iter().map(|p| p.ln()).collect();
                    }
                }
            }
            EngineState::Sgd(logits)
        }
    };

    let initial = state.policies();

    for player in 0..PLAYERS {
        let record = build_record(&RecordInputs {
            t: 0,
            player,
            policy: &initial[player],
            details: None,
            old: None,
            gamma: 0.0,
            losses: None,
            game,
            pi_star: &pi_star,
            initial: &initial[player],
            bp: &bp,
            delta_rule: cfg.delta_rule,
        });
        match record {
            Ok(r) => trajectory.records.push(r),
            Err(e) => return Err(fail(e, trajectory)),
        }
    }

    for t in 0..cfg.steps {
        let gamma = cfg.schedule.gamma_at(t);
        let mut step_records = Vec::with_capacity(PLAYERS);

        match &mut state {
            EngineState::Mirror(two) => {
                let inputs = ExactStepInputs {
                    game,
                    judge: cfg.judge,
                    construction: cfg.construction,
                    epsilon_floor: cfg.epsilon_floor,
                    delta_rule: cfg.delta_rule,
                    sequential: cfg.sequential,
                    expert: Some(&pi_star),
                };
                let (next, details) = match lana_exact_step(two, &inputs, gamma, &mut rngs) {
                    Ok(x) => x,
                    Err(e) => return Err(fail(e, trajectory)),
                };
                for player in 0..PLAYERS {
                    let record = build_record(&RecordInputs {
                        t: t + 1,
                        player,
                        policy: &next.policies[player],
                        details: Some(&details[player]),
                        old: Some(&two.policies[player]),
                        gamma,
                        losses: None,
                        game,
                        pi_star: &pi_star,
                        initial: &initial[player],
                        bp: &bp,
                        delta_rule: cfg.delta_rule,
                    });
                    match record {
                        Ok(r) => step_records.push(r),
                        Err(e) => return Err(fail(e, trajectory)),
                    }
                }
                *two = next;
            }
            EngineState::Sgd(logits) => {
                // Pre-step snapshots: with a simultaneous update the first
                // player's fresh parameters are not visible to the second.
                let snapshot = [logits[0].policy(), logits[1].policy()];
                let mut outcomes_by_player = Vec::with_capacity(PLAYERS);
                for i in 0..PLAYERS {
                    let opponent = if cfg.sequential && i == 1 {
                        logits[0].policy()
                    } else {
                        snapshot[1 - i].clone()
                    };
                    let outcomes = match sgd_player_step(
                        game,
                        &mut logits[i],
                        &opponent,
                        &pi_star,
                        cfg,
                        &mut rngs.pair[i],
                        &mut rngs.judge[i],
                    ) {
                        Ok(o) => o,
                        Err(e) => return Err(fail(e, trajectory)),
                    };
                    outcomes_by_player.push(outcomes);
                }
                for (i, outcomes) in outcomes_by_player.iter().enumerate() {
                    let policy = logits[i].policy();
                    let record = build_record(&RecordInputs {
                        t: t + 1,
                        player: i,
                        policy: &policy,
                        details: None,
                        old: None,
                        gamma,
                        losses: Some(outcomes),
                        game,
                        pi_star: &pi_star,
                        initial: &initial[i],
                        bp: &bp,
                        delta_rule: cfg.delta_rule,
                    });
                    match record {
                        Ok(r) => step_records.push(r),
                        Err(e) => return Err(fail(e, trajectory)),
                    }
                }
            }
        }

        let mean_kl =
            step_records.iter().map(|r| r.kl_to_star_mean).sum::<f64>() / step_records.len() as f64;
        trajectory.records.extend(step_records);
        if cfg.convergence_tol > 0.0 && mean_kl < cfg.convergence_tol {
            break;
        }
    }

    match crate::analysis::summarize(&trajectory) {
        Ok(summary) => trajectory.summary = Some(summary),
        Err(e) => return Err(fail(e, trajectory)),
    }
    Ok(trajectory)
}

/// Loss and flags for one context after a (possibly batched) SGD update.
#[derive(Debug, Clone, Copy)]
pub struct ContextSgdOutcome {
    pub loss: Option<f64>,
    pub flags: StepFlags,
}

struct RecordInputs<'a> {
    t: usize,
    player: usize,
    policy: &'a Policy,
    details: Option<&'a PlayerStepDetail>,
    old: Option<&'a Policy>,
    gamma: f64,
    losses: Option<&'a [ContextSgdOutcome]>,
    game: &'a PreferenceGame,
    pi_star: &'a Policy,
    initial: &'a Policy,
    bp: &'a BoundParams,
    delta_rule: DeltaRule,
}

fn build_record(inputs: &RecordInputs<'_>) -> Result<StepRecord> {
    let mut contexts = Vec::with_capacity(inputs.game.contexts.len());
    for (c, ctx) in inputs.game.contexts.iter().enumerate() {
        let probs = &inputs.policy.contexts[c].probs;
        let star = &inputs.pi_star.contexts[c].probs;
        let mut rec = ContextStepRecord {
            context_id: ctx.context_id.clone(),
            kl_to_star: kl_divergence(star, probs)?,
            kl_to_tilde: None,
            delta_qnorm: None,
            winrate_vs_init: ctx.winrate(probs, &inputs.initial.contexts[c].probs),
            exploitability: exploitability(ctx, probs),
            loss: None,
            lemma_slack: None,
            flags: StepFlags::default(),
        };
        if let Some(detail) = inputs.details {
            let d = &detail.contexts[c];
            rec.flags.duplicate = d.duplicate;
            if let Some(v) = &d.verdict {
                rec.flags.tie = v.tie;
                rec.flags.noise_flipped = v.flipped_by_noise;
            }
            if let Some(imp) = &d.improved {
                rec.kl_to_tilde = Some(kl_divergence(star, &imp.dist)?);
            }
            if let Some(step) = &d.step {
                rec.delta_qnorm = Some(inputs.bp.q_norm_of(&step.delta));
                if inputs.delta_rule == DeltaRule::Adaptive {
                    let old = &inputs
                        .old
                        .expect("mirror step has a pre-step state")
                        .contexts[c]
                        .probs;
                    let tilde = &d.improved.as_ref().expect("step implies an opponent").dist;
                    rec.lemma_slack = Some(lemma_step_check(
                        star,
                        old,
                        probs,
                        tilde,
                        inputs.gamma,
                        inputs.bp,
                    )?);
                }
            }
        }
        if let Some(outcomes) = inputs.losses {
            rec.loss = outcomes[c].loss;
            rec.flags = outcomes[c].flags;
        }
        contexts.push(rec);
    }
    Ok(StepRecord::from_contexts(
        inputs.t,
        inputs.player + 1,
        contexts,
    ))
}

fn sgd_player_step(
    game: &PreferenceGame,
    own: &mut LogitPolicy,
    opponent: &Policy,
    pi_star: &Policy,
    cfg: &DynamicsConfig,
    pair_rng: &mut RngStream,
    judge_rng: &mut RngStream,
) -> Result<Vec<ContextSgdOutcome>> {
    let mut outcomes = Vec::with_capacity(game.contexts.len());
    for (c, ctx) in game.contexts.iter().enumerate() {
        let theta = &mut own.contexts[c].theta;
        let own_probs = softmax(theta);
        let opp_probs = &opponent.contexts[c].probs;
        let expert = Some(pi_star.contexts[c].probs.as_slice());

        let mut grad_sum = vec![0.0; theta.len()];
        let mut loss_sum = 0.0;
        let mut accepted = 0usize;
        let mut flags = StepFlags::default();
        for _ in 0..cfg.update.batch {
            match sample_pair(&own_probs, pair_rng) {
                PairSample::Duplicate => {}
                PairSample::Pair(y, y2) => {
                    let v = judge(cfg.judge, ctx, opp_probs, expert, y, y2, judge_rng)?;
                    flags.tie |= v.tie;
                    flags.noise_flipped |= v.flipped_by_noise;
                    let (loss, grad) = sgd_loss_gradient(
                        theta,
                        opp_probs,
                        v.preferred,
                        v.rejected,
                        cfg.update.kind,
                    )?;
                    loss_sum += loss;
                    for (g, d) in grad_sum.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    accepted += 1;
                }
            }
        }
        if accepted == 0 {
            flags.duplicate = true;
            outcomes.push(ContextSgdOutcome { loss: None, flags });
            continue;
        }
        let scale = cfg.update.sgd_lr / accepted as f64;
        for (t, g) in theta.iter_mut().zip(&grad_sum) {
            *t -= scale * g;
        }
        outcomes.push(ContextSgdOutcome {
            loss: Some(loss_sum / accepted as f64),
            flags,
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{random_game, rock_paper_scissors, GameKind};
    use crate::judge::JudgeKind;
    use crate::nash::{solve_game, DEFAULT_MAX_ITER};
    use crate::policy::{floor_simplex, l1_distance};

    fn zero_step(n: usize, gamma: f64) -> MirrorStep {
        MirrorStep {
            delta: vec![0.0; n],
            gamma,
            dual_point: vec![0.0; n],
            q_rewards: vec![0.0; n],
        }
    }

    #[test]
    fn mirror_map_is_elementwise_log() {
        let out = mirror_map(&[0.5, 0.5]).unwrap();
        assert!((out[0] + 2.0f64.ln()).abs() < 1e-15);
        assert!((out[1] + 2.0f64.ln()).abs() < 1e-15);
        let uniform = vec![0.25; 4];
        for v in mirror_map(&uniform).unwrap() {
            assert!((v + 4.0f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn mirror_map_rejects_zero_entries() {
        assert!(matches!(
            mirror_map(&[1.0, 0.0]),
            Err(CoreError::ZeroSupport { index: 1, .. })
        ));
    }

    #[test]
    fn zero_delta_is_the_identity_update() {
        let p = [0.3, 0.2, 0.5];
        let out = maio_update(&p, &zero_step(3, 0.5), 1e-9).unwrap();
        for (a, b) in p.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_delta_hand_values() {
        let step = adaptive_delta(&[0.5, 0.5], &[0.8, 0.2], 1.0).unwrap();
        assert!((step.delta[0] - 1.6f64.ln()).abs() < 1e-15);
        assert!((step.delta[1] - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn adaptive_delta_of_identical_policies_is_zero() {
        let step = adaptive_delta(&[0.25, 0.75], &[0.25, 0.75], 0.3).unwrap();
        assert!(step.max_abs_delta() == 0.0);
    }

    #[test]
    fn adaptive_delta_scales_linearly_in_gamma() {
        let a = adaptive_delta(&[0.4, 0.6], &[0.7, 0.3], 0.2).unwrap();
        let b = adaptive_delta(&[0.4, 0.6], &[0.7, 0.3], 0.4).unwrap();
        for (x, y) in a.delta.iter().zip(&b.delta) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn literal_reward_delta_ignores_gamma_and_flips_sign() {
        let lit1 = literal_reward_delta(&[0.4, 0.6], &[0.7, 0.3], 0.2).unwrap();
        let lit2 = literal_reward_delta(&[0.4, 0.6], &[0.7, 0.3], 0.9).unwrap();
        assert_eq!(lit1.delta, lit2.delta);
        let adaptive = adaptive_delta(&[0.4, 0.6], &[0.7, 0.3], 1.0).unwrap();
        for (l, a) in lit1.delta.iter().zip(&adaptive.delta) {
            assert!((l + a).abs() < 1e-15);
        }
    }

    #[test]
    fn half_step_is_the_normalized_geometric_mean() {
        // pi^(1/2) tilde^(1/2) with pi=(.5,.5), tilde=(.8,.2) has the exact
        // ratio sqrt(.4):sqrt(.1) = 2:1.
        let step = adaptive_delta(&[0.5, 0.5], &[0.8, 0.2], 0.5).unwrap();
        let out = maio_update(&[0.5, 0.5], &step, 1e-9).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_step_reaches_the_improved_opponent() {
        let tilde = [0.8, 0.15, 0.05];
        let step = adaptive_delta(&[1.0 / 3.0; 3], &tilde, 1.0).unwrap();
        let out = maio_update(&[1.0 / 3.0; 3], &step, 1e-9).unwrap();
        for (a, b) in out.iter().zip(&tilde) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_point_exponentiates_back_onto_the_simplex() {
        let step = adaptive_delta(&[0.2, 0.3, 0.5], &[0.6, 0.3, 0.1], 0.4).unwrap();
        let sum: f64 = step.dual_point.iter().map(|w| w.exp()).sum();
        let probs: Vec<f64> = step.dual_point.iter().map(|w| w.exp() / sum).collect();
        assert!(crate::policy::check_simplex(&probs).is_ok());
    }

    #[test]
    fn sgd_corrected_raises_the_preferred_response() {
        let verdict = JudgeVerdict {
            context_id: "c".into(),
            candidate_a: 0,
            candidate_b: 1,
            preferred: 0,
            rejected: 1,
            mode: JudgeKind::GroundTruthDeterministic,
            flipped_by_noise: false,
            tie: false,
        };
        let mode = UpdateMode::sgd(UpdateKind::SgdCorrected, 1.0, 1);
        let (theta, _) = lana_sgd_step(&[0.0, 0.0], &[0.5, 0.5], &verdict, &mode).unwrap();
        let probs = softmax(&theta);
        assert!(probs[0] > 0.5);
    }

    #[test]
    fn sgd_literal_raises_the_rejected_response() {
        // Literal behavior of the stated loss, not a quality claim.
        let verdict = JudgeVerdict {
            context_id: "c".into(),
            candidate_a: 0,
            candidate_b: 1,
            preferred: 0,
            rejected: 1,
            mode: JudgeKind::GroundTruthDeterministic,
            flipped_by_noise: false,
            tie: false,
        };
        let mode = UpdateMode::sgd(UpdateKind::SgdLiteral, 1.0, 1);
        let (theta, _) = lana_sgd_step(&[0.0, 0.0], &[0.5, 0.5], &verdict, &mode).unwrap();
        let probs = softmax(&theta);
        assert!(probs[1] > 0.5);
    }

    #[test]
    fn sgd_literal_loss_hand_value() {
        let (loss, _) =
            sgd_loss_gradient(&[0.0, 0.0], &[0.8, 0.2], 0, 1, UpdateKind::SgdLiteral).unwrap();
        let expected = 0.8f64.ln() - 0.5f64.ln();
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn sgd_gradients_match_finite_differences() {
        let mut rng = RngStream::new(12, stream::TEST);
        let h = 1e-5;
        for kind in [UpdateKind::SgdLiteral, UpdateKind::SgdCorrected] {
            for _ in 0..50 {
                let n = 2 + rng.next_index(6);
                let theta: Vec<f64> = (0..n).map(|_| 4.0 * rng.next_f64() - 2.0).collect();
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
                    let denom = grad[i].abs().max(1e-3);
                    assert!(
                        (grad[i] - fd).abs() / denom < 1e-6,
                        "{kind} grad[{i}]: analytic {} vs fd {fd}",
                        grad[i]
                    );
                }
            }
        }
    }

    fn expert_inputs<'a>(game: &'a PreferenceGame, expert: &'a Policy) -> ExactStepInputs<'a> {
        ExactStepInputs {
            game,
            judge: JudgeMode::default(),
            construction: OpponentConstruction::ExpertPolicy,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            delta_rule: DeltaRule::Adaptive,
            sequential: false,
            expert: Some(expert),
        }
    }

    #[test]
    fn point_mass_players_skip_on_duplicate_pairs() {
        let game = rock_paper_scissors();
        let state = TwoPlayerState {
            policies: [
                Policy::point_mass_for(&game, 0),
                Policy::point_mass_for(&game, 0),
            ],
        };
        let inputs = ExactStepInputs {
            game: &game,
            judge: JudgeMode::default(),
            construction: OpponentConstruction::default(),
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            delta_rule: DeltaRule::Adaptive,
            sequential: false,
            expert: None,
        };
        let mut rngs = RunRngs::for_seed(1);
        let (next, details) = lana_exact_step(&state, &inputs, 0.5, &mut rngs).unwrap();
        assert_eq!(next, state);
        for d in &details {
            assert!(d.contexts.iter().all(|c| c.duplicate));
        }
    }

    #[test]
    fn full_expert_step_lands_on_the_floored_equilibrium() {
        let game = rock_paper_scissors();
        let nash = solve_game(&game, 1e-9, DEFAULT_MAX_ITER).unwrap();
        let expert = nash.policy();
        let state = TwoPlayerState {
            policies: [Policy::uniform_for(&game), Policy::uniform_for(&game)],
        };
        let inputs = expert_inputs(&game, &expert);
        let mut rngs = RunRngs::for_seed(2);
        let (next, _) = lana_exact_step(&state, &inputs, 1.0, &mut rngs).unwrap();
        for i in 0..PLAYERS {
            let got = &next.policies[i].contexts[0].probs;
            let want = floor_if_needed(&expert.contexts[0].probs, DEFAULT_EPSILON_FLOOR);
            assert!(l1_distance(got, &want) < 1e-9);
        }
    }

    #[test]
    fn deterministic_judge_step_raises_the_winner() {
        // n=2 with P[0][1] = 1: whenever a pair is drawn, response 0 is
        // preferred, so pi(0) strictly increases by the geometric mixture
        // with the smoothed point mass (0.995, 0.005).
        let ctx = crate::game::ContextGame::new(
            "c",
            vec!["a".into(), "b".into()],
            vec![0.5, 1.0, 0.0, 0.5],
        )
        .unwrap();
        let game = PreferenceGame::single(ctx);
        let state = TwoPlayerState {
            policies: [Policy::uniform_for(&game), Policy::uniform_for(&game)],
        };
        let inputs = ExactStepInputs {
            game: &game,
            judge: JudgeMode::new(JudgeKind::GroundTruthDeterministic, 0.0).unwrap(),
            construction: OpponentConstruction::SmoothedPreferred { mu: 0.01 },
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            delta_rule: DeltaRule::Adaptive,
            sequential: false,
            expert: None,
        };
        let mut rngs = RunRngs::for_seed(3);
        let (next, details) = lana_exact_step(&state, &inputs, 0.5, &mut rngs).unwrap();
        for i in 0..PLAYERS {
            if details[i].contexts[0].duplicate {
                continue;
            }
            let p0 = next.policies[i].contexts[0].probs[0];
            // Hand value: normalize(sqrt(.5*.995), sqrt(.5*.005)).
            let expected =
                (0.5f64 * 0.995).sqrt() / ((0.5f64 * 0.995).sqrt() + (0.5f64 * 0.005).sqrt());
            assert!(p0 > 0.5);
            assert!((p0 - expected).abs() < 1e-12);
        }
    }

    fn rps_expert_config(seed: u64) -> DynamicsConfig {
        DynamicsConfig {
            construction: OpponentConstruction::ExpertPolicy,
            schedule: Schedule::Constant { gamma: 0.3 },
            steps: 50,
            init: PolicyInit::Random,
            ..DynamicsConfig::exact_mirror(seed)
        }
    }

    #[test]
    fn zero_steps_leaves_only_the_initial_records() {
        let game = rock_paper_scissors();
        let nash = solve_game(&game, 1e-9, DEFAULT_MAX_ITER).unwrap();
        let cfg = DynamicsConfig {
            steps: 0,
            ..DynamicsConfig::exact_mirror(7)
        };
        let traj = run_dynamics(&cfg, &game, &nash).unwrap();
        assert_eq!(traj.records.len(), PLAYERS);
        assert!(traj.records.iter().all(|r| r.t == 0));
    }

    #[test]
    fn expert_contraction_is_weakly_decreasing_on_rps() {
        let game = rock_paper_scissors();
        let nash = solve_game(&game, 1e-9, DEFAULT_MAX_ITER).unwrap();
        let traj = run_dynamics(&rps_expert_config(11), &game, &nash).unwrap();
        for player in 1..=PLAYERS {
            let kls: Vec<f64> = traj
                .records
                .iter()
                .filter(|r| r.player == player)
                .map(|r| r.kl_to_star_mean)
                .collect();
            assert_eq!(kls.len(), 51);
            for w in kls.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "KL increased: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn identical_config_and_seed_reproduce_the_trajectory() {
        let mut rng = RngStream::new(14, stream::GAME_GEN);
        let game = random_game(&mut rng, 4, GameKind::Uniform).unwrap();
        let nash = solve_game(&game, 1e-8, DEFAULT_MAX_ITER).unwrap();
        let cfg = DynamicsConfig {
            steps: 40,
            judge: JudgeMode::new(JudgeKind::GroundTruthSampled, 0.1).unwrap(),
            ..DynamicsConfig::exact_mirror(99)
        };
        let a = run_dynamics(&cfg, &game, &nash).unwrap();
        let b = run_dynamics(&cfg, &game, &nash).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.t, y.t);
            assert_eq!(x.player, y.player);
            assert_eq!(x.kl_to_star_mean.to_bits(), y.kl_to_star_mean.to_bits());
            assert_eq!(x.winrate_vs_init.to_bits(), y.winrate_vs_init.to_bits());
        }
    }

    #[test]
    fn every_emitted_policy_stays_on_the_simplex() {
        let mut rng = RngStream::new(15, stream::GAME_GEN);
        let game = random_game(&mut rng, 5, GameKind::Cyclic).unwrap();
        let nash = solve_game(&game, 1e-8, DEFAULT_MAX_ITER).unwrap();
        for kind in [
            UpdateKind::ExactMirror,
            UpdateKind::SgdCorrected,
            UpdateKind::SgdLiteral,
        ] {
            let cfg = DynamicsConfig {
                update: UpdateMode::sgd(kind, 0.1, 2),
                steps: 30,
                ..DynamicsConfig::exact_mirror(5)
            };
            let traj = run_dynamics(&cfg, &game, &nash).unwrap();
            // Records only expose diagnostics; rebuild final policies by
            // checking the recorded KLs are finite and nonnegative.
            for r in &traj.records {
                assert!(r.kl_to_star_mean.is_finite() && r.kl_to_star_mean >= 0.0);
            }
        }
    }

    #[test]
    fn early_stop_honors_the_convergence_tolerance() {
        let game = rock_paper_scissors();
        let nash = solve_game(&game, 1e-9, DEFAULT_MAX_ITER).unwrap();
        let cfg = DynamicsConfig {
            convergence_tol: 1e-3,
            steps: 500,
            ..rps_expert_config(13)
        };
        let traj = run_dynamics(&cfg, &game, &nash).unwrap();
        let max_t = traj.records.iter().map(|r| r.t).max().unwrap();
        assert!(
            max_t < 500,
            "expert contraction should stop early, ran {max_t}"
        );
    }

    #[test]
    fn gamma_zero_is_rejected_by_the_schedule() {
        let cfg = DynamicsConfig {
            schedule: Schedule::Constant { gamma: 0.0 },
            ..DynamicsConfig::exact_mirror(1)
        };
        assert!(cfg.validate().is_err());
    }
}
