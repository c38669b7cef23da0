//! Preference verdicts between sampled responses and construction of the
//! realized improved opponent.
//!
//! The self-judge mode models an LLM scoring two of its opponent's candidate
//! answers: the tabular analogue of reading next-token scores is ordering the
//! two responses by the opponent policy's own probabilities. No learned
//! preference model is involved anywhere.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::game::ContextGame;
use crate::policy::{floor_if_needed, floor_simplex};
use crate::rng::RngStream;

/// How verdicts are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    /// Prefer `y` iff `P[y][y'] > 1/2`; exact ties prefer the first
    /// candidate and set the tie flag.
    GroundTruthDeterministic,
    /// Prefer `y` with probability `P[y][y']`.
    GroundTruthSampled,
    /// Prefer the response the opponent policy itself assigns more
    /// probability to.
    SelfJudge,
    /// Same ordering rule, but scored by the equilibrium policy.
    Expert,
}

/// Judge kind plus the symmetric verdict-flip noise rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeMode {
    pub kind: JudgeKind,
    #[serde(default)]
    pub noise_epsilon: f64,
}

impl Default for JudgeMode {
    fn default() -> Self {
        JudgeMode {
            kind: JudgeKind::GroundTruthSampled,
            noise_epsilon: 0.0,
        }
    }
}

impl JudgeMode {
    pub fn new(kind: JudgeKind, noise_epsilon: f64) -> Result<Self> {
        let mode = JudgeMode {
            kind,
            noise_epsilon,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.noise_epsilon) {
            return Err(CoreError::param(
                "noise_epsilon",
                format!("{} is outside [0, 1/2)", self.noise_epsilon),
            ));
        }
        Ok(())
    }
}

/// Outcome of one pairwise comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JudgeVerdict {
    pub context_id: String,
    pub candidate_a: usize,
    pub candidate_b: usize,
    pub preferred: usize,
    pub rejected: usize,
    pub mode: JudgeKind,
    pub flipped_by_noise: bool,
    pub tie: bool,
}

/// Result of drawing a response pair from a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSample {
    Pair(usize, usize),
    /// All redraws produced identical responses; the caller skips this
    /// update and counts the skip.
    Duplicate,
}

/// Redraw budget after the first identical pair.
pub const MAX_PAIR_REDRAWS: usize = 16;

/// Draws two independent responses from `probs`, redrawing identical pairs
/// up to [`MAX_PAIR_REDRAWS`] times.
pub fn sample_pair(probs: &[f64], rng: &mut RngStream) -> PairSample {
    for _ in 0..=MAX_PAIR_REDRAWS {
        let y = rng.sample_index(probs);
        let y2 = rng.sample_index(probs);
        if y != y2 {
            return PairSample::Pair(y, y2);
        }
    }
    PairSample::Duplicate
}

/// Orders two candidates by score. Returns `(prefer_first, tie)`; ties
/// deterministically prefer the first candidate. Only the order of the
/// scores matters, so any strictly increasing rescoring leaves verdicts
/// unchanged.
pub fn prefer_first_by_scores(score_first: f64, score_second: f64) -> (bool, bool) {
    if score_first == score_second {
        (true, true)
    } else {
        (score_first > score_second, false)
    }
}

/// Produces a verdict between responses `y` and `y2` of one context.
///
/// `opponent` supplies the self-judge scores; `expert` supplies the
/// equilibrium scores and is only consulted in expert mode. One noise draw
/// is always consumed so changing `noise_epsilon` never desynchronizes the
/// judge stream.
pub fn judge(
    mode: JudgeMode,
    ctx: &ContextGame,
    opponent: &[f64],
    expert: Option<&[f64]>,
    y: usize,
    y2: usize,
    rng: &mut RngStream,
) -> Result<JudgeVerdict> {
    mode.validate()?;
    if y == y2 {
        return Err(CoreError::IdenticalCandidates(y));
    }

    let (prefer_first, tie) = match mode.kind {
        JudgeKind::GroundTruthDeterministic => {
            let p = ctx.p(y, y2);
            prefer_first_by_scores(p, 1.0 - p)
        }
        JudgeKind::GroundTruthSampled => (rng.next_f64() < ctx.p(y, y2), false),
        JudgeKind::SelfJudge => prefer_first_by_scores(opponent[y], opponent[y2]),
        JudgeKind::Expert => {
            let scores = expert.ok_or(CoreError::MissingExpert)?;
            prefer_first_by_scores(scores[y], scores[y2])
        }
    };

    let noise = rng.next_f64();
    let flipped_by_noise = noise < mode.noise_epsilon;
    let prefer_first = prefer_first != flipped_by_noise;

    let (preferred, rejected) = if prefer_first { (y, y2) } else { (y2, y) };
    Ok(JudgeVerdict {
        context_id: ctx.context_id.clone(),
        candidate_a: y,
        candidate_b: y2,
        preferred,
        rejected,
        mode: mode.kind,
        flipped_by_noise,
        tie,
    })
}

/// How the improved opponent distribution is realized each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "kebab-case")]
pub enum OpponentConstruction {
    /// `(1 - mu) * pointmass(preferred) + mu * uniform`.
    SmoothedPreferred {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Point mass on the pure best response to the updating player's own
    /// policy, floored.
    BestResponse,
    /// The equilibrium policy, floored.
    ExpertPolicy,
}

pub fn default_mu() -> f64 {
    0.01
}

impl Default for OpponentConstruction {
    fn default() -> Self {
        OpponentConstruction::SmoothedPreferred { mu: default_mu() }
    }
}

impl OpponentConstruction {
    pub fn validate(&self) -> Result<()> {
        if let OpponentConstruction::SmoothedPreferred { mu } = self {
            if !(0.0..=1.0).contains(mu) {
                return Err(CoreError::param("mu", format!("{mu} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The realized improved-opponent distribution for one context at one step.
/// Always has full support: smoothing provides it when `mu > 0`, the floor
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedOpponent {
    pub dist: Vec<f64>,
    pub construction: OpponentConstruction,
}

/// Smoothed point mass on the judged-preferred response.
pub fn smoothed_preferred(
    verdict: &JudgeVerdict,
    n: usize,
    mu: f64,
    epsilon_floor: f64,
) -> ImprovedOpponent {
    let mut dist = vec![mu / n as f64; n];
    dist[verdict.preferred] += 1.0 - mu;
    ImprovedOpponent {
        dist: floor_if_needed(&dist, epsilon_floor),
        construction: OpponentConstruction::SmoothedPreferred { mu },
    }
}

/// Floored point mass on `argmax_a sum_b own[b] * P[a][b]`; ties break to
/// the lowest index.
pub fn best_response(ctx: &ContextGame, own: &[f64], epsilon_floor: f64) -> ImprovedOpponent {
    let n = ctx.n();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for a in 0..n {
        let score: f64 = (0..n).map(|b| own[b] * ctx.p(a, b)).sum();
        if score > best_score {
            best_score = score;
            best = a;
        }
    }
    let mut dist = vec![0.0; n];
    dist[best] = 1.0;
    ImprovedOpponent {
        dist: floor_simplex(&dist, epsilon_floor.max(f64::MIN_POSITIVE)),
        construction: OpponentConstruction::BestResponse,
    }
}

/// The equilibrium policy as the improved opponent.
pub fn expert_opponent(pi_star: &[f64], epsilon_floor: f64) -> ImprovedOpponent {
    ImprovedOpponent {
        dist: floor_if_needed(pi_star, epsilon_floor.max(f64::MIN_POSITIVE)),
        construction: OpponentConstruction::ExpertPolicy,
    }
}
