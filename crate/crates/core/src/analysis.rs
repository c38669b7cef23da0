//! Trajectory diagnostics: per-step records, the per-step inequality check,
//! the fixed-horizon bound check, and run summaries.
//!
//! The per-step inequality bounds the KL to any fixed comparison policy
//! after one adaptive mirror step:
//!
//! `KL(p, pi_{t+1}) <= (1-g) KL(p, pi_t) + g KL(p, pi_tilde) + (2/sigma) ||delta||_q^2`
//!
//! Iterating it with a constant step size gives the horizon bound checked by
//! [`horizon_bound_check`]: the final KL is at most the worst improved-
//! opponent KL, plus an exponentially contracted initial KL, plus a
//! step-norm term.

use serde::Serialize;

use crate::dynamics::{DeltaRule, DynamicsConfig, UpdateKind};
use crate::error::{CoreError, Result};
use crate::policy::{kl_divergence, BoundParams};

/// Slack below this is a violation; the band absorbs floating-point
/// rounding only.
pub const SLACK_TOL: f64 = -1e-9;

/// Event flags for one context at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepFlags {
    pub duplicate: bool,
    pub tie: bool,
    pub noise_flipped: bool,
}

impl StepFlags {
    /// Compact `;`-joined rendering for the CSV column; empty when no flag
    /// is set.
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.duplicate {
            parts.push("duplicate");
        }
        if self.tie {
            parts.push("tie");
        }
        if self.noise_flipped {
            parts.push("noise");
        }
        parts.join(";")
    }
}

/// Diagnostics for one context of one player at one step.
#[derive(Debug, Clone, Serialize)]
pub struct ContextStepRecord {
    pub context_id: String,
    pub kl_to_star: f64,
    pub kl_to_tilde: Option<f64>,
    pub delta_qnorm: Option<f64>,
    pub winrate_vs_init: f64,
    pub exploitability: f64,
    pub loss: Option<f64>,
    pub lemma_slack: Option<f64>,
    pub flags: StepFlags,
}

/// Diagnostics for one player at one step, with per-context detail and the
/// aggregates used by the convergence checks: KLs are averaged over
/// contexts, the step norm takes the worst context, and the slack takes the
/// tightest context.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// 1-based player index.
    pub player: usize,
    pub contexts: Vec<ContextStepRecord>,
    pub kl_to_star_mean: f64,
    pub kl_to_tilde_mean: Option<f64>,
    pub delta_qnorm_max: Option<f64>,
    pub winrate_vs_init: f64,
    pub exploitability_mean: f64,
    pub loss_mean: Option<f64>,
    pub lemma_slack_min: Option<f64>,
}

impl StepRecord {
    pub fn from_contexts(t: usize, player: usize, contexts: Vec<ContextStepRecord>) -> StepRecord {
        let n = contexts.len() as f64;
        let mean = |f: &dyn Fn(&ContextStepRecord) -> f64| contexts.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&ContextStepRecord) -> Option<f64>| {
            let vals: Vec<f64> = contexts.iter().filter_map(f).collect();
            if vals.len() == contexts.len() {
                Some(vals.iter().sum::<f64>() / n)
            } else {
                None
            }
        };
        let kl_to_star_mean = mean(&|c| c.kl_to_star);
        let winrate_vs_init = mean(&|c| c.winrate_vs_init);
        let exploitability_mean = mean(&|c| c.exploitability);
        let kl_to_tilde_mean = mean_opt(&|c| c.kl_to_tilde);
        let loss_mean = mean_opt(&|c| c.loss);
        let delta_qnorm_max = contexts
            .iter()
            .filter_map(|c| c.delta_qnorm)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        let lemma_slack_min = contexts
            .iter()
            .filter_map(|c| c.lemma_slack)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        StepRecord {
            t,
            player,
            contexts,
            kl_to_star_mean,
            kl_to_tilde_mean,
            delta_qnorm_max,
            winrate_vs_init,
            exploitability_mean,
            loss_mean,
            lemma_slack_min,
        }
    }
}

/// A full run: the configuration that produced it, the ordered records, and
/// the summary once computed.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub config: DynamicsConfig,
    pub records: Vec<StepRecord>,
    pub summary: Option<TrajectorySummary>,
}

impl Trajectory {
    pub fn records_for(&self, player: usize) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.player == player)
    }

    /// Largest step index present.
    pub fn horizon(&self) -> usize {
        self.records.iter().map(|r| r.t).max().unwrap_or(0)
    }

    /// Records must be weakly grouped by step and strictly increasing in `t`
    /// per player.
    pub fn check_ordering(&self) -> Result<()> {
        for player in 1..=2 {
            let ts: Vec<usize> = self.records_for(player).map(|r| r.t).collect();
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CoreError::param(
                    "records",
                    format!("player {player} records are not strictly ordered by t"),
                ));
            }
        }
        Ok(())
    }
}

/// One side-by-side evaluation of the fixed-horizon bound for one player.
#[derive(Debug, Clone, Serialize)]
pub struct BoundComponents {
    pub player: usize,
    /// `KL(pi*, pi_T)`.
    pub lhs_final_kl: f64,
    /// Step index of the worst improved opponent, when any step produced
    /// one.
    pub c: Option<usize>,
    /// `KL(pi*, pi_tilde_c)`.
    pub kl_tilde_at_c: f64,
    /// `exp(-gamma T) * KL(pi*, pi_0)`.
    pub contraction_term: f64,
    /// `(2 / (gamma sigma)) * max_t ||delta_t||_q^2`.
    pub norm_term: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonBoundReport {
    pub gamma: f64,
    pub players: Vec<BoundComponents>,
    pub holds: bool,
}

/// Per-player summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct PlayerSummary {
    pub player: usize,
    pub final_kl_to_star: f64,
    pub final_winrate_vs_init: f64,
    pub final_exploitability: f64,
    pub initial_exploitability: f64,
    /// Step index of the worst improved opponent (argmax of the logged
    /// KL to pi_tilde).
    pub argmax_kl_tilde_t: Option<usize>,
    /// Fraction of consecutive steps with weakly decreasing KL to pi*.
    pub kl_decrease_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub steps_executed: usize,
    pub players: Vec<PlayerSummary>,
    pub min_lemma_slack: Option<f64>,
    pub mean_lemma_slack: Option<f64>,
    pub max_lemma_slack: Option<f64>,
    pub horizon_bound: Option<HorizonBoundReport>,
}

/// Slack of the per-step inequality: `rhs - lhs` with
/// `lhs = KL(pi_star, pi_t1)` and
/// `rhs = (1-gamma) KL(pi_star, pi_t) + gamma KL(pi_star, pi_tilde)
///        + (2/sigma) ||delta||_q^2`,
/// where `delta = gamma (log pi_tilde - log pi_t)` is recomputed from its
/// definition. Nonnegative slack means the inequality held.
pub fn lemma_step_check(
    pi_star: &[f64],
    pi_t: &[f64],
    pi_t1: &[f64],
    pi_tilde: &[f64],
    gamma: f64,
    bp: &BoundParams,
) -> Result<f64> {
    bp.validate()?;
    if pi_t.len() != pi_tilde.len() || pi_t.len() != pi_t1.len() || pi_t.len() != pi_star.len() {
        return Err(CoreError::LengthMismatch {
            left: pi_t.len(),
            right: pi_tilde.len(),
        });
    }
    let lhs = kl_divergence(pi_star, pi_t1)?;
    let kl_t = kl_divergence(pi_star, pi_t)?;
    let kl_tilde = kl_divergence(pi_star, pi_tilde)?;
    let mut delta = Vec::with_capacity(pi_t.len());
    for (i, (&pt, &tl)) in pi_t.iter().zip(pi_tilde).enumerate() {
        if pt <= 0.0 {
            return Err(CoreError::ZeroSupport {
                index: i,
                value: pt,
            });
        }
        if tl <= 0.0 {
            return Err(CoreError::ZeroSupport {
                index: i,
                value: tl,
            });
        }
        delta.push(gamma * (tl.ln() - pt.ln()));
    }
    let norm = bp.q_norm_of(&delta);
    let rhs = (1.0 - gamma) * kl_t + gamma * kl_tilde + (2.0 / bp.sigma) * norm * norm;
    Ok(rhs - lhs)
}

/// Evaluates the fixed-horizon bound on a finished constant-step trajectory:
/// `KL(pi*, pi_T) <= KL(pi*, pi_tilde_c) + exp(-gamma T) KL(pi*, pi_0)
///                   + (2/(gamma sigma)) max_t ||delta_t||_q^2`
/// with `c` the argmax over logged steps of `KL(pi*, pi_tilde_t)`.
pub fn horizon_bound_check(traj: &Trajectory, bp: &BoundParams) -> Result<HorizonBoundReport> {
    bp.validate()?;
    let gamma =
        traj.config.schedule.constant_gamma().ok_or_else(|| {
            CoreError::UnsupportedSchedule(traj.config.schedule.kind_name().into())
        })?;
    if traj.config.update.kind != UpdateKind::ExactMirror
        || traj.config.delta_rule != DeltaRule::Adaptive
    {
        return Err(CoreError::param(
            "trajectory",
            "horizon bound needs adaptive exact-mirror records",
        ));
    }
    if traj.records.is_empty() {
        return Err(CoreError::EmptyTrajectory);
    }

    let mut players = Vec::new();
    for player in 1..=2 {
        let records: Vec<&StepRecord> = traj.records_for(player).collect();
        if records.is_empty() {
            continue;
        }
        let kl0 = records[0].kl_to_star_mean;
        let last = records[records.len() - 1];
        let lhs_final_kl = last.kl_to_star_mean;
        let horizon = last.t as f64;

        let mut c = None;
        let mut kl_tilde_at_c = 0.0;
        for r in &records {
            if let Some(v) = r.kl_to_tilde_mean {
                if c.is_none() || v > kl_tilde_at_c {
                    c = Some(r.t);
                    kl_tilde_at_c = v;
                }
            }
        }
        let norm_max = records
            .iter()
            .filter_map(|r| r.delta_qnorm_max)
            .fold(0.0f64, f64::max);

        let contraction_term = (-gamma * horizon).exp() * kl0;
        let norm_term = 2.0 / (gamma * bp.sigma) * norm_max * norm_max;
        let rhs = kl_tilde_at_c + contraction_term + norm_term;
        let holds = lhs_final_kl <= rhs + 1e-12;
        players.push(BoundComponents {
            player,
            lhs_final_kl,
            c,
            kl_tilde_at_c,
            contraction_term,
            norm_term,
            rhs,
            holds,
        });
    }
    let holds = !players.is_empty() && players.iter().all(|p| p.holds);
    Ok(HorizonBoundReport {
        gamma,
        players,
        holds,
    })
}

/// Fills the summary for a finished trajectory.
pub fn summarize(traj: &Trajectory) -> Result<TrajectorySummary> {
    if traj.records.is_empty() {
        return Err(CoreError::EmptyTrajectory);
    }
    traj.check_ordering()?;

    let mut players = Vec::new();
    for player in 1..=2 {
        let records: Vec<&StepRecord> = traj.records_for(player).collect();
        if records.is_empty() {
            continue;
        }
        let last = records[records.len() - 1];
        let mut c = None;
        let mut best = f64::NEG_INFINITY;
        for r in &records {
            if let Some(v) = r.kl_to_tilde_mean {
                if v > best {
                    best = v;
                    c = Some(r.t);
                }
            }
        }
        let decreases = records
            .windows(2)
            .filter(|w| w[1].kl_to_star_mean <= w[0].kl_to_star_mean + 1e-15)
            .count();
        let kl_decrease_fraction = if records.len() > 1 {
            decreases as f64 / (records.len() - 1) as f64
        } else {
            1.0
        };
        players.push(PlayerSummary {
            player,
            final_kl_to_star: last.kl_to_star_mean,
            final_winrate_vs_init: last.winrate_vs_init,
            final_exploitability: last.exploitability_mean,
            initial_exploitability: records[0].exploitability_mean,
            argmax_kl_tilde_t: c,
            kl_decrease_fraction,
        });
    }

    let slacks: Vec<f64> = traj
        .records
        .iter()
        .filter_map(|r| r.lemma_slack_min)
        .collect();
    let (min_lemma_slack, mean_lemma_slack, max_lemma_slack) = if slacks.is_empty() {
        (None, None, None)
    } else {
        (
            Some(slacks.iter().cloned().fold(f64::INFINITY, f64::min)),
            Some(slacks.iter().sum::<f64>() / slacks.len() as f64),
            Some(slacks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        )
    };

    let horizon_bound = if traj.config.update.kind == UpdateKind::ExactMirror
        && traj.config.delta_rule == DeltaRule::Adaptive
        && traj.config.schedule.constant_gamma().is_some()
    {
        Some(horizon_bound_check(traj, &BoundParams::default())?)
    } else {
        None
    };

    Ok(TrajectorySummary {
        steps_executed: traj.horizon(),
        players,
        min_lemma_slack,
        mean_lemma_slack,
        max_lemma_slack,
        horizon_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{adaptive_delta, maio_update};
    use crate::policy::{floor_simplex, random_simplex};
    use crate::rng::{stream, RngStream};

    fn slack_for(pi_star: &[f64], pi_t: &[f64], pi_tilde: &[f64], gamma: f64) -> f64 {
        let step = adaptive_delta(pi_t, pi_tilde, gamma).unwrap();
        let pi_t1 = maio_update(pi_t, &step, 0.0).unwrap();
        lemma_step_check(
            pi_star,
            pi_t,
            &pi_t1,
            pi_tilde,
            gamma,
            &BoundParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn identical_policies_have_zero_slack() {
        let p = [0.2, 0.5, 0.3];
        let slack = slack_for(&[0.1, 0.6, 0.3], &p, &p, 0.4);
        assert!(slack.abs() < 1e-12);
    }

    #[test]
    fn random_steps_have_nonnegative_slack() {
        let mut rng = RngStream::new(71, stream::TEST);
        for _ in 0..1000 {
            let n = 2 + rng.next_index(8);
            let pi_star = random_simplex(n, &mut rng);
            let pi_t = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
            let pi_tilde = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
            let gamma = 0.3;
            let slack = slack_for(&pi_star, &pi_t, &pi_tilde, gamma);
            assert!(slack >= SLACK_TOL, "slack {slack} below tolerance");
        }
    }

    #[test]
    fn full_step_slack_is_the_norm_term_plus_mixture_gap() {
        // At gamma = 1 the update lands exactly on pi_tilde, so
        // lhs = KL(pi*, pi_tilde) and rhs exceeds it by the norm term.
        let mut rng = RngStream::new(72, stream::TEST);
        for _ in 0..100 {
            let n = 2 + rng.next_index(5);
            let pi_star = random_simplex(n, &mut rng);
            let pi_t = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
            let pi_tilde = floor_simplex(&random_simplex(n, &mut rng), 1e-9);
            let step = adaptive_delta(&pi_t, &pi_tilde, 1.0).unwrap();
            let pi_t1 = maio_update(&pi_t, &step, 0.0).unwrap();
            let lhs = kl_divergence(&pi_star, &pi_t1).unwrap();
            let kl_tilde = kl_divergence(&pi_star, &pi_tilde).unwrap();
            assert!((lhs - kl_tilde).abs() < 1e-9);
            let slack = lemma_step_check(
                &pi_star,
                &pi_t,
                &pi_t1,
                &pi_tilde,
                1.0,
                &BoundParams::default(),
            )
            .unwrap();
            assert!(slack >= 0.0);
        }
    }

    #[test]
    fn step_record_aggregates_take_worst_context() {
        let contexts = vec![
            ContextStepRecord {
                context_id: "a".into(),
                kl_to_star: 1.0,
                kl_to_tilde: Some(2.0),
                delta_qnorm: Some(0.5),
                winrate_vs_init: 0.6,
                exploitability: 0.1,
                loss: None,
                lemma_slack: Some(0.3),
                flags: StepFlags::default(),
            },
            ContextStepRecord {
                context_id: "b".into(),
                kl_to_star: 3.0,
                kl_to_tilde: Some(4.0),
                delta_qnorm: Some(1.5),
                winrate_vs_init: 0.8,
                exploitability: 0.3,
                loss: None,
                lemma_slack: Some(-0.1),
                flags: StepFlags::default(),
            },
        ];
        let rec = StepRecord::from_contexts(3, 1, contexts);
        assert_eq!(rec.kl_to_star_mean, 2.0);
        assert_eq!(rec.kl_to_tilde_mean, Some(3.0));
        assert_eq!(rec.delta_qnorm_max, Some(1.5));
        assert_eq!(rec.lemma_slack_min, Some(-0.1));
        assert_eq!(rec.winrate_vs_init, 0.7);
        assert_eq!(rec.loss_mean, None);
    }

    #[test]
    fn flags_render_compactly() {
        let mut flags = StepFlags::default();
        assert_eq!(flags.render(), "");
        flags.duplicate = true;
        flags.noise_flipped = true;
        assert_eq!(flags.render(), "duplicate;noise");
    }
}
