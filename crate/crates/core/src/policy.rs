//! Policies over response sets: simplex vectors per context, their logit
//! parameterization, and the elementary divergence/entropy measures.
//!
//! Conventions used throughout the crate: natural logarithms everywhere, and
//! `0 * log 0 = 0` in both entropy and KL.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::game::PreferenceGame;
use crate::rng::RngStream;

/// Default support floor for evolving policies.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-9;
/// Tolerance on simplex sums.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// One probability vector per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub context_id: String,
    pub probs: Vec<f64>,
}

/// A policy assigns a distribution over responses to every context of a game.
/// Contexts are kept in the owning game's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub contexts: Vec<ContextPolicy>,
}

impl Policy {
    pub fn uniform_for(game: &PreferenceGame) -> Policy {
        Policy {
            contexts: game
                .contexts
                .iter()
                .map(|c| ContextPolicy {
                    context_id: c.context_id.clone(),
                    probs: vec![1.0 / c.n() as f64; c.n()],
                })
                .collect(),
        }
    }

    /// Point mass on the same response index in every context.
    pub fn point_mass_for(game: &PreferenceGame, index: usize) -> Policy {
        Policy {
            contexts: game
                .contexts
                .iter()
                .map(|c| {
                    let mut probs = vec![0.0; c.n()];
                    probs[index.min(c.n() - 1)] = 1.0;
                    ContextPolicy {
                        context_id: c.context_id.clone(),
                        probs,
                    }
                })
                .collect(),
        }
    }

    /// Independent draw from the flat Dirichlet on each context simplex.
    pub fn random_for(game: &PreferenceGame, rng: &mut RngStream) -> Policy {
        Policy {
            contexts: game
                .contexts
                .iter()
                .map(|c| ContextPolicy {
                    context_id: c.context_id.clone(),
                    probs: random_simplex(c.n(), rng),
                })
                .collect(),
        }
    }

    pub fn floored(&self, epsilon: f64) -> Policy {
        Policy {
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextPolicy {
                    context_id: c.context_id.clone(),
                    probs: floor_simplex(&c.probs, epsilon),
                })
                .collect(),
        }
    }

    /// Checks simplex validity for every context, and the support floor when
    /// one is expected.
    pub fn check(&self, epsilon_floor: Option<f64>) -> Result<()> {
        for ctx in &self.contexts {
            check_simplex(&ctx.probs)?;
            if let Some(eps) = epsilon_floor {
                for (i, &p) in ctx.probs.iter().enumerate() {
                    if p < eps * (1.0 - 1e-12) {
                        return Err(CoreError::ZeroSupport { index: i, value: p });
                    }
                }
            }
        }
        Ok(())
    }

    /// Errors unless `other` covers exactly the same contexts in the same
    /// order.
    pub fn check_aligned(&self, other: &Policy) -> Result<()> {
        if self.contexts.len() != other.contexts.len() {
            return Err(CoreError::ContextMismatch(format!(
                "{} contexts vs {}",
                self.contexts.len(),
                other.contexts.len()
            )));
        }
        for (a, b) in self.contexts.iter().zip(&other.contexts) {
            if a.context_id != b.context_id {
                return Err(CoreError::ContextMismatch(format!(
                    "{} vs {}",
                    a.context_id, b.context_id
                )));
            }
            if a.probs.len() != b.probs.len() {
                return Err(CoreError::LengthMismatch {
                    left: a.probs.len(),
                    right: b.probs.len(),
                });
            }
        }
        Ok(())
    }
}

/// Unnormalized score parameterization of a [`Policy`]; the induced policy is
/// the per-context softmax. This is the tabular stand-in for model parameters
/// in the stochastic loss modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLogits {
    pub context_id: String,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitPolicy {
    pub contexts: Vec<ContextLogits>,
}

impl LogitPolicy {
    pub fn zeros_for(game: &PreferenceGame) -> LogitPolicy {
        LogitPolicy {
            contexts: game
                .contexts
                .iter()
                .map(|c| ContextLogits {
                    context_id: c.context_id.clone(),
                    theta: vec![0.0; c.n()],
                })
                .collect(),
        }
    }

    pub fn policy(&self) -> Policy {
        Policy {
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextPolicy {
                    context_id: c.context_id.clone(),
                    probs: softmax(&c.theta),
                })
                .collect(),
        }
    }
}

/// Strong-convexity and norm parameters used by the convergence checks.
/// The mirror map is fixed to negative entropy, so the Bregman divergence is
/// KL; by Pinsker, KL is 1-strongly convex w.r.t. the l1 norm, which gives
/// the defaults `sigma = 1`, `p = 1`, `q = infinity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub sigma: f64,
    pub p_norm: f64,
    pub q_norm: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            sigma: 1.0,
            p_norm: 1.0,
            q_norm: f64::INFINITY,
        }
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(CoreError::param("sigma", "must be positive"));
        }
        let inv = |x: f64| if x.is_infinite() { 0.0 } else { 1.0 / x };
        if self.p_norm < 1.0 || self.q_norm < 1.0 {
            return Err(CoreError::param("p_norm/q_norm", "norms must be >= 1"));
        }
        if (inv(self.p_norm) + inv(self.q_norm) - 1.0).abs() > 1e-12 {
            return Err(CoreError::param("p_norm/q_norm", "1/p + 1/q must equal 1"));
        }
        Ok(())
    }

    /// `||v||_q` for this parameter set.
    pub fn q_norm_of(&self, v: &[f64]) -> f64 {
        if self.q_norm.is_infinite() {
            v.iter().fold(0.0, |m, x| m.max(x.abs()))
        } else {
            v.iter()
                .map(|x| x.abs().powf(self.q_norm))
                .sum::<f64>()
                .powf(1.0 / self.q_norm)
        }
    }
}

/// Flat Dirichlet draw: normalized standard exponentials.
pub fn random_simplex(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -rng.next_open01().ln()).collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

pub fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(CoreError::param("probs", "empty probability vector"));
    }
    let mut sum = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if !(x >= 0.0) {
            return Err(CoreError::param(
                "probs",
                format!("entry {i} is {x}, must be >= 0"),
            ));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
        return Err(CoreError::param(
            "probs",
            format!("sums to {sum}, must be 1 within {SIMPLEX_SUM_TOL:e}"),
        ));
    }
    Ok(())
}

/// Mixes with the uniform distribution just enough to guarantee
/// `min entry >= epsilon` while keeping the sum at exactly 1:
/// `p' = (1 - n*eps) * p + eps`.
pub fn floor_simplex(p: &[f64], epsilon: f64) -> Vec<f64> {
    if epsilon <= 0.0 {
        return p.to_vec();
    }
    let n = p.len() as f64;
    let scale = 1.0 - n * epsilon;
    p.iter().map(|&x| scale * x + epsilon).collect()
}

/// Floors only when some entry is below `epsilon`, so vectors that already
/// have enough support pass through bit-identically.
pub fn floor_if_needed(p: &[f64], epsilon: f64) -> Vec<f64> {
    if epsilon > 0.0 && p.iter().any(|&x| x < epsilon) {
        floor_simplex(p, epsilon)
    } else {
        p.to_vec()
    }
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out: Vec<f64> = theta.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

/// `KL(p || q) = sum_i p_i ln(p_i / q_i)` in nats.
///
/// Entries with `p_i = 0` contribute nothing; a zero in `q` under positive
/// `p` mass is an infinite divergence and is reported as an error rather
/// than an infinity.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(CoreError::InfiniteDivergence { index: i, p: pi });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Shannon entropy `-sum_i p_i ln p_i` in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn kl_of_identical_vectors_is_zero() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        // 0.5*ln(2) + 0.5*ln(2/3)
        let expected = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_single_support_case() {
        let got = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((got - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_infinite_divergence_is_an_error() {
        let err = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(
            err,
            CoreError::InfiniteDivergence { index: 1, .. }
        ));
    }

    #[test]
    fn entropy_point_mass_and_uniform() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4.0f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.5]) - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = RngStream::new(9, stream::TEST);
        for _ in 0..100 {
            let n = 2 + rng.next_index(8);
            let theta: Vec<f64> = (0..n).map(|_| 8.0 * rng.next_f64() - 4.0).collect();
            let c = 20.0 * rng.next_f64() - 10.0;
            let shifted: Vec<f64> = theta.iter().map(|&x| x + c).collect();
            let a = softmax(&theta);
            let b = softmax(&shifted);
            let max_diff = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_diff <= 1e-12, "shift changed softmax by {max_diff}");
        }
    }

    #[test]
    fn floor_guarantees_minimum_and_sum() {
        let p = vec![1.0, 0.0, 0.0];
        let eps = 1e-9;
        let floored = floor_simplex(&p, eps);
        assert!(floored.iter().all(|&x| x >= eps));
        assert!((floored.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn floor_if_needed_leaves_supported_vectors_alone() {
        let p = vec![0.4, 0.6];
        assert_eq!(floor_if_needed(&p, 1e-9), p);
    }

    #[test]
    fn pinsker_inequality_justifies_default_bound_params() {
        let mut rng = RngStream::new(2024, stream::TEST);
        for _ in 0..1000 {
            let n = 2 + rng.next_index(10);
            let p = random_simplex(n, &mut rng);
            let q = floor_simplex(&random_simplex(n, &mut rng), 1e-12);
            let kl = kl_divergence(&p, &q).unwrap();
            let l1 = l1_distance(&p, &q);
            assert!(
                kl + 1e-12 >= 0.5 * l1 * l1,
                "Pinsker violated: kl={kl}, l1={l1}"
            );
        }
    }

    #[test]
    fn bound_params_defaults_validate() {
        assert!(BoundParams::default().validate().is_ok());
        let bad = BoundParams {
            sigma: 1.0,
            p_norm: 2.0,
            q_norm: 3.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn q_norm_of_handles_infinity_and_finite_q() {
        let bp = BoundParams::default();
        assert_eq!(bp.q_norm_of(&[-3.0, 1.0, 2.0]), 3.0);
        let bp2 = BoundParams {
            sigma: 1.0,
            p_norm: 2.0,
            q_norm: 2.0,
        };
        assert!((bp2.q_norm_of(&[3.0, 4.0]) - 5.0).abs() < 1e-12);
    }
}
