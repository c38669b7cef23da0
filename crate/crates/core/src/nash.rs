//! Symmetric Nash equilibria of preference games, with exploitability
//! certificates.
//!
//! Each context is a symmetric zero-sum game on the antisymmetric advantage
//! matrix `A = P - 1/2`, so a symmetric equilibrium with game value 0 always
//! exists. The solver runs multiplicative weights against itself with uniform
//! iterate averaging; because plain averaging closes the gap only like
//! `1/sqrt(T)`, the average is additionally used to guess the equilibrium
//! support, which is then solved exactly through the indifference system.
//! Whatever candidate first certifies `exploitability <= tol` is returned.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::game::{ContextGame, PreferenceGame};
use crate::policy::{softmax, ContextPolicy, Policy};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Largest `n` accepted by [`brute_force_nash`].
pub const BRUTE_FORCE_MAX_N: usize = 4;
const BRUTE_FORCE_TOL: f64 = 1e-9;

const CHECK_EVERY: usize = 64;
/// Relative thresholds used to cut the averaged iterate into candidate
/// supports before polishing.
const SUPPORT_THRESHOLDS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// When the iteration reaches this count without certifying, every support
/// subset is tried exactly (small `n` only). Plain averaging closes the gap
/// like `1/sqrt(t)`, and a strategy that collapsed early can hide from the
/// averaged iterate for a very long time, so guessing supports from the
/// average alone is not enough.
const ENUMERATION_FALLBACK_AT: usize = 4096;
const ENUMERATION_MAX_N: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    AveragedMultiplicativeWeights,
    BruteForce,
}

/// Equilibrium of one context plus its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSolution {
    pub context_id: String,
    pub pi_star: Vec<f64>,
    pub exploitability: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Per-context equilibria assembled over a whole game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashSolution {
    pub contexts: Vec<ContextSolution>,
}

impl NashSolution {
    /// The equilibrium as a policy over the game's contexts.
    pub fn policy(&self) -> Policy {
        Policy {
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextPolicy {
                    context_id: c.context_id.clone(),
                    probs: c.pi_star.clone(),
                })
                .collect(),
        }
    }

    pub fn max_exploitability(&self) -> f64 {
        self.contexts
            .iter()
            .fold(0.0, |m, c| m.max(c.exploitability))
    }
}

/// Best pure-response gain against `p`: `max_a sum_b p[b] * (P[a][b] - 1/2)`,
/// clamped at 0. Zero certifies a symmetric equilibrium.
pub fn exploitability(ctx: &ContextGame, p: &[f64]) -> f64 {
    ctx.advantage_vs(p).into_iter().fold(0.0f64, f64::max)
}

/// Solves one context by self-play multiplicative weights with uniform
/// averaging, polishing candidate supports along the way.
pub fn solve_nash(ctx: &ContextGame, tol: f64, max_iter: usize) -> Result<ContextSolution> {
    if !(tol > 0.0) {
        return Err(CoreError::param("tol", "must be positive"));
    }
    let n = ctx.n();
    if n < 2 {
        return Err(CoreError::ResponseCount(n));
    }

    let solution = |p: Vec<f64>, e: f64, iters: usize| ContextSolution {
        context_id: ctx.context_id.clone(),
        pi_star: p,
        exploitability: e,
        iterations: iters,
        method: SolveMethod::AveragedMultiplicativeWeights,
    };

    let uniform = vec![1.0 / n as f64; n];
    let e0 = exploitability(ctx, &uniform);
    if e0 <= tol {
        return Ok(solution(uniform, e0, 0));
    }
    let mut best = (uniform.clone(), e0);

    // Current iterate kept in log space; the averaged iterate in probability
    // space.
    let mut log_x = vec![0.0; n];
    let mut x = uniform;
    let mut avg_sum = vec![0.0; n];

    for t in 1..=max_iter {
        let payoff = ctx.advantage_vs(&x);
        let eta = 1.0 / (t as f64).sqrt();
        for i in 0..n {
            log_x[i] += eta * payoff[i];
        }
        x = softmax(&log_x);
        for i in 0..n {
            avg_sum[i] += x[i];
        }

        if t % CHECK_EVERY == 0 || t == max_iter {
            let avg: Vec<f64> = avg_sum.iter().map(|s| s / t as f64).collect();
            for cand in [&avg, &x] {
                let e = exploitability(ctx, cand);
                if e <= tol {
                    return Ok(solution(cand.clone(), e, t));
                }
                if e < best.1 {
                    best = (cand.clone(), e);
                }
            }
            for cand in polish_candidates(ctx, &avg) {
                let e = exploitability(ctx, &cand);
                if e <= tol {
                    return Ok(solution(cand, e, t));
                }
                if e < best.1 {
                    best = (cand, e);
                }
            }
        }

        if (t == ENUMERATION_FALLBACK_AT || t == max_iter) && n <= ENUMERATION_MAX_N {
            if let Some(p) = enumerate_equilibrium(ctx, tol) {
                let e = exploitability(ctx, &p);
                return Ok(ContextSolution {
                    context_id: ctx.context_id.clone(),
                    pi_star: p,
                    exploitability: e,
                    iterations: t,
                    method: SolveMethod::BruteForce,
                });
            }
        }
    }

    Err(CoreError::Convergence {
        iterations: max_iter,
        exploitability: best.1,
        tol,
        best: best.0,
    })
}

/// Solves every context of a game independently.
pub fn solve_game(game: &PreferenceGame, tol: f64, max_iter: usize) -> Result<NashSolution> {
    let contexts = game
        .contexts
        .iter()
        .map(|ctx| solve_nash(ctx, tol, max_iter))
        .collect::<Result<Vec<_>>>()?;
    Ok(NashSolution { contexts })
}

/// Independent oracle for small games: enumerates support subsets, solves the
/// indifference system on each, and returns the first support whose solution
/// is feasible with exploitability 0 within 1e-9. Indifferent games
/// tie-break to the uniform policy.
pub fn brute_force_nash(ctx: &ContextGame) -> Result<ContextSolution> {
    let n = ctx.n();
    if n < 2 {
        return Err(CoreError::ResponseCount(n));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(CoreError::SupportEnumeration {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }

    let solution = |p: Vec<f64>, e: f64, tried: usize| ContextSolution {
        context_id: ctx.context_id.clone(),
        pi_star: p,
        exploitability: e,
        iterations: tried,
        method: SolveMethod::BruteForce,
    };

    let uniform = vec![1.0 / n as f64; n];
    let e = exploitability(ctx, &uniform);
    if e <= BRUTE_FORCE_TOL {
        return Ok(solution(uniform, e, 0));
    }

    // Masks ordered by support size, then lexicographically, so the returned
    // equilibrium is deterministic under multiplicity.
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));

    let mut tried = 0;
    for mask in masks {
        tried += 1;
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if let Some(p) = solve_support(ctx, &support) {
            let e = exploitability(ctx, &p);
            if e <= BRUTE_FORCE_TOL {
                return Ok(solution(p, e, tried));
            }
        }
    }
    Err(CoreError::NoEquilibrium)
}

/// Tries every support subset in (size, lexicographic) order and returns the
/// first certified equilibrium.
fn enumerate_equilibrium(ctx: &ContextGame, tol: f64) -> Option<Vec<f64>> {
    let n = ctx.n();
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if let Some(p) = solve_support(ctx, &support) {
            if exploitability(ctx, &p) <= tol {
                return Some(p);
            }
        }
    }
    None
}

/// Solves the indifference system on a fixed support: find `p` supported on
/// `support` with `(A p)_a = 0` for every supported `a` and `sum p = 1`.
/// Returns the embedded full-length vector when the system has a feasible
/// solution; the caller certifies it through `exploitability`.
fn solve_support(ctx: &ContextGame, support: &[usize]) -> Option<Vec<f64>> {
    let n = ctx.n();
    let m = support.len();
    let embed = |q: &[f64]| {
        let mut full = vec![0.0; n];
        for (slot, &i) in support.iter().enumerate() {
            full[i] = q[slot];
        }
        full
    };

    if m == 1 {
        return Some(embed(&[1.0]));
    }

    // Stack the m indifference rows and the normalization row.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut rhs: Vec<f64> = Vec::with_capacity(m + 1);
    for &a in support {
        rows.push(support.iter().map(|&b| ctx.advantage(a, b)).collect());
        rhs.push(0.0);
    }
    rows.push(vec![1.0; m]);
    rhs.push(1.0);

    let q = match solve_overdetermined(&mut rows, &mut rhs, m) {
        // Rank-deficient systems have a solution polytope; the uniform
        // center of the support is the deterministic tie-break and is
        // verified by the caller like any other candidate.
        None => vec![1.0 / m as f64; m],
        Some(q) => q,
    };

    let mut sum = 0.0;
    for &v in &q {
        if v < -1e-9 || !v.is_finite() {
            return None;
        }
        sum += v.max(0.0);
    }
    if sum < 0.5 {
        return None;
    }
    let q: Vec<f64> = q.iter().map(|&v| v.max(0.0) / sum).collect();
    Some(embed(&q))
}

/// Gaussian elimination with partial pivoting on an overdetermined but
/// consistent `(rows x cols)` system. Returns `None` when the system is
/// rank-deficient.
fn solve_overdetermined(rows: &mut [Vec<f64>], rhs: &mut [f64], cols: usize) -> Option<Vec<f64>> {
    let nrows = rows.len();
    let mut pivot_row_of_col = vec![usize::MAX; cols];
    let mut used = vec![false; nrows];

    for col in 0..cols {
        let mut pivot = usize::MAX;
        let mut best = 1e-12;
        for (r, row) in rows.iter().enumerate() {
            if !used[r] && row[col].abs() > best {
                best = row[col].abs();
                pivot = r;
            }
        }
        if pivot == usize::MAX {
            return None;
        }
        used[pivot] = true;
        pivot_row_of_col[col] = pivot;
        for r in 0..nrows {
            if r == pivot || rows[r][col] == 0.0 {
                continue;
            }
            let factor = rows[r][col] / rows[pivot][col];
            for c in col..cols {
                let delta = factor * rows[pivot][c];
                rows[r][c] -= delta;
            }
            rhs[r] -= factor * rhs[pivot];
        }
    }

    let mut q = vec![0.0; cols];
    for col in 0..cols {
        let r = pivot_row_of_col[col];
        q[col] = rhs[r] / rows[r][col];
    }
    Some(q)
}

/// Candidate supports read off the averaged iterate.
///
/// Two rankings are cut into top-k prefixes: the probabilities themselves,
/// and the pure-response payoffs `(A avg)_a`. The payoff ranking is the
/// sharper signal: supported strategies are indifferent (payoff near 0)
/// at an equilibrium while unsupported ones sit strictly below, so it
/// separates long before slowly-decaying probability mass does. Threshold
/// cuts of the probabilities are added for good measure.
fn polish_candidates(ctx: &ContextGame, avg: &[f64]) -> Vec<Vec<f64>> {
    let n = ctx.n();
    let max = avg.iter().fold(0.0f64, |m, &x| m.max(x));
    if max <= 0.0 {
        return Vec::new();
    }

    let mut supports: BTreeSet<Vec<usize>> = BTreeSet::new();
    for threshold in SUPPORT_THRESHOLDS {
        let support: Vec<usize> = (0..n).filter(|&i| avg[i] >= threshold * max).collect();
        if !support.is_empty() {
            supports.insert(support);
        }
    }
    let payoffs = ctx.advantage_vs(avg);
    for ranking in [avg, payoffs.as_slice()] {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ranking[b].partial_cmp(&ranking[a]).unwrap().then(a.cmp(&b)));
        for k in 1..=n {
            let mut prefix: Vec<usize> = order[..k].to_vec();
            prefix.sort_unstable();
            supports.insert(prefix);
        }
    }

    supports
        .into_iter()
        .filter_map(|s| solve_support(ctx, &s))
        .collect()
}
