//! Finite preference games: contexts with pairwise preference matrices,
//! validation, random generation, and expected win rates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::policy::Policy;
use crate::rng::RngStream;

/// Tolerance for the complement and diagonal invariants.
pub const PREFERENCE_TOL: f64 = 1e-12;

/// One context: a set of responses and the probability `P[a][b]` that
/// response `a` is preferred over response `b` in this context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextGame {
    pub context_id: String,
    pub responses: Vec<String>,
    /// Row-major `n x n` preference matrix.
    #[serde(rename = "P")]
    pub preference: Vec<f64>,
}

impl ContextGame {
    pub fn new(
        context_id: impl Into<String>,
        responses: Vec<String>,
        preference: Vec<f64>,
    ) -> Result<Self> {
        let game = ContextGame {
            context_id: context_id.into(),
            responses,
            preference,
        };
        game.check_shape()?;
        Ok(game)
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    /// Structural check only: the matrix must be `n x n`. Semantic
    /// invariants are reported by [`validate_game`].
    pub fn check_shape(&self) -> Result<()> {
        let n = self.n();
        if self.preference.len() != n * n {
            return Err(CoreError::MatrixShape {
                n,
                expected: n * n,
                found: self.preference.len(),
            });
        }
        Ok(())
    }

    /// `P[a][b]`: probability that response `a` beats response `b`.
    pub fn p(&self, a: usize, b: usize) -> f64 {
        self.preference[a * self.n() + b]
    }

    fn set_p(&mut self, a: usize, b: usize, v: f64) {
        let n = self.n();
        self.preference[a * n + b] = v;
    }

    /// Antisymmetric advantage `A[a][b] = P[a][b] - 1/2`.
    pub fn advantage(&self, a: usize, b: usize) -> f64 {
        self.p(a, b) - 0.5
    }

    /// `(A q)_a` for every row `a`: the advantage of each pure response
    /// against the mixed policy `q`.
    pub fn advantage_vs(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|a| (0..n).map(|b| q[b] * self.advantage(a, b)).sum())
            .collect()
    }

    /// Probability that a draw from `a` beats an independent draw from `b`.
    pub fn winrate(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for y in 0..n {
            if a[y] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for y2 in 0..n {
                row += b[y2] * self.p(y, y2);
            }
            total += a[y] * row;
        }
        total
    }
}

/// A finite preference game: independent contexts, each with its own
/// preference matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceGame {
    pub contexts: Vec<ContextGame>,
}

impl PreferenceGame {
    pub fn single(context: ContextGame) -> PreferenceGame {
        PreferenceGame {
            contexts: vec![context],
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(CoreError::param("contexts", "game has no contexts"));
        }
        for ctx in &self.contexts {
            ctx.check_shape()?;
        }
        Ok(())
    }

    /// Parses the JSON document form; shape errors are reported, semantic
    /// invariants are left to [`validate_game`].
    pub fn from_json(text: &str) -> Result<PreferenceGame> {
        let game: PreferenceGame =
            serde_json::from_str(text).map_err(|e| CoreError::param("game", e.to_string()))?;
        game.check_shape()?;
        Ok(game)
    }

    /// Serializes losslessly: floats are emitted with enough digits to
    /// round-trip exactly.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("game serialization cannot fail");
        out.push('\n');
        out
    }

    /// Errors unless `policy` covers exactly this game's contexts with
    /// matching response counts.
    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if self.contexts.len() != policy.contexts.len() {
            return Err(CoreError::ContextMismatch(format!(
                "game has {} contexts, policy has {}",
                self.contexts.len(),
                policy.contexts.len()
            )));
        }
        for (g, p) in self.contexts.iter().zip(&policy.contexts) {
            if g.context_id != p.context_id {
                return Err(CoreError::ContextMismatch(format!(
                    "game context {} vs policy context {}",
                    g.context_id, p.context_id
                )));
            }
            if g.n() != p.probs.len() {
                return Err(CoreError::LengthMismatch {
                    left: g.n(),
                    right: p.probs.len(),
                });
            }
        }
        Ok(())
    }
}

/// A single invariant violation found by [`validate_game`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// `P[a][b] + P[b][a]` differs from 1.
    Complement {
        context_id: String,
        a: usize,
        b: usize,
        magnitude: f64,
    },
    /// A diagonal entry differs from 1/2.
    Diagonal {
        context_id: String,
        a: usize,
        magnitude: f64,
    },
    /// Fewer than two responses.
    ResponseCount { context_id: String, n: usize },
    /// An entry outside `[0, 1]`.
    OutOfRange {
        context_id: String,
        a: usize,
        b: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Complement {
                context_id,
                a,
                b,
                magnitude,
            } => write!(
                f,
                "{context_id}: P[{a}][{b}] + P[{b}][{a}] deviates from 1 by {magnitude:.3e}"
            ),
            Violation::Diagonal {
                context_id,
                a,
                magnitude,
            } => write!(
                f,
                "{context_id}: P[{a}][{a}] deviates from 1/2 by {magnitude:.3e}"
            ),
            Violation::ResponseCount { context_id, n } => {
                write!(f, "{context_id}: needs at least 2 responses, has {n}")
            }
            Violation::OutOfRange {
                context_id,
                a,
                b,
                value,
            } => write!(f, "{context_id}: P[{a}][{b}] = {value} is outside [0, 1]"),
        }
    }
}

/// Checks every invariant of the game and reports all violations; an empty
/// list certifies a valid game. Validation never aborts.
pub fn validate_game(game: &PreferenceGame) -> Vec<Violation> {
    let mut violations = Vec::new();
    for ctx in &game.contexts {
        let n = ctx.n();
        if n < 2 {
            violations.push(Violation::ResponseCount {
                context_id: ctx.context_id.clone(),
                n,
            });
        }
        if ctx.preference.len() != n * n {
            // Shape errors make index-based checks meaningless.
            continue;
        }
        for a in 0..n {
            for b in 0..n {
                let v = ctx.p(a, b);
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    violations.push(Violation::OutOfRange {
                        context_id: ctx.context_id.clone(),
                        a,
                        b,
                        value: v,
                    });
                }
            }
        }
        for a in 0..n {
            let magnitude = (ctx.p(a, a) - 0.5).abs();
            if magnitude > PREFERENCE_TOL {
                violations.push(Violation::Diagonal {
                    context_id: ctx.context_id.clone(),
                    a,
                    magnitude,
                });
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let magnitude = (ctx.p(a, b) + ctx.p(b, a) - 1.0).abs();
                if magnitude > PREFERENCE_TOL {
                    violations.push(Violation::Complement {
                        context_id: ctx.context_id.clone(),
                        a,
                        b,
                        magnitude,
                    });
                }
            }
        }
    }
    violations
}

/// Families of random games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    /// Upper triangle i.i.d. uniform on `[0, 1]`, mirrored.
    Uniform,
    /// One designated response beats every other with probability > 1/2.
    Condorcet,
    /// Every response loses to its predecessor on a cycle, so no response
    /// beats all others (for n >= 3; n = 2 degenerates to the tie matrix).
    Cyclic,
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameKind::Uniform => write!(f, "uniform"),
            GameKind::Condorcet => write!(f, "condorcet"),
            GameKind::Cyclic => write!(f, "cyclic"),
        }
    }
}

/// Generates one random context with `n` responses.
pub fn random_context(
    rng: &mut RngStream,
    n: usize,
    kind: GameKind,
    context_index: usize,
) -> Result<ContextGame> {
    if n < 2 {
        return Err(CoreError::ResponseCount(n));
    }
    let mut ctx = ContextGame {
        context_id: format!("ctx{context_index}"),
        responses: (0..n).map(|i| format!("r{i}")).collect(),
        preference: vec![0.5; n * n],
    };
    match kind {
        GameKind::Uniform => {
            for a in 0..n {
                for b in (a + 1)..n {
                    let u = rng.next_f64();
                    ctx.set_p(a, b, u);
                    ctx.set_p(b, a, 1.0 - u);
                }
            }
        }
        GameKind::Condorcet => {
            for a in 0..n {
                for b in (a + 1)..n {
                    let u = rng.next_f64();
                    ctx.set_p(a, b, u);
                    ctx.set_p(b, a, 1.0 - u);
                }
            }
            // The designated winner strictly beats everyone.
            let w = rng.next_index(n);
            for b in 0..n {
                if b != w {
                    let v = 0.5 + 0.5 * rng.next_open01();
                    ctx.set_p(w, b, v);
                    ctx.set_p(b, w, 1.0 - v);
                }
            }
        }
        GameKind::Cyclic => {
            if n == 2 {
                // A two-response game cannot cycle; the tie matrix is the
                // only one without a strict winner.
                ctx.set_p(0, 1, 0.5);
                ctx.set_p(1, 0, 0.5);
            } else {
                // Non-edge pairs are uniform; cycle edges strictly favor the
                // predecessor, so every response loses at least once.
                for a in 0..n {
                    for b in (a + 1)..n {
                        let on_cycle = b == a + 1 || (a == 0 && b == n - 1);
                        if on_cycle {
                            continue;
                        }
                        let u = rng.next_f64();
                        ctx.set_p(a, b, u);
                        ctx.set_p(b, a, 1.0 - u);
                    }
                }
                for i in 0..n {
                    let j = (i + 1) % n;
                    let v = 0.5 + 0.5 * rng.next_open01();
                    ctx.set_p(i, j, v);
                    ctx.set_p(j, i, 1.0 - v);
                }
            }
        }
    }
    Ok(ctx)
}

/// Generates a single-context random game.
pub fn random_game(rng: &mut RngStream, n: usize, kind: GameKind) -> Result<PreferenceGame> {
    random_game_with_contexts(rng, n, 1, kind)
}

/// Generates a game with several independent contexts of the same kind.
pub fn random_game_with_contexts(
    rng: &mut RngStream,
    n: usize,
    contexts: usize,
    kind: GameKind,
) -> Result<PreferenceGame> {
    if contexts == 0 {
        return Err(CoreError::param(
            "contexts",
            "must generate at least one context",
        ));
    }
    let contexts = (0..contexts)
        .map(|i| random_context(rng, n, kind, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreferenceGame { contexts })
}

/// Mean over contexts of the probability that a draw from `a` beats an
/// independent draw from `b`.
pub fn expected_winrate(game: &PreferenceGame, a: &Policy, b: &Policy) -> Result<f64> {
    game.check_policy(a)?;
    game.check_policy(b)?;
    let total: f64 = game
        .contexts
        .iter()
        .zip(a.contexts.iter().zip(&b.contexts))
        .map(|(ctx, (pa, pb))| ctx.winrate(&pa.probs, &pb.probs))
        .sum();
    Ok(total / game.contexts.len() as f64)
}

/// Rock-paper-scissors: the canonical cyclic game, used all over the tests.
pub fn rock_paper_scissors() -> PreferenceGame {
    let p = vec![
        0.5, 1.0, 0.0, //
        0.0, 0.5, 1.0, //
        1.0, 0.0, 0.5,
    ];
    PreferenceGame::single(
        ContextGame::new(
            "rps",
            vec!["rock".into(), "scissors".into(), "paper".into()],
            p,
        )
        .expect("static matrix is square"),
    )
}
