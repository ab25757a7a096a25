//! Path and token search over a lattice.
//!
//! Every argmax breaks ties toward the smallest vertex index, then the
//! smallest token id. Viterbi backtracking picks the smallest predecessor at
//! each step, so among equally scored paths the one whose vertices are
//! smallest when compared from the last position backward is returned.

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DagLattice, TargetSequence, VertexPath};
use crate::logspace::{argmax, max_pairwise};

/// A path with its joint log-probability `log P(Y, A | X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPath {
    pub path: VertexPath,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub path: VertexPath,
    pub tokens: Vec<usize>,
    /// Unnormalized `log P(Y, A | X)` of the returned path and tokens.
    pub joint_logprob: f64,
    /// The decode stopped before reaching the final vertex.
    pub truncated: bool,
}

/// How joint-Viterbi chooses the output length among all lengths that reach
/// the final vertex.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthSelect {
    /// Highest raw joint log-probability. Favors short outputs.
    Raw,
    /// Highest per-step average joint log-probability.
    #[default]
    Normalized,
}

impl std::str::FromStr for LengthSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(LengthSelect::Raw),
            "normalized" => Ok(LengthSelect::Normalized),
            other => Err(Error::InvalidArgument(format!("unknown length selection {other:?}"))),
        }
    }
}

/// Target positions revealed to the decoder during glancing training.
#[derive(Clone, Debug, PartialEq)]
pub struct GlanceAssignment {
    pub path: VertexPath,
    /// `true` marks a revealed (unmasked) position.
    pub observed_mask: Vec<bool>,
    pub tau: f64,
}

/// Step-indexed max-product table with backpointers.
struct ViterbiTable {
    /// `delta[[i, j]]`: best log score of a prefix of `i + 1` vertices ending at `j`.
    delta: Array2<f64>,
    /// `back[[i, j]]`: predecessor of `j` on that prefix (unused for `i = 0`).
    back: Array2<usize>,
}

impl ViterbiTable {
    /// Runs the recursion for `steps` steps; `emit(i, j)` is the emission
    /// log-probability of vertex `j` at step `i`.
    fn run(lattice: &DagLattice, steps: usize, emit: impl Fn(usize, usize) -> f64) -> Self {
        let l = lattice.graph_size();
        let trans_t: Vec<f64> = lattice.log_transition().t().iter().copied().collect();
        let mut delta = Array2::from_elem((steps, l), f64::NEG_INFINITY);
        let mut back = Array2::zeros((steps, l));
        delta[[0, 0]] = emit(0, 0);
        let mut prev = vec![f64::NEG_INFINITY; l];
        for i in 1..steps {
            prev.copy_from_slice(delta.row(i - 1).as_slice().expect("standard layout"));
            for j in i..l {
                let lo = i - 1;
                let (best, arg) = max_pairwise(&prev[lo..j], &trans_t[j * l + lo..j * l + j]);
                if let Some(k) = arg {
                    delta[[i, j]] = best + emit(i, j);
                    back[[i, j]] = lo + k;
                }
            }
        }
        Self { delta, back }
    }

    fn backtrack(&self, last_step: usize, last_vertex: usize) -> Vec<usize> {
        let mut path = vec![last_vertex; last_step + 1];
        for i in (1..=last_step).rev() {
            path[i - 1] = self.back[[i, path[i]]];
        }
        path
    }
}

/// Most probable path for a fixed target (max-product forward pass plus
/// backtracking from the final vertex).
pub fn best_path(lattice: &DagLattice, target: &TargetSequence) -> Result<ScoredPath> {
    target.check_vocab(lattice.vocab_size())?;
    let (m, l) = (target.len(), lattice.graph_size());
    let infeasible = Error::InfeasibleTarget {
        target_len: m,
        graph_size: l,
    };
    if m > l {
        return Err(infeasible);
    }
    let emis = lattice.log_emission();
    let tokens = target.tokens();
    let table = ViterbiTable::run(lattice, m, |i, j| emis[[j, tokens[i]]]);
    let score = table.delta[[m - 1, l - 1]];
    if !score.is_finite() {
        return Err(infeasible);
    }
    let path = VertexPath::new(table.backtrack(m - 1, l - 1), l)?;
    Ok(ScoredPath { path, score })
}

/// Greedy decoding: from the current vertex pick the successor and token that
/// maximize `E[prev, j] * P[j, v]`, stopping at the final vertex or after
/// `max_steps` vertices (defaults to `L`).
pub fn lookahead(lattice: &DagLattice, max_steps: Option<usize>) -> Result<DecodeResult> {
    let l = lattice.graph_size();
    let max_steps = max_steps.unwrap_or(l);
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
    }
    let emis = lattice.log_emission();
    let trans = lattice.log_transition();
    let best_token = lattice.greedy_tokens();
    let best_emit: Vec<f64> = (0..l).map(|j| emis[[j, best_token[j]]]).collect();

    let mut path = vec![0];
    let mut tokens = vec![best_token[0]];
    let mut joint = best_emit[0];
    let mut truncated = false;
    let mut current = 0;
    while current + 1 < l {
        if path.len() == max_steps {
            truncated = true;
            break;
        }
        let row = trans.row(current);
        let scores: Vec<f64> = (current + 1..l).map(|j| row[j] + best_emit[j]).collect();
        let Some(offset) = argmax(&scores) else {
            truncated = true;
            break;
        };
        current += 1 + offset;
        joint += scores[offset];
        path.push(current);
        tokens.push(best_token[current]);
    }
    Ok(DecodeResult {
        path: VertexPath::prefix(path)?,
        tokens,
        joint_logprob: joint,
        truncated,
    })
}

/// Global argmax over paths with each vertex emitting its most probable token.
///
/// The recursion runs for every possible length; among the lengths whose best
/// path reaches the final vertex, `select` picks the output length (smallest
/// length on ties) and the path is recovered by backtracking.
pub fn joint_viterbi(lattice: &DagLattice, select: LengthSelect) -> Result<DecodeResult> {
    let l = lattice.graph_size();
    let emis = lattice.log_emission();
    let best_token = lattice.greedy_tokens();
    let best_emit: Vec<f64> = (0..l).map(|j| emis[[j, best_token[j]]]).collect();
    let table = ViterbiTable::run(lattice, l, |_, j| best_emit[j]);

    let mut chosen: Option<(usize, f64)> = None;
    for i in 0..l {
        let raw = table.delta[[i, l - 1]];
        if !raw.is_finite() {
            continue;
        }
        let key = match select {
            LengthSelect::Raw => raw,
            LengthSelect::Normalized => raw / (i + 1) as f64,
        };
        if chosen.is_none_or(|(_, best)| key > best) {
            chosen = Some((i, key));
        }
    }

    let Some((last_step, _)) = chosen else {
        return Ok(DecodeResult {
            path: VertexPath::prefix(vec![0])?,
            tokens: vec![best_token[0]],
            joint_logprob: best_emit[0],
            truncated: true,
        });
    };
    let vertices = table.backtrack(last_step, l - 1);
    let tokens = vertices.iter().map(|&j| best_token[j]).collect();
    Ok(DecodeResult {
        joint_logprob: table.delta[[last_step, l - 1]],
        path: VertexPath::new(vertices, l)?,
        tokens,
        truncated: false,
    })
}

/// Number of revealed positions, `ceil(tau * M)`.
///
/// Products within `1e-9 * M` of an integer snap to it first, so a ratio
/// carrying roundoff, such as `(0.1 + 0.2) * 10`, counts as exactly 3.
pub fn unmasked_count(tau: f64, target_len: usize) -> usize {
    let x = tau * target_len as f64;
    let nearest = x.round();
    let count = if (x - nearest).abs() <= 1e-9 * (target_len.max(1) as f64) {
        nearest
    } else {
        x.ceil()
    };
    (count.max(0.0) as usize).min(target_len)
}

/// Aligns the target to its best path and reveals `ceil(tau * M)` positions
/// chosen uniformly at random with a generator seeded by `seed`.
pub fn glance_assign(lattice: &DagLattice, target: &TargetSequence, tau: f64, seed: u64) -> Result<GlanceAssignment> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    let ScoredPath { path, .. } = best_path(lattice, target)?;
    let m = target.len();
    let count = unmasked_count(tau, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed_mask = vec![false; m];
    for position in index::sample(&mut rng, m, count) {
        observed_mask[position] = true;
    }
    Ok(GlanceAssignment {
        path,
        observed_mask,
        tau,
    })
}

/// Linear annealing of the unmasking ratio from `tau_start` at step 0 to
/// `tau_end` at `total_steps`.
pub fn tau_schedule(step: u64, total_steps: u64, tau_start: f64, tau_end: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= step <= total_steps and total_steps >= 1, got {step}/{total_steps}"
        )));
    }
    let t = step as f64 / total_steps as f64;
    // Lerp written so both endpoints are reproduced exactly.
    Ok((1.0 - t) * tau_start + t * tau_end)
}
