//! Exhaustive reference implementations.
//!
//! Every quantity here is computed by listing all paths
//! `0 = a_0 < a_1 < ... < a_{M-1} = L-1` and scoring each one directly. The
//! cost is `C(L-2, M-2)` paths, so the enumerator refuses lattices larger
//! than its cap.

use itertools::Itertools;
use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::dp::{self, structurally_feasible, NllGradient, PosteriorTable};
use crate::error::{Error, Result};
use crate::lattice::{DagLattice, TargetSequence, VertexPath};
use crate::logspace::log_sum_exp;

pub const DEFAULT_CAP: usize = 12;

/// All paths of one length through a lattice of one size.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnumeration {
    pub graph_size: usize,
    pub length: usize,
    pub paths: Vec<Vec<usize>>,
}

/// Token assignment used when scoring enumerated paths for an argmax.
#[derive(Clone, Copy, Debug)]
pub enum ArgmaxMode<'a> {
    /// Score every path against a fixed target.
    Target(&'a TargetSequence),
    /// Every vertex emits its most probable token; paths have this length.
    GreedyTokens { length: usize },
}

/// A path and its posterior weight.
type WeightedPath = (Vec<usize>, f64);

type TokensFor = Box<dyn Fn(&[usize]) -> Vec<usize>>;

/// Exhaustive enumerator with a graph-size cap.
#[derive(Clone, Copy, Debug)]
pub struct Enumerator {
    pub cap: usize,
}

impl Default for Enumerator {
    fn default() -> Self {
        Self { cap: DEFAULT_CAP }
    }
}

/// `a` before `b` when compared from the last vertex backward. This matches the
/// order in which Viterbi backtracking breaks ties.
fn reverse_lex_less(a: &[usize], b: &[usize]) -> bool {
    a.iter().rev().lt(b.iter().rev())
}

impl Enumerator {
    pub fn new(cap: usize) -> Self {
        Self { cap }
    }

    pub fn paths(&self, graph_size: usize, length: usize) -> Result<PathEnumeration> {
        if graph_size > self.cap {
            return Err(Error::CapExceeded {
                graph_size,
                cap: self.cap,
            });
        }
        let paths = if !structurally_feasible(graph_size, length) {
            Vec::new()
        } else if length == 1 {
            vec![vec![0]]
        } else {
            (1..graph_size - 1)
                .combinations(length - 2)
                .map(|interior| {
                    let mut path = Vec::with_capacity(length);
                    path.push(0);
                    path.extend(interior);
                    path.push(graph_size - 1);
                    path
                })
                .collect()
        };
        Ok(PathEnumeration {
            graph_size,
            length,
            paths,
        })
    }

    /// Paths with their joint log-probabilities under `target`.
    fn scored(&self, lattice: &DagLattice, target: &TargetSequence) -> Result<Vec<(Vec<usize>, f64)>> {
        target.check_vocab(lattice.vocab_size())?;
        let enumeration = self.paths(lattice.graph_size(), target.len())?;
        Ok(enumeration
            .paths
            .into_iter()
            .map(|p| {
                let s = lattice.path_log_joint(&p, target.tokens());
                (p, s)
            })
            .collect())
    }

    /// `log sum_A P(Y, A | X)`; `-inf` when no path exists.
    pub fn logprob(&self, lattice: &DagLattice, target: &TargetSequence) -> Result<f64> {
        let scores: Vec<f64> = self.scored(lattice, target)?.into_iter().map(|(_, s)| s).collect();
        Ok(log_sum_exp(&scores))
    }

    /// Normalized path weights `P(A | X, Y)`, or an infeasibility error.
    fn weighted(&self, lattice: &DagLattice, target: &TargetSequence) -> Result<(Vec<WeightedPath>, f64)> {
        let scored = self.scored(lattice, target)?;
        let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
        let log_z = log_sum_exp(&scores);
        if !log_z.is_finite() {
            return Err(Error::InfeasibleTarget {
                target_len: target.len(),
                graph_size: lattice.graph_size(),
            });
        }
        let weighted = scored.into_iter().map(|(p, s)| (p, (s - log_z).exp())).collect();
        Ok((weighted, log_z))
    }

    /// Unary and pairwise posteriors as weighted indicator averages over paths.
    pub fn posterior(&self, lattice: &DagLattice, target: &TargetSequence) -> Result<PosteriorTable> {
        let (weighted, log_marginal) = self.weighted(lattice, target)?;
        let (m, l) = (target.len(), lattice.graph_size());
        let mut gamma = Array2::zeros((m, l));
        let mut xi = Array3::zeros((m - 1, l, l));
        for (path, w) in &weighted {
            for (i, &j) in path.iter().enumerate() {
                gamma[[i, j]] += w;
                if i + 1 < m {
                    xi[[i, j, path[i + 1]]] += w;
                }
            }
        }
        Ok(PosteriorTable {
            gamma,
            xi: Some(xi),
            log_marginal,
        })
    }

    /// `sum_A P(A | X, Y) v_{a_i}` for every step `i`.
    pub fn expected_states(&self, lattice: &DagLattice, target: &TargetSequence) -> Result<Array2<f64>> {
        let hidden = lattice.hidden_states().ok_or(Error::MissingHiddenStates)?;
        let (weighted, _) = self.weighted(lattice, target)?;
        let mut z = Array2::zeros((target.len(), lattice.hidden_dim()));
        for (path, w) in &weighted {
            for (i, &j) in path.iter().enumerate() {
                z.row_mut(i).scaled_add(*w, &hidden.row(j));
            }
        }
        Ok(z)
    }

    /// Highest-scoring path, ties broken like the Viterbi backtrace. Returns the
    /// path, its tokens and its joint log-probability.
    pub fn argmax(&self, lattice: &DagLattice, mode: ArgmaxMode<'_>) -> Result<(VertexPath, Vec<usize>, f64)> {
        let l = lattice.graph_size();
        let (enumeration, tokens_for): (PathEnumeration, TokensFor) = match mode {
            ArgmaxMode::Target(target) => {
                target.check_vocab(lattice.vocab_size())?;
                let tokens = target.tokens().to_vec();
                (self.paths(l, target.len())?, Box::new(move |_| tokens.clone()))
            }
            ArgmaxMode::GreedyTokens { length } => {
                let greedy = lattice.greedy_tokens();
                (
                    self.paths(l, length)?,
                    Box::new(move |p: &[usize]| p.iter().map(|&j| greedy[j]).collect()),
                )
            }
        };
        let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
        for path in enumeration.paths {
            let tokens = tokens_for(&path);
            let score = lattice.path_log_joint(&path, &tokens);
            if score == f64::NEG_INFINITY || score.is_nan() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bp, _, bs)) => score > *bs || (score == *bs && reverse_lex_less(&path, bp)),
            };
            if better {
                best = Some((path, tokens, score));
            }
        }
        let (path, tokens, score) = best.ok_or(Error::InfeasibleTarget {
            target_len: enumeration.length,
            graph_size: l,
        })?;
        Ok((VertexPath::new(path, l)?, tokens, score))
    }
}

pub fn enumerate_logprob(lattice: &DagLattice, target: &TargetSequence) -> Result<f64> {
    Enumerator::default().logprob(lattice, target)
}

pub fn enumerate_posterior(lattice: &DagLattice, target: &TargetSequence) -> Result<PosteriorTable> {
    Enumerator::default().posterior(lattice, target)
}

pub fn enumerate_argmax(lattice: &DagLattice, mode: ArgmaxMode<'_>) -> Result<(VertexPath, Vec<usize>, f64)> {
    Enumerator::default().argmax(lattice, mode)
}

/// Central finite differences of [`dp::nll`] evaluated in plain `f64`.
///
/// Each quotient carries roughly `1e-16 * nll / step` of cancellation noise,
/// so small gradients lose relative accuracy; prefer
/// [`Enumerator::finite_difference_grad`] on lattices within the cap.
pub fn finite_difference_grad(lattice: &DagLattice, target: &TargetSequence, step: f64) -> Result<NllGradient> {
    let (trans, emis, hidden) = lattice.clone().into_parts();

    let mut grad_trans = Array2::zeros(trans.dim());
    for (idx, &value) in trans.indexed_iter() {
        if !value.is_finite() {
            continue;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut t = trans.clone();
            t[idx] = value + delta;
            dp::nll(&DagLattice::new(t, emis.clone(), hidden.clone())?, target)
        };
        grad_trans[idx] = (eval(step)? - eval(-step)?) / (2.0 * step);
    }

    let mut grad_emis = Array2::zeros(emis.dim());
    for (idx, &value) in emis.indexed_iter() {
        if !value.is_finite() {
            continue;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut e = emis.clone();
            e[idx] = value + delta;
            dp::nll(&DagLattice::new(trans.clone(), e, hidden.clone())?, target)
        };
        grad_emis[idx] = (eval(step)? - eval(-step)?) / (2.0 * step);
    }

    Ok(NllGradient {
        log_transition: grad_trans,
        log_emission: grad_emis,
    })
}

impl Enumerator {
    /// Central finite differences of the NLL, step `step` on each finite
    /// log-entry, free of cancellation.
    ///
    /// Shifting entry `e` by `delta` scales every path that uses it `c` times
    /// by `exp(c * delta)`, so
    /// `nll(theta + delta e) - nll(theta) = -ln(1 + sum_A w_A expm1(c_A delta))`
    /// with `w_A` the normalized path weights. Evaluating both sides of the
    /// quotient this way keeps full relative precision for tiny gradients.
    pub fn finite_difference_grad(
        &self,
        lattice: &DagLattice,
        target: &TargetSequence,
        step: f64,
    ) -> Result<NllGradient> {
        let (weighted, _) = self.weighted(lattice, target)?;
        let (l, v) = (lattice.graph_size(), lattice.vocab_size());
        // Per-entry sums of w_A * expm1(+-c_A * step).
        let mut trans_shift = [Array2::<f64>::zeros((l, l)), Array2::zeros((l, l))];
        let mut emis_shift = [Array2::<f64>::zeros((l, v)), Array2::zeros((l, v))];
        for (path, w) in &weighted {
            let mut trans_uses: Vec<((usize, usize), i32)> = Vec::new();
            let mut emis_uses: Vec<((usize, usize), i32)> = Vec::new();
            let bump = |uses: &mut Vec<((usize, usize), i32)>, key: (usize, usize)| match uses
                .iter_mut()
                .find(|(k, _)| *k == key)
            {
                Some((_, c)) => *c += 1,
                None => uses.push((key, 1)),
            };
            for (i, &j) in path.iter().enumerate() {
                bump(&mut emis_uses, (j, target.tokens()[i]));
                if i + 1 < path.len() {
                    bump(&mut trans_uses, (j, path[i + 1]));
                }
            }
            for (sign, shift) in [1.0, -1.0].into_iter().enumerate() {
                for &((a, b), c) in &trans_uses {
                    trans_shift[sign][[a, b]] += w * (shift * step * c as f64).exp_m1();
                }
                for &((a, b), c) in &emis_uses {
                    emis_shift[sign][[a, b]] += w * (shift * step * c as f64).exp_m1();
                }
            }
        }
        let quotient = |up: f64, down: f64| -((up.ln_1p() - down.ln_1p()) / (2.0 * step));
        let finite_only = |m: &Array2<f64>, up: &Array2<f64>, down: &Array2<f64>| {
            Array2::from_shape_fn(m.dim(), |idx| {
                if m[idx].is_finite() {
                    quotient(up[idx], down[idx])
                } else {
                    0.0
                }
            })
        };
        Ok(NllGradient {
            log_transition: finite_only(lattice.log_transition(), &trans_shift[0], &trans_shift[1]),
            log_emission: finite_only(lattice.log_emission(), &emis_shift[0], &emis_shift[1]),
        })
    }
}

/// How the numeric side of a gradient check was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteDifferenceMethod {
    /// [`Enumerator::finite_difference_grad`].
    Enumerated,
    /// [`finite_difference_grad`].
    Direct,
}

/// Summary of an analytic-vs-numeric gradient comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub method: FiniteDifferenceMethod,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|)` over compared entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries where either gradient exceeds the magnitude floor.
    pub entries_checked: usize,
}

/// Compares [`dp::nll_grad`] with central finite differences on every entry
/// whose gradient magnitude exceeds `floor`. Lattices within the default
/// enumeration cap use the enumerated differences, larger ones the direct
/// `f64` differences.
pub fn check_gradient(lattice: &DagLattice, target: &TargetSequence, step: f64, floor: f64) -> Result<GradCheckReport> {
    let analytic = dp::nll_grad(lattice, target)?;
    let enumerator = Enumerator::default();
    let (method, numeric) = if lattice.graph_size() <= enumerator.cap {
        (
            FiniteDifferenceMethod::Enumerated,
            enumerator.finite_difference_grad(lattice, target, step)?,
        )
    } else {
        (
            FiniteDifferenceMethod::Direct,
            finite_difference_grad(lattice, target, step)?,
        )
    };
    let mut report = GradCheckReport {
        method,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries_checked: 0,
    };
    let pairs = analytic
        .log_transition
        .iter()
        .zip(&numeric.log_transition)
        .chain(analytic.log_emission.iter().zip(&numeric.log_emission));
    for (&a, &n) in pairs {
        let scale = a.abs().max(n.abs());
        let abs = (a - n).abs();
        report.max_abs_error = report.max_abs_error.max(abs);
        if scale > floor {
            report.entries_checked += 1;
            report.max_rel_error = report.max_rel_error.max(abs / scale);
        }
    }
    Ok(report)
}
