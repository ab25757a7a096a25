//! Forward-backward inference over a [`DagLattice`].
//!
//! For a target `y` of length `M`:
//!
//! ```text
//! alpha_0(0)  = P[0, y_0]
//! alpha_i(j)  = P[j, y_i] * sum_{k<j} alpha_{i-1}(k) E[k, j]
//! beta_{M-1}(L-1) = 1
//! beta_i(j)   = sum_{k>j} E[j, k] beta_{i+1}(k) P[k, y_{i+1}]
//! ```
//!
//! all evaluated in log space. `alpha_{M-1}(L-1)` is the marginal likelihood
//! of the target summed over every path `0 = a_0 < ... < a_{M-1} = L-1`.
//! Only entries `E[k, j]` with `k < j` are ever read; anything on or below the
//! diagonal is ignored and receives a zero gradient.

use std::borrow::Cow;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::lattice::{DagLattice, TargetSequence};
use crate::logspace::log_sum_exp_pairwise;

/// `log alpha`, shape `M x L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTable {
    pub log_alpha: Array2<f64>,
}

impl ForwardTable {
    /// `log P(Y | X)`, `-inf` for an infeasible target.
    pub fn log_marginal(&self) -> f64 {
        let (m, l) = self.log_alpha.dim();
        self.log_alpha[[m - 1, l - 1]]
    }
}

/// `log beta`, shape `M x L`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardTable {
    pub log_beta: Array2<f64>,
}

/// Vertex occupancy posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    /// `gamma[[i, j]] = P(a_i = j | X, Y)`, shape `M x L`.
    pub gamma: Array2<f64>,
    /// `xi[[i, k, j]] = P(a_i = k, a_{i+1} = j | X, Y)`, shape `(M-1) x L x L`.
    pub xi: Option<Array3<f64>>,
    pub log_marginal: f64,
}

/// Posterior-weighted hidden states, shape `M x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedStates {
    pub z: Array2<f64>,
}

/// Gradient of the NLL with respect to every log-matrix entry, each entry
/// treated as a free parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct NllGradient {
    pub log_transition: Array2<f64>,
    pub log_emission: Array2<f64>,
}

/// Whether any path of `target_len` vertices exists in a lattice of
/// `graph_size` vertices, ignoring edge weights.
pub fn structurally_feasible(graph_size: usize, target_len: usize) -> bool {
    target_len >= 1 && target_len <= graph_size && (target_len > 1 || graph_size == 1)
}

fn standard(m: &Array2<f64>) -> Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(m.iter().copied().collect()),
    }
}

fn transposed(m: ArrayView2<'_, f64>) -> Vec<f64> {
    m.t().iter().copied().collect()
}

/// Emission log-probabilities of the target, laid out `M x L`:
/// `out[i * L + j] = log P[j, y_i]`.
fn target_emissions(lattice: &DagLattice, target: &TargetSequence) -> Vec<f64> {
    let emis = lattice.log_emission();
    let l = lattice.graph_size();
    let mut out = Vec::with_capacity(target.len() * l);
    for &y in target.tokens() {
        out.extend((0..l).map(|j| emis[[j, y]]));
    }
    out
}

fn check_target(lattice: &DagLattice, target: &TargetSequence) -> Result<()> {
    target.check_vocab(lattice.vocab_size())
}

fn forward_raw(lattice: &DagLattice, emit: &[f64], m: usize) -> Array2<f64> {
    let l = lattice.graph_size();
    // Column access on the transition matrix becomes row access here.
    let trans_t = transposed(lattice.log_transition().view());
    let mut alpha = vec![f64::NEG_INFINITY; m * l];
    alpha[0] = emit[0];
    for i in 1..m {
        let (done, rest) = alpha.split_at_mut(i * l);
        let prev = &done[(i - 1) * l..];
        let cur = &mut rest[..l];
        let emit_i = &emit[i * l..(i + 1) * l];
        // Step i can only occupy vertices >= i; step i-1 only vertices >= i-1.
        for j in i..l {
            let lo = i - 1;
            let incoming = log_sum_exp_pairwise(&prev[lo..j], &trans_t[j * l + lo..j * l + j]);
            cur[j] = incoming + emit_i[j];
        }
    }
    Array2::from_shape_vec((m, l), alpha).expect("table shape")
}

fn backward_raw(lattice: &DagLattice, emit: &[f64], m: usize) -> Array2<f64> {
    let l = lattice.graph_size();
    let trans = standard(lattice.log_transition());
    let mut beta = vec![f64::NEG_INFINITY; m * l];
    beta[(m - 1) * l + (l - 1)] = 0.0;
    let mut weighted = vec![f64::NEG_INFINITY; l];
    for i in (0..m.saturating_sub(1)).rev() {
        let (head, tail) = beta.split_at_mut((i + 1) * l);
        let next = &tail[..l];
        let cur = &mut head[i * l..];
        let emit_next = &emit[(i + 1) * l..(i + 2) * l];
        for k in 0..l {
            weighted[k] = next[k] + emit_next[k];
        }
        // Step i must leave room for M-1-i more vertices after it.
        let hi = l.saturating_sub(m - 1 - i);
        for j in i..hi {
            cur[j] = log_sum_exp_pairwise(&trans[j * l + j + 1..(j + 1) * l], &weighted[j + 1..]);
        }
    }
    Array2::from_shape_vec((m, l), beta).expect("table shape")
}

pub fn forward(lattice: &DagLattice, target: &TargetSequence) -> Result<ForwardTable> {
    check_target(lattice, target)?;
    let emit = target_emissions(lattice, target);
    Ok(ForwardTable {
        log_alpha: forward_raw(lattice, &emit, target.len()),
    })
}

pub fn backward(lattice: &DagLattice, target: &TargetSequence) -> Result<BackwardTable> {
    check_target(lattice, target)?;
    let emit = target_emissions(lattice, target);
    Ok(BackwardTable {
        log_beta: backward_raw(lattice, &emit, target.len()),
    })
}

/// `-log P(Y | X)`; `+inf` when no path can emit the target.
pub fn nll(lattice: &DagLattice, target: &TargetSequence) -> Result<f64> {
    Ok(-forward(lattice, target)?.log_marginal())
}

struct Inference {
    emit: Vec<f64>,
    alpha: Array2<f64>,
    beta: Array2<f64>,
    log_marginal: f64,
}

fn infer(lattice: &DagLattice, target: &TargetSequence) -> Result<Inference> {
    check_target(lattice, target)?;
    let m = target.len();
    let emit = target_emissions(lattice, target);
    let alpha = forward_raw(lattice, &emit, m);
    let log_marginal = alpha[[m - 1, lattice.graph_size() - 1]];
    if !log_marginal.is_finite() {
        return Err(Error::InfeasibleTarget {
            target_len: m,
            graph_size: lattice.graph_size(),
        });
    }
    let beta = backward_raw(lattice, &emit, m);
    Ok(Inference {
        emit,
        alpha,
        beta,
        log_marginal,
    })
}

fn gamma_of(inf: &Inference) -> Array2<f64> {
    let mut gamma = &inf.alpha + &inf.beta;
    gamma.mapv_inplace(|x| (x - inf.log_marginal).exp());
    gamma
}

/// Calls `visit(i, k, j, xi)` for every edge posterior with `k < j` that can
/// be non-zero.
fn for_each_edge_posterior(lattice: &DagLattice, inf: &Inference, mut visit: impl FnMut(usize, usize, usize, f64)) {
    let (m, l) = inf.alpha.dim();
    let trans = standard(lattice.log_transition());
    let mut weighted = vec![f64::NEG_INFINITY; l];
    for i in 0..m.saturating_sub(1) {
        for (j, w) in weighted.iter_mut().enumerate() {
            *w = inf.emit[(i + 1) * l + j] + inf.beta[[i + 1, j]] - inf.log_marginal;
        }
        for k in 0..l {
            let a = inf.alpha[[i, k]];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for j in k + 1..l {
                let log_xi = a + trans[k * l + j] + weighted[j];
                if log_xi > f64::NEG_INFINITY {
                    visit(i, k, j, log_xi.exp());
                }
            }
        }
    }
}

/// Unary (and optionally pairwise) posteriors of the path given the target.
pub fn posterior(lattice: &DagLattice, target: &TargetSequence, with_pairwise: bool) -> Result<PosteriorTable> {
    let inf = infer(lattice, target)?;
    let gamma = gamma_of(&inf);
    let xi = with_pairwise.then(|| {
        let (m, l) = inf.alpha.dim();
        let mut xi = Array3::zeros((m.saturating_sub(1), l, l));
        for_each_edge_posterior(lattice, &inf, |i, k, j, p| xi[[i, k, j]] = p);
        xi
    });
    Ok(PosteriorTable {
        gamma,
        xi,
        log_marginal: inf.log_marginal,
    })
}

/// `z_i = sum_j P(a_i = j | X, Y) v_j`.
pub fn expected_states(lattice: &DagLattice, target: &TargetSequence) -> Result<ExpectedStates> {
    let hidden = lattice.hidden_states().ok_or(Error::MissingHiddenStates)?;
    let table = posterior(lattice, target, false)?;
    Ok(ExpectedStates {
        z: table.gamma.dot(hidden),
    })
}

/// Analytic gradient of [`nll`]:
/// `d nll / d log E[k, j] = -sum_i xi_i(k, j)` and
/// `d nll / d log P[j, v] = -sum_{i : y_i = v} gamma_i(j)`.
pub fn nll_grad(lattice: &DagLattice, target: &TargetSequence) -> Result<NllGradient> {
    let inf = infer(lattice, target)?;
    let gamma = gamma_of(&inf);
    let l = lattice.graph_size();

    let mut grad_trans = Array2::zeros((l, l));
    for_each_edge_posterior(lattice, &inf, |_, k, j, p| grad_trans[[k, j]] -= p);

    let mut grad_emis = Array2::zeros((l, lattice.vocab_size()));
    for (row, &y) in gamma.axis_iter(Axis(0)).zip(target.tokens()) {
        for (j, &g) in row.iter().enumerate() {
            grad_emis[[j, y]] -= g;
        }
    }
    Ok(NllGradient {
        log_transition: grad_trans,
        log_emission: grad_emis,
    })
}

/// `nll + mu * tts_loss`. With `mu == 0` the TTS term is dropped entirely, so
/// a non-finite TTS loss cannot leak into the result.
pub fn composite_loss(nll_value: f64, tts_loss_value: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        nll_value
    } else {
        nll_value + mu * tts_loss_value
    }
}
