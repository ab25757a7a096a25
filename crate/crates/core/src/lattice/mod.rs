//! Lattice data model: the `(E, P, V)` triple of a directed acyclic token
//! lattice, target sequences, vertex paths, validation and random instances.
//!
//! Vertices are 0-based everywhere in this crate. Rendering to the 1-based
//! convention happens only at the command-line boundary.

mod io;

use std::fmt;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;

pub use io::{load, load_bytes, save, to_bytes, LatticeFormat};

/// Row-normalization tolerance accepted by [`validate`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// A directed acyclic lattice over `graph_size` vertices.
///
/// Entry `(k, j)` of the transition matrix is the log-probability of the edge
/// `k -> j`; entry `(j, v)` of the emission matrix is the log-probability that
/// vertex `j` emits token `v`. Zero probability is `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct DagLattice {
    log_transition: Array2<f64>,
    log_emission: Array2<f64>,
    hidden_states: Option<Array2<f64>>,
}

impl DagLattice {
    /// Builds a lattice after checking that the matrix shapes agree. Content
    /// (masking, normalization) is not checked here; see [`validate`].
    pub fn new(
        log_transition: Array2<f64>,
        log_emission: Array2<f64>,
        hidden_states: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (rows, cols) = log_transition.dim();
        if rows == 0 {
            return Err(Error::dimension("graph_size", ">= 1", 0));
        }
        if rows != cols {
            return Err(Error::dimension(
                "log_transition",
                format!("{rows}x{rows}"),
                format!("{rows}x{cols}"),
            ));
        }
        let (e_rows, vocab) = log_emission.dim();
        if e_rows != rows {
            return Err(Error::dimension("log_emission rows", rows, e_rows));
        }
        if vocab == 0 {
            return Err(Error::dimension("vocab_size", ">= 1", 0));
        }
        let hidden_states = match hidden_states {
            Some(h) if h.ncols() == 0 => None,
            Some(h) if h.nrows() != rows => {
                return Err(Error::dimension("hidden_states rows", rows, h.nrows()));
            }
            other => other,
        };
        Ok(Self {
            log_transition,
            log_emission,
            hidden_states,
        })
    }

    /// Builds a lattice from linear-space probability matrices.
    pub fn from_probabilities(
        transition: Array2<f64>,
        emission: Array2<f64>,
        hidden_states: Option<Array2<f64>>,
    ) -> Result<Self> {
        Self::new(transition.mapv(f64::ln), emission.mapv(f64::ln), hidden_states)
    }

    pub fn graph_size(&self) -> usize {
        self.log_transition.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.log_emission.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_states.as_ref().map_or(0, |h| h.ncols())
    }

    pub fn log_transition(&self) -> &Array2<f64> {
        &self.log_transition
    }

    pub fn log_emission(&self) -> &Array2<f64> {
        &self.log_emission
    }

    pub fn hidden_states(&self) -> Option<&Array2<f64>> {
        self.hidden_states.as_ref()
    }

    /// Decomposes the lattice into `(log_transition, log_emission, hidden_states)`.
    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, Option<Array2<f64>>) {
        (self.log_transition, self.log_emission, self.hidden_states)
    }

    /// Joint log-probability of emitting `tokens` along `vertices`: the sum of
    /// edge log-probabilities plus the emission log-probabilities, accumulated
    /// left to right.
    pub fn path_log_joint(&self, vertices: &[usize], tokens: &[usize]) -> f64 {
        debug_assert_eq!(vertices.len(), tokens.len());
        let mut score = f64::NEG_INFINITY;
        for (i, (&j, &y)) in vertices.iter().zip(tokens).enumerate() {
            score = if i == 0 {
                self.log_emission[[j, y]]
            } else {
                score + self.log_transition[[vertices[i - 1], j]] + self.log_emission[[j, y]]
            };
        }
        score
    }

    /// Most probable token of every vertex, smallest token id on ties.
    pub fn greedy_tokens(&self) -> Vec<usize> {
        self.log_emission
            .rows()
            .into_iter()
            .map(|row| {
                let row = row.to_vec();
                crate::logspace::argmax(&row).unwrap_or(0)
            })
            .collect()
    }
}

/// A target token sequence `(y_1, ..., y_M)`, `M >= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct TargetSequence(Vec<usize>);

impl TargetSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyTarget);
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every token id against the vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().position(|&t| t >= vocab_size) {
            Some(position) => Err(Error::TokenOutOfRange {
                position,
                token: self.0[position],
                vocab_size,
            }),
            None => Ok(()),
        }
    }
}

/// A strictly increasing vertex sequence from vertex 0 to vertex `L - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VertexPath(Vec<usize>);

impl VertexPath {
    /// Checks the path constraints for a lattice of `graph_size` vertices.
    pub fn new(vertices: Vec<usize>, graph_size: usize) -> Result<Self> {
        let path = Self(vertices);
        path.check_prefix()?;
        match path.0.last() {
            Some(&last) if last + 1 == graph_size => Ok(path),
            Some(&last) => Err(Error::InvalidPath(format!(
                "last vertex {} is not the final vertex {graph_size}",
                last + 1
            ))),
            None => unreachable!(),
        }
    }

    /// A strictly increasing sequence starting at vertex 0 that need not reach
    /// the final vertex. Used for truncated decodes.
    pub(crate) fn prefix(vertices: Vec<usize>) -> Result<Self> {
        let path = Self(vertices);
        path.check_prefix()?;
        Ok(path)
    }

    fn check_prefix(&self) -> Result<()> {
        match self.0.first() {
            None => return Err(Error::InvalidPath("empty path".into())),
            Some(&first) if first != 0 => {
                return Err(Error::InvalidPath(format!("first vertex is {}, expected 1", first + 1)))
            }
            _ => {}
        }
        if let Some(w) = self.0.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPath(format!(
                "vertices {} and {} are not strictly increasing",
                w[0] + 1,
                w[1] + 1
            )));
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Vertex indices in the 1-based display convention.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|v| v + 1).collect()
    }
}

/// Which lattice matrix a [`Violation`] refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Transition,
    Emission,
    Hidden,
}

/// One failed lattice invariant. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Finite mass on a non-forward edge `row -> col` with `col <= row`.
    BackwardTransition { row: usize, col: usize, value: f64 },
    /// Outgoing mass of a non-final row does not sum to one.
    TransitionNormalization { row: usize, deviation: f64 },
    /// The final vertex has an outgoing edge.
    FinalRowMass { row: usize, col: usize, value: f64 },
    /// Emission row does not sum to one.
    EmissionNormalization { row: usize, deviation: f64 },
    /// A log-probability above zero.
    PositiveLogProbability {
        matrix: MatrixKind,
        row: usize,
        col: usize,
        value: f64,
    },
    /// NaN, `+inf`, or a non-finite hidden state.
    NonFinite { matrix: MatrixKind, row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BackwardTransition { row, col, value } => write!(
                f,
                "transition ({}, {}) = {value} lies on or below the diagonal",
                row + 1,
                col + 1
            ),
            Violation::TransitionNormalization { row, deviation } => {
                write!(f, "transition row {} off by {deviation:.3e}", row + 1)
            }
            Violation::FinalRowMass { row, col, value } => {
                write!(f, "final vertex {} has outgoing mass {value} to {}", row + 1, col + 1)
            }
            Violation::EmissionNormalization { row, deviation } => {
                write!(f, "emission row {} off by {deviation:.3e}", row + 1)
            }
            Violation::PositiveLogProbability {
                matrix,
                row,
                col,
                value,
            } => write!(f, "{matrix:?} ({}, {}) = {value} > 0", row + 1, col + 1),
            Violation::NonFinite { matrix, row, col } => {
                write!(f, "{matrix:?} ({}, {}) is not a valid number", row + 1, col + 1)
            }
        }
    }
}

/// Outcome of [`validate`]. Empty iff the lattice satisfies every invariant.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Largest row-normalization deviation found, 0 when none is reported.
    pub fn max_normalization_deviation(&self) -> f64 {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::TransitionNormalization { deviation, .. }
                | Violation::EmissionNormalization { deviation, .. } => Some(*deviation),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}

/// Deviation of a log-space row from unit mass, measured in probability.
fn row_deviation(row: ArrayView1<'_, f64>) -> f64 {
    let values: Vec<f64> = row.iter().copied().filter(|x| !x.is_nan()).collect();
    (log_sum_exp(&values).exp() - 1.0).abs()
}

/// Checks every lattice invariant at the given normalization tolerance.
pub fn validate_with_tolerance(lattice: &DagLattice, tolerance: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let size = lattice.graph_size();
    let trans = lattice.log_transition();

    for ((row, col), &value) in trans.indexed_iter() {
        if value.is_nan() || value == f64::INFINITY {
            violations.push(Violation::NonFinite {
                matrix: MatrixKind::Transition,
                row,
                col,
            });
            continue;
        }
        if value == f64::NEG_INFINITY {
            continue;
        }
        if value > 0.0 {
            violations.push(Violation::PositiveLogProbability {
                matrix: MatrixKind::Transition,
                row,
                col,
                value,
            });
        }
        if col <= row {
            if row + 1 == size {
                violations.push(Violation::FinalRowMass { row, col, value });
            } else {
                violations.push(Violation::BackwardTransition { row, col, value });
            }
        }
    }
    for row in 0..size.saturating_sub(1) {
        let successors = trans.row(row);
        let deviation = row_deviation(successors.slice(ndarray::s![row + 1..]));
        if deviation > tolerance {
            violations.push(Violation::TransitionNormalization { row, deviation });
        }
    }

    let emis = lattice.log_emission();
    for ((row, col), &value) in emis.indexed_iter() {
        if value.is_nan() || value == f64::INFINITY {
            violations.push(Violation::NonFinite {
                matrix: MatrixKind::Emission,
                row,
                col,
            });
        } else if value > 0.0 {
            violations.push(Violation::PositiveLogProbability {
                matrix: MatrixKind::Emission,
                row,
                col,
                value,
            });
        }
    }
    for (row, values) in emis.rows().into_iter().enumerate() {
        let deviation = row_deviation(values);
        if deviation > tolerance {
            violations.push(Violation::EmissionNormalization { row, deviation });
        }
    }

    if let Some(hidden) = lattice.hidden_states() {
        for ((row, col), value) in hidden.indexed_iter() {
            if !value.is_finite() {
                violations.push(Violation::NonFinite {
                    matrix: MatrixKind::Hidden,
                    row,
                    col,
                });
            }
        }
    }

    ValidationReport { violations }
}

/// Checks every lattice invariant at [`NORMALIZATION_TOLERANCE`].
pub fn validate(lattice: &DagLattice) -> ValidationReport {
    validate_with_tolerance(lattice, NORMALIZATION_TOLERANCE)
}

fn log_softmax(logits: &mut [f64]) {
    let norm = log_sum_exp(logits);
    for x in logits.iter_mut() {
        *x -= norm;
    }
}

/// Deterministic random lattice for tests and benchmarks.
///
/// Transition rows are a softmax over the successors of each vertex, emission
/// rows a softmax over the vocabulary; logits are uniform on `[-3, 3)`. Hidden
/// states are uniform on `[-1, 1)`.
pub fn build_random(graph_size: usize, vocab_size: usize, hidden_dim: usize, seed: u64) -> DagLattice {
    assert!(graph_size >= 1, "graph_size must be at least 1");
    assert!(vocab_size >= 1, "vocab_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut log_transition = Array2::from_elem((graph_size, graph_size), f64::NEG_INFINITY);
    for k in 0..graph_size.saturating_sub(1) {
        let mut logits: Vec<f64> = (k + 1..graph_size).map(|_| rng.random_range(-3.0..3.0)).collect();
        log_softmax(&mut logits);
        for (offset, value) in logits.into_iter().enumerate() {
            log_transition[[k, k + 1 + offset]] = value;
        }
    }

    let mut log_emission = Array2::zeros((graph_size, vocab_size));
    for mut row in log_emission.rows_mut() {
        let mut logits: Vec<f64> = (0..vocab_size).map(|_| rng.random_range(-3.0..3.0)).collect();
        log_softmax(&mut logits);
        row.assign(&ArrayView1::from(&logits));
    }

    let hidden_states =
        (hidden_dim > 0).then(|| Array2::from_shape_fn((graph_size, hidden_dim), |_| rng.random_range(-1.0..1.0)));

    DagLattice::new(log_transition, log_emission, hidden_states).expect("generated shapes are consistent")
}

/// Deterministic uniformly random target of `length` tokens.
pub fn build_random_target(length: usize, vocab_size: usize, seed: u64) -> TargetSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..length).map(|_| rng.random_range(0..vocab_size)).collect();
    TargetSequence::new(tokens).expect("length must be at least 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const NEG_INF: f64 = f64::NEG_INFINITY;

    fn two_vertex() -> DagLattice {
        DagLattice::new(
            array![[NEG_INF, 0.0], [NEG_INF, NEG_INF]],
            array![[0.5f64.ln(), 0.5f64.ln()], [0.5f64.ln(), 0.5f64.ln()]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_edge_lattice_is_valid() {
        assert!(validate(&two_vertex()).is_valid());
    }

    #[test]
    fn flags_lower_triangle_mass() {
        let (mut t, e, h) = two_vertex().into_parts();
        t[[1, 0]] = -0.1;
        let report = validate(&DagLattice::new(t, e, h).unwrap());
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::FinalRowMass { row: 1, col: 0, .. }
        ));
    }

    #[test]
    fn flags_diagonal_and_backward_edges_on_interior_rows() {
        let lattice = build_random(3, 2, 0, 1);
        let (mut t, e, h) = lattice.into_parts();
        t[[1, 1]] = -5.0;
        t[[1, 0]] = -5.0;
        let report = validate(&DagLattice::new(t, e, h).unwrap());
        let backward = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::BackwardTransition { row: 1, .. }))
            .count();
        assert_eq!(backward, 2);
    }

    #[test]
    fn reports_normalization_deviation() {
        let (mut t, e, h) = two_vertex().into_parts();
        t[[0, 1]] = 0.9f64.ln();
        let report = validate(&DagLattice::new(t, e, h).unwrap());
        assert_eq!(report.violations.len(), 1);
        match report.violations[0] {
            Violation::TransitionNormalization { row, deviation } => {
                assert_eq!(row, 0);
                assert!((deviation - 0.1).abs() < 1e-12);
            }
            ref other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn flags_positive_and_nan_entries() {
        let (t, mut e, h) = two_vertex().into_parts();
        e[[0, 0]] = 0.2;
        e[[1, 1]] = f64::NAN;
        let report = validate(&DagLattice::new(t, e, h).unwrap());
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::PositiveLogProbability {
                matrix: MatrixKind::Emission,
                row: 0,
                col: 0,
                ..
            }
        )));
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::NonFinite {
                matrix: MatrixKind::Emission,
                row: 1,
                col: 1
            }
        )));
    }

    #[test]
    fn single_vertex_random_lattice() {
        let lattice = build_random(1, 3, 0, 7);
        assert_eq!(lattice.graph_size(), 1);
        assert_eq!(lattice.log_transition()[[0, 0]], NEG_INF);
        assert_eq!(lattice.log_emission().nrows(), 1);
        assert!(lattice.hidden_states().is_none());
        assert!(validate(&lattice).is_valid());
    }

    #[test]
    fn random_lattice_is_deterministic_and_tightly_normalized() {
        let a = build_random(8, 5, 4, 42);
        let b = build_random(8, 5, 4, 42);
        assert_eq!(to_bytes(&a), to_bytes(&b));
        assert!(validate_with_tolerance(&a, 1e-12).is_valid());
        assert_ne!(to_bytes(&a), to_bytes(&build_random(8, 5, 4, 43)));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            DagLattice::new(Array2::zeros((2, 3)), Array2::zeros((2, 2)), None),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            DagLattice::new(Array2::zeros((2, 2)), Array2::zeros((3, 2)), None),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            DagLattice::new(
                Array2::zeros((2, 2)),
                Array2::zeros((2, 2)),
                Some(Array2::zeros((1, 4)))
            ),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn target_and_path_constraints() {
        assert!(matches!(TargetSequence::new(vec![]), Err(Error::EmptyTarget)));
        let target = TargetSequence::new(vec![0, 4]).unwrap();
        assert!(matches!(
            target.check_vocab(4),
            Err(Error::TokenOutOfRange {
                position: 1,
                token: 4,
                ..
            })
        ));
        assert!(VertexPath::new(vec![0, 2, 3], 4).is_ok());
        assert!(VertexPath::new(vec![0], 1).is_ok());
        assert!(VertexPath::new(vec![1, 3], 4).is_err());
        assert!(VertexPath::new(vec![0, 2, 2, 3], 4).is_err());
        assert!(VertexPath::new(vec![0, 2], 4).is_err());
        assert_eq!(VertexPath::new(vec![0, 2, 3], 4).unwrap().one_based(), vec![1, 3, 4]);
    }
}
