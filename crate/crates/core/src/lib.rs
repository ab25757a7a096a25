//! Dynamic programming over directed-acyclic token lattices.
//!
//! A lattice holds `L` vertices with forward-only transitions between them and
//! a token distribution at each vertex. A target sequence of `M` tokens is
//! explained by every strictly increasing vertex path from the first vertex to
//! the last. This crate computes the marginal likelihood of a target, vertex
//! posteriors, posterior-weighted hidden states and their gradients in
//! `O(M L^2)`, decodes paths and tokens, and ships exhaustive oracles that
//! check all of it on small lattices.
//!
//! ```
//! use daglattice::{build_random, build_random_target, dp, oracle};
//!
//! let lattice = build_random(6, 4, 0, 13);
//! let target = build_random_target(4, 4, 1);
//! let nll = dp::nll(&lattice, &target).unwrap();
//! let reference = -oracle::enumerate_logprob(&lattice, &target).unwrap();
//! assert!((nll - reference).abs() < 1e-9);
//! ```

pub mod decode;
pub mod dp;
mod error;
pub mod lattice;
pub mod logspace;
pub mod oracle;
pub mod pipeline;

pub use decode::{DecodeResult, GlanceAssignment, LengthSelect, ScoredPath};
pub use dp::{BackwardTable, ExpectedStates, ForwardTable, NllGradient, PosteriorTable};
pub use error::{Error, Result};
pub use lattice::{
    build_random, build_random_target, validate, DagLattice, LatticeFormat, TargetSequence, ValidationReport,
    VertexPath, Violation,
};
pub use pipeline::{AcousticFeatures, DaspeechLoss, DurationPlan, FrameSequence, TtsLosses};
