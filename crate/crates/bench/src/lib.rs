//! Shared fixtures for the criterion benches.

use daglattice::{build_random, build_random_target, DagLattice, TargetSequence};

/// Graph sizes swept by the DP benches.
pub const GRAPH_SIZES: [usize; 3] = [128, 256, 512];

/// A random lattice of `graph_size` vertices with a target a quarter as long
/// (at least 2 tokens), the usual upsampling ratio for these graphs.
pub fn fixture(graph_size: usize, vocab_size: usize) -> (DagLattice, TargetSequence) {
    let target_len = (graph_size / 4).max(2).min(graph_size);
    (
        build_random(graph_size, vocab_size, 0, graph_size as u64),
        build_random_target(target_len, vocab_size, graph_size as u64 + 1),
    )
}
