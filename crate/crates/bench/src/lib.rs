//! Input generators shared by the benchmarks.

use covspread_core::SimpleGraph;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform random graph with exactly `m` distinct edges on `n` nodes.
pub fn gnm(n: usize, m: usize, seed: u64) -> SimpleGraph {
    let pairs = n * (n - 1) / 2;
    assert!(m <= pairs, "too many edges for {n} nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m);
    for k in sample(&mut rng, pairs, m) {
        // Unrank k into the pair (u, v), u < v, in row-major order.
        let mut u = 0;
        let mut rest = k;
        while rest >= n - 1 - u {
            rest -= n - 1 - u;
            u += 1;
        }
        edges.push((u, u + 1 + rest));
    }
    SimpleGraph::from_edges(n, edges).expect("distinct non-loop edges")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_edge_count() {
        let g = gnm(514, 3831, 1);
        assert_eq!(g.node_count(), 514);
        assert_eq!(g.edge_count(), 3831);
        assert_eq!(gnm(5, 10, 2).edge_count(), 10);
    }
}
