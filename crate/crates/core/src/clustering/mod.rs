//! Partitioning: Louvain modularity maximisation and label propagation.

mod louvain;
mod lpa;

pub use louvain::{louvain, LouvainConfig, LouvainResult};
pub use lpa::{lpa, DEFAULT_LPA_ITERS};

use crate::error::{Error, Result};
use crate::extraction::SimilarityGraph;
use crate::graph::{Graph, Partition};

/// Undirected graph with non-negative edge weights and no self-edges.
pub trait WeightedGraph {
    fn node_count(&self) -> usize;
    /// Each undirected edge once.
    fn weighted_edges(&self) -> Vec<(usize, usize, f64)>;
}

impl WeightedGraph for Graph {
    fn node_count(&self) -> usize {
        self.n_nodes()
    }

    fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.edges().iter().map(|&(u, v)| (u, v, 1.0)).collect()
    }
}

impl WeightedGraph for SimilarityGraph {
    fn node_count(&self) -> usize {
        self.n_nodes()
    }

    fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.edges().iter().map(|&(u, v, w)| (u, v, w as f64)).collect()
    }
}

/// `Q = sum_c [ L_c / m - gamma (d_c / 2m)^2 ]` with `L_c` the weight inside
/// community `c` and `d_c` its total degree. An edgeless graph has `Q = 0`.
pub fn modularity<G: WeightedGraph + ?Sized>(g: &G, p: &Partition, resolution: f64) -> Result<f64> {
    if p.len() != g.node_count() {
        return Err(Error::Dimension(format!(
            "partition covers {} nodes, graph has {}",
            p.len(),
            g.node_count()
        )));
    }
    let k = p.n_communities();
    let mut inside = vec![0.0; k];
    let mut degree = vec![0.0; k];
    let mut m = 0.0;
    for (u, v, w) in g.weighted_edges() {
        let (cu, cv) = (p.community(u), p.community(v));
        m += w;
        degree[cu] += w;
        degree[cv] += w;
        if cu == cv {
            inside[cu] += w;
        }
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok((0..k)
        .map(|c| inside[c] / m - resolution * (degree[c] / (2.0 * m)).powi(2))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_one_community() {
        // A = [[0,1],[1,0]], 2m = 2: (1/2)(1 - 1/2 + 1 - 1/2 + 0 - 1/2 + 0 - 1/2) = 0
        let g = Graph::from_edges(2, [(0, 1)]);
        assert!((modularity(&g, &Partition::new([0, 0]), 1.0).unwrap()).abs() < 1e-15);
        // split: (1/2)(0 - 1/2 + 0 - 1/2) = -1/2
        assert!((modularity(&g, &Partition::new([0, 1]), 1.0).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_triangles() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let q = modularity(&g, &Partition::new([0, 0, 0, 1, 1, 1]), 1.0).unwrap();
        assert!((q - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singletons_on_clique_are_negative() {
        let pairs: Vec<_> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        let g = Graph::from_edges(5, pairs);
        assert!(modularity(&g, &Partition::singletons(5), 1.0).unwrap() < 0.0);
    }

    #[test]
    fn relabelling_is_invisible() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]);
        let a = modularity(&g, &Partition::new([0, 0, 1, 1, 2]), 1.0).unwrap();
        let b = modularity(&g, &Partition::new([7, 7, 3, 3, 9]), 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edgeless_is_zero_and_length_checked() {
        let g = Graph::from_edges(3, []);
        assert_eq!(modularity(&g, &Partition::singletons(3), 1.0).unwrap(), 0.0);
        assert!(modularity(&g, &Partition::singletons(2), 1.0).is_err());
    }
}
