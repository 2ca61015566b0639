use std::collections::HashMap;

use crate::graph::{Graph, Partition};
use crate::Rng;

pub const DEFAULT_LPA_ITERS: usize = 100;

/// Labels whose count among `u`'s neighbours is maximal, ascending.
fn majority(g: &Graph, labels: &[usize], u: usize, counts: &mut HashMap<usize, usize>) -> Vec<usize> {
    counts.clear();
    for &v in g.neighbors(u) {
        *counts.entry(labels[v]).or_insert(0) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let mut best: Vec<usize> = counts.iter().filter(|&(_, &c)| c == top).map(|(&l, _)| l).collect();
    best.sort_unstable();
    best
}

/// Asynchronous label propagation: nodes visited in a fresh random order
/// each sweep take their neighbours' most frequent label, ties broken at
/// random. Stops once every node holds a majority label, or after
/// `max_iters` sweeps.
pub fn lpa(g: &Graph, max_iters: usize, rng: &mut Rng) -> Partition {
    let n = g.n_nodes();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut counts = HashMap::new();
    for _ in 0..max_iters {
        rng.shuffle(&mut order);
        for &u in &order {
            let best = majority(g, &labels, u, &mut counts);
            if !best.is_empty() {
                labels[u] = best[rng.below(best.len())];
            }
        }
        let stable = (0..n).all(|u| {
            let best = majority(g, &labels, u, &mut counts);
            best.is_empty() || best.binary_search(&labels[u]).is_ok()
        });
        if stable {
            break;
        }
    }
    Partition::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique(offset: usize, k: usize) -> Vec<(usize, usize)> {
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (offset + i, offset + j))).collect()
    }

    #[test]
    fn disjoint_cliques() {
        let mut pairs = clique(0, 6);
        pairs.extend(clique(6, 6));
        let g = Graph::from_edges(12, pairs);
        let p = lpa(&g, DEFAULT_LPA_ITERS, &mut Rng::new(1));
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn single_clique() {
        let g = Graph::from_edges(7, clique(0, 7));
        assert_eq!(lpa(&g, DEFAULT_LPA_ITERS, &mut Rng::new(2)).n_communities(), 1);
    }

    #[test]
    fn isolated_nodes_keep_their_label() {
        let g = Graph::from_edges(3, []);
        assert_eq!(lpa(&g, 5, &mut Rng::new(0)).n_communities(), 3);
    }
}
