use serde::{Deserialize, Serialize};

use super::{modularity, WeightedGraph};
use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LouvainConfig {
    pub max_passes: usize,
    pub min_modularity_gain: f64,
    pub resolution: f64,
    /// Seeds the node visiting order.
    pub seed: u64,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            max_passes: 20,
            min_modularity_gain: 1e-7,
            resolution: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainResult {
    pub partition: Partition,
    pub modularity: f64,
    /// Modularity of the flat partition after each pass.
    pub history: Vec<f64>,
}

/// Weighted graph of one aggregation level. `k[i]` counts self-loops twice.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    k: Vec<f64>,
}

impl Level {
    fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        let mut k = vec![0.0; n];
        for &(u, v, w) in edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
            k[u] += w;
            k[v] += w;
        }
        Self {
            adj,
            self_loop: vec![0.0; n],
            k,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Repeated sweeps of single-node moves starting from `comm` (labels
    /// below `len()`). Returns the final labels and whether anything moved.
    fn local_moves(&self, mut comm: Vec<usize>, two_m: f64, gamma: f64, rng: &mut Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut tot = vec![0.0; n];
        for i in 0..n {
            tot[comm[i]] += self.k[i];
        }
        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut is_touched = vec![false; n];
        let mut order: Vec<usize> = (0..n).collect();
        let mut any = false;
        loop {
            rng.shuffle(&mut order);
            let mut moved = false;
            for &i in &order {
                let ci = comm[i];
                for &(j, w) in &self.adj[i] {
                    let cj = comm[j];
                    if !is_touched[cj] {
                        is_touched[cj] = true;
                        touched.push(cj);
                    }
                    link[cj] += w;
                }
                tot[ci] -= self.k[i];
                let gain = |c: usize, link_c: f64| link_c - gamma * tot[c] * self.k[i] / two_m;
                let mut best = ci;
                let mut best_gain = gain(ci, link[ci]);
                for &c in &touched {
                    let g = gain(c, link[c]);
                    if g > best_gain + 1e-12 * best_gain.abs().max(1e-12) {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += self.k[i];
                if best != ci {
                    comm[i] = best;
                    moved = true;
                }
                for &c in &touched {
                    link[c] = 0.0;
                    is_touched[c] = false;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            any = true;
        }
        (comm, any)
    }

    fn aggregate(&self, comm: &[usize], n_comm: usize) -> Level {
        let mut self_loop = vec![0.0; n_comm];
        let mut k = vec![0.0; n_comm];
        let mut merged: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n_comm];
        for i in 0..self.len() {
            let ci = comm[i];
            k[ci] += self.k[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = comm[j];
                if ci == cj {
                    // each internal edge is seen from both ends
                    self_loop[ci] += w / 2.0;
                } else {
                    *merged[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Level {
            adj: merged.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loop,
            k,
        }
    }
}

/// Renumbers labels by first appearance; returns the count.
fn compact(labels: &mut [usize]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Two-phase Louvain: local moves until no node improves, then collapse
/// communities into nodes; repeat while a pass gains more than
/// `min_modularity_gain`, at most `max_passes` times.
pub fn louvain<G: WeightedGraph + ?Sized>(g: &G, cfg: &LouvainConfig) -> Result<LouvainResult> {
    if !(cfg.resolution > 0.0) {
        return Err(Error::Config("resolution must be > 0".into()));
    }
    let n = g.node_count();
    let edges = g.weighted_edges();
    if edges.iter().any(|&(_, _, w)| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Config("edge weights must be finite and >= 0".into()));
    }
    let mut flat = Partition::singletons(n);
    let mut q = modularity(g, &flat, cfg.resolution)?;
    let mut history = Vec::new();
    let two_m: f64 = 2.0 * edges.iter().map(|e| e.2).sum::<f64>();
    if two_m == 0.0 {
        return Ok(LouvainResult {
            partition: flat,
            modularity: 0.0,
            history,
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let base = Level::from_edges(n, &edges);
    let mut level = Level::from_edges(n, &edges);
    let mut node_comm: Vec<usize> = (0..n).collect();
    let mut passes = 0;
    loop {
        while passes < cfg.max_passes {
            passes += 1;
            let (mut comm, moved) = level.local_moves((0..level.len()).collect(), two_m, cfg.resolution, &mut rng);
            if !moved {
                break;
            }
            let n_comm = compact(&mut comm);
            let candidate = Partition::new(node_comm.iter().map(|&c| comm[c]));
            let q_new = modularity(g, &candidate, cfg.resolution)?;
            if q_new < q {
                break;
            }
            log::debug!("louvain pass {passes}: {n_comm} communities, Q = {q_new:.6}");
            let gain = q_new - q;
            node_comm = node_comm.iter().map(|&c| comm[c]).collect();
            flat = candidate;
            q = q_new;
            history.push(q);
            if gain <= cfg.min_modularity_gain {
                break;
            }
            level = level.aggregate(&comm, n_comm);
        }
        // Aggregation freezes members together; single moves of original
        // nodes can still pull boundary nodes across. If that helps,
        // collapse the refined partition and run the passes again.
        if history.is_empty() || passes >= cfg.max_passes {
            break;
        }
        passes += 1;
        let (mut comm, moved) = base.local_moves(flat.assignment().to_vec(), two_m, cfg.resolution, &mut rng);
        if !moved {
            break;
        }
        let n_comm = compact(&mut comm);
        let candidate = Partition::new(comm.clone());
        let q_new = modularity(g, &candidate, cfg.resolution)?;
        if q_new - q <= cfg.min_modularity_gain {
            break;
        }
        flat = candidate;
        q = q_new;
        history.push(q);
        level = base.aggregate(&comm, n_comm);
        node_comm = comm;
    }
    Ok(LouvainResult {
        partition: flat,
        modularity: q,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn two_triangles_split() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let r = louvain(&g, &LouvainConfig::default()).unwrap();
        assert_eq!(r.partition.assignment(), &[0, 0, 0, 1, 1, 1]);
        assert!((r.modularity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edgeless_gives_singletons() {
        let g = Graph::from_edges(5, []);
        let r = louvain(&g, &LouvainConfig::default()).unwrap();
        assert_eq!(r.partition.n_communities(), 5);
        assert_eq!(r.modularity, 0.0);
    }

    #[test]
    fn weighted_ring_of_cliques() {
        let mut pairs = Vec::new();
        for c in 0..4 {
            for i in 0..5 {
                for j in i + 1..5 {
                    pairs.push((c * 5 + i, c * 5 + j));
                }
            }
            pairs.push((c * 5, ((c + 1) % 4) * 5 + 1));
        }
        let g = Graph::from_edges(20, pairs);
        let r = louvain(&g, &LouvainConfig::default()).unwrap();
        assert_eq!(r.partition.n_communities(), 4);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn negative_weights_rejected() {
        let sg = crate::extraction::SimilarityGraph::from_edges(2, vec![(0, 1, -0.5)]);
        assert!(louvain(&sg, &LouvainConfig::default()).is_err());
    }
}
