//! Immutable containers shared by every stage: the undirected input graph in
//! compressed adjacency form, the node feature matrix and node partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph over dense node ids `0..n_nodes`.
///
/// Neighbor lists are stored back to back in `targets`, node `u` owning
/// `targets[offsets[u]..offsets[u + 1]]`, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Graph {
    /// Builds a graph from arbitrary undirected pairs. Self-loops and
    /// duplicate pairs (in either orientation) are discarded.
    ///
    /// Panics if an endpoint is `>= n_nodes`.
    pub fn from_edges(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|&(u, v)| u != v)
            .map(|(u, v)| {
                assert!(
                    u < n_nodes && v < n_nodes,
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                );
                (u.min(v), u.max(v))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut degree = vec![0usize; n_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n_nodes].to_vec();
        let mut targets = vec![0usize; 2 * edges.len()];
        for &(u, v) in &edges {
            targets[fill[u]] = v;
            fill[u] += 1;
            targets[fill[v]] = u;
            fill[v] += 1;
        }
        for u in 0..n_nodes {
            targets[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        Self {
            n_nodes,
            edges,
            offsets,
            targets,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|u| self.degree(u)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    /// CSR offsets, `n_nodes + 1` entries.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Both directions of every edge as `(src, dst)`, grouped by destination
    /// in ascending order: entry `offsets[v]..offsets[v + 1]` holds the
    /// edges arriving at `v`.
    pub fn directed_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::with_capacity(self.targets.len());
        let mut dst = Vec::with_capacity(self.targets.len());
        for v in 0..self.n_nodes {
            for &u in self.neighbors(v) {
                src.push(u);
                dst.push(v);
            }
        }
        (src, dst)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }
}

/// Average degree `2|E| / N`.
pub fn mean_degree(g: &Graph) -> f64 {
    if g.n_nodes() == 0 {
        return 0.0;
    }
    2.0 * g.n_edges() as f64 / g.n_nodes() as f64
}

/// Dense row-major node attribute matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {n_rows}x{dim} feature matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite feature at row {} col {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn zeros(n_rows: usize, dim: usize) -> Self {
        Self {
            n_rows,
            dim,
            data: vec![0.0; n_rows * dim],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_rows(&self, g: &Graph) -> Result<()> {
        if self.n_rows != g.n_nodes() {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows but graph has {} nodes",
                self.n_rows,
                g.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Node-to-community assignment in canonical form: ids are dense and
/// numbered by first appearance, so two partitions that group nodes the same
/// way compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    assignment: Vec<usize>,
}

impl Partition {
    pub fn new(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment = labels
            .into_iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Self { assignment }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn community(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_communities(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    /// Member lists, indexed by community id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities()];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

impl From<Vec<usize>> for Partition {
    fn from(labels: Vec<usize>) -> Self {
        Partition::new(labels)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.assignment
    }
}


/// Final node embeddings in single precision, the form in which they are
/// stored on disk and scanned during similarity extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Embeddings {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {n_rows}x{dim} embedding matrix",
                data.len()
            )));
        }
        Ok(Self { n_rows, dim, data })
    }

    /// Rounds a double-precision row-major matrix to `f32`.
    pub fn from_f64(n_rows: usize, dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(n_rows, dim, data.iter().map(|&x| x as f32).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}
