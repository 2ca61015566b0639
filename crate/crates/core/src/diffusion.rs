//! Attention-gated residual diffusion.
//!
//! For `t = 1..=K`, with directed edges `u -> v` taken from both
//! orientations of every undirected edge:
//!
//! ```text
//! alpha_uv = softmax over u in N(v) of  w_score . tanh(W_src z_u + W_dst z_v + b)
//! z_v     <- tanh(z_v + sum_{u in N(v)} alpha_uv W_node z_u)
//! ```
//!
//! The two-layer scorer acts on `z_u || z_v`; its first layer is stored as
//! the two halves `W_src` and `W_dst` of the `2h x h` matrix, which lets the
//! projection run once per node instead of once per edge. Scorer and
//! `W_node` are shared across steps.
//!
//! With `K = 0` the embedding is returned unchanged, and one attention pass
//! over it still supplies the weights the loss needs.

use std::sync::Arc;

use crate::encoders::glorot_uniform;
use crate::error::Result;
use crate::graph::Graph;
use crate::kernel::{Index, Tape, Tensor, Var};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionParams {
    /// Scorer layer 1, rows acting on the source embedding (`h x h`).
    pub w_src: Tensor,
    /// Scorer layer 1, rows acting on the destination embedding (`h x h`).
    pub w_dst: Tensor,
    /// Scorer layer 1 bias (`1 x h`).
    pub b_hidden: Tensor,
    /// Scorer layer 2 (`h x 1`).
    pub w_score: Tensor,
    /// Message transform (`h x h`).
    pub w_node: Tensor,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DiffusionVars {
    pub w_src: Var,
    pub w_dst: Var,
    pub b_hidden: Var,
    pub w_score: Var,
    pub w_node: Var,
    pub steps: usize,
}

pub fn init_diffusion(embed_dim: usize, steps: usize, rng: &mut Rng) -> DiffusionParams {
    let h = embed_dim;
    DiffusionParams {
        w_src: glorot_uniform(h, h, 2 * h, h, rng),
        w_dst: glorot_uniform(h, h, 2 * h, h, rng),
        b_hidden: Tensor::zeros(1, h),
        w_score: glorot_uniform(h, 1, h, 1, rng),
        w_node: glorot_uniform(h, h, h, h, rng),
        steps,
    }
}

impl DiffusionParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_src, &self.w_dst, &self.b_hidden, &self.w_score, &self.w_node]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_src,
            &mut self.w_dst,
            &mut self.b_hidden,
            &mut self.w_score,
            &mut self.w_node,
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> DiffusionVars {
        DiffusionVars {
            w_src: tape.leaf(self.w_src.clone()),
            w_dst: tape.leaf(self.w_dst.clone()),
            b_hidden: tape.leaf(self.b_hidden.clone()),
            w_score: tape.leaf(self.w_score.clone()),
            w_node: tape.leaf(self.w_node.clone()),
            steps: self.steps,
        }
    }
}

impl DiffusionVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_src, self.w_dst, self.b_hidden, self.w_score, self.w_node]
    }
}

/// Directed edge list grouped by destination, shared by every op that
/// gathers or scatters over edges.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Index,
    pub dst: Index,
    pub n_nodes: usize,
}

impl EdgeIndex {
    pub fn new(g: &Graph) -> Self {
        let (src, dst) = g.directed_edges();
        Self {
            src: Arc::from(src),
            dst: Arc::from(dst),
            n_nodes: g.n_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Attention weights read back from a tape: `alpha[e]` belongs to the
/// directed edge `src[e] -> dst[e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAttention {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl EdgeAttention {
    pub fn from_tape(tape: &Tape, alpha: Var, edges: &EdgeIndex) -> Self {
        Self {
            src: edges.src.to_vec(),
            dst: edges.dst.to_vec(),
            alpha: tape.value(alpha).data().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Scores every directed edge and normalises over each destination's
/// incoming edges. Returns the `E x 1` column of weights.
pub fn attention_pass(z: Var, edges: &EdgeIndex, p: &DiffusionVars, tape: &mut Tape) -> Result<Var> {
    let from_src = tape.matmul(z, p.w_src)?;
    let from_dst = tape.matmul(z, p.w_dst)?;
    let scores = tape.edge_scores(from_src, from_dst, p.b_hidden, p.w_score, &edges.src, &edges.dst)?;
    Ok(tape.segment_softmax(scores, &edges.dst, edges.n_nodes)?)
}

/// Runs `p.steps` diffusion steps from `z0`. Returns the final embedding
/// and the attention of the last pass.
pub fn diffuse(z0: Var, edges: &EdgeIndex, p: &DiffusionVars, tape: &mut Tape) -> Result<(Var, Var)> {
    run(z0, edges, p, tape, false)
}

fn run(z0: Var, edges: &EdgeIndex, p: &DiffusionVars, tape: &mut Tape, blocked: bool) -> Result<(Var, Var)> {
    if p.steps == 0 {
        let alpha = attention_pass(z0, edges, p, tape)?;
        return Ok((z0, alpha));
    }
    let mut z = z0;
    let mut alpha = None;
    for _ in 0..p.steps {
        let mut a = attention_pass(z, edges, p, tape)?;
        if blocked {
            a = tape.scale(a, 0.0)?;
        }
        let messages = tape.matmul(z, p.w_node)?;
        let inbound = tape.weighted_scatter(messages, a, &edges.src, &edges.dst, edges.n_nodes)?;
        let residual = tape.add(z, inbound)?;
        z = tape.tanh(residual)?;
        alpha = Some(a);
    }
    Ok((z, alpha.expect("steps > 0")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    fn scalar_params(w_src: f64, w_dst: f64, b: f64, w_score: f64, w_node: f64, steps: usize) -> DiffusionParams {
        DiffusionParams {
            w_src: Tensor::scalar(w_src),
            w_dst: Tensor::scalar(w_dst),
            b_hidden: Tensor::scalar(b),
            w_score: Tensor::scalar(w_score),
            w_node: Tensor::scalar(w_node),
            steps,
        }
    }

    fn alpha_for(g: &Graph, z: Tensor, p: &DiffusionParams) -> EdgeAttention {
        let edges = EdgeIndex::new(g);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = tape.constant(z);
        let a = attention_pass(z, &edges, &vars, &mut tape).unwrap();
        EdgeAttention::from_tape(&tape, a, &edges)
    }

    #[test]
    fn single_neighbor_gets_full_weight() {
        let g = Graph::from_edges(2, [(0, 1)]);
        let p = init_diffusion(3, 1, &mut Rng::new(0));
        let att = alpha_for(&g, random_tensor(&mut Rng::new(1), 2, 3, 1.0), &p);
        assert_eq!(att.alpha, vec![1.0, 1.0]);
    }

    #[test]
    fn equal_rows_split_evenly() {
        let g = Graph::from_edges(3, [(0, 1), (0, 2)]);
        let p = init_diffusion(4, 1, &mut Rng::new(2));
        let z = Tensor::from_fn(3, 4, |_, c| c as f64 * 0.1 - 0.2);
        let att = alpha_for(&g, z, &p);
        // Node 0 receives from 1 and 2.
        for e in 0..att.len() {
            if att.dst[e] == 0 {
                assert!((att.alpha[e] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn star_attention_by_hand() {
        // Star centred at 0 with leaves 1, 2, 3, scalar embeddings.
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]);
        let z = [0.3, -0.5, 0.1, 0.9];
        let (ws, wd, b, wo) = (0.7, -0.4, 0.05, 1.3);
        let p = scalar_params(ws, wd, b, wo, 0.0, 1);
        let att = alpha_for(&g, Tensor::new(4, 1, z.to_vec()).unwrap(), &p);
        let score = |u: usize, v: usize| wo * (ws * z[u] + wd * z[v] + b).tanh();
        let raw: Vec<f64> = [1, 2, 3].iter().map(|&u| score(u, 0).exp()).collect();
        let total: f64 = raw.iter().sum();
        // First three directed edges arrive at node 0 from 1, 2, 3.
        for (k, r) in raw.iter().enumerate() {
            assert_eq!((att.src[k], att.dst[k]), (k + 1, 0));
            assert!((att.alpha[k] - r / total).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]);
        let p = init_diffusion(2, 0, &mut Rng::new(0));
        let z0 = random_tensor(&mut Rng::new(3), 3, 2, 1.0);
        let edges = EdgeIndex::new(&g);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = tape.constant(z0.clone());
        let (s, alpha) = diffuse(z, &edges, &vars, &mut tape).unwrap();
        assert_eq!(tape.value(s), &z0);
        assert_eq!(tape.shape(alpha), (4, 1));
    }

    #[test]
    fn blocked_flow_is_residual_only() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]);
        let p = init_diffusion(2, 1, &mut Rng::new(0));
        let z0 = random_tensor(&mut Rng::new(3), 3, 2, 1.0);
        let edges = EdgeIndex::new(&g);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = tape.constant(z0.clone());
        let (s, _) = run(z, &edges, &vars, &mut tape, true).unwrap();
        for (got, x) in tape.value(s).data().iter().zip(z0.data()) {
            assert_eq!(*got, x.tanh());
        }
    }

    #[test]
    fn two_nodes_one_step_by_hand() {
        let g = Graph::from_edges(2, [(0, 1)]);
        let p = scalar_params(0.2, 0.3, 0.0, 1.0, 0.8, 1);
        let (z0, z1) = (0.4, -0.6);
        let edges = EdgeIndex::new(&g);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = tape.constant(Tensor::new(2, 1, vec![z0, z1]).unwrap());
        let (s, _) = diffuse(z, &edges, &vars, &mut tape).unwrap();
        // One neighbour each, so alpha = 1.
        let want = [(z0 + 0.8 * z1).tanh(), (z1 + 0.8 * z0).tanh()];
        assert!((tape.value(s).data()[0] - want[0]).abs() < 1e-15);
        assert!((tape.value(s).data()[1] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn isolated_nodes_only_squash() {
        let g = Graph::from_edges(4, [(0, 1)]);
        let p = init_diffusion(3, 2, &mut Rng::new(8));
        let z0 = random_tensor(&mut Rng::new(9), 4, 3, 1.0);
        let edges = EdgeIndex::new(&g);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = tape.constant(z0.clone());
        let (s, _) = diffuse(z, &edges, &vars, &mut tape).unwrap();
        for node in [2, 3] {
            for c in 0..3 {
                assert_eq!(tape.value(s).get(node, c), z0.get(node, c).tanh().tanh());
            }
        }
    }
}
