//! Initial node embeddings `Z0`.
//!
//! * Isolating: `z_u = tanh(MLP(x_u))`, a stack of dense layers with `tanh`
//!   between them, so each node is embedded from its own features only.
//! * Densifying: `z_u = tanh(W_self x_u + W_neigh mean_{v in N(u)} x_v)`.
//!   An isolated node's neighbour mean is the zero vector.
//!
//! Weights are Glorot-uniform, biases zero.

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::kernel::{Tape, Tensor, Var};
use crate::router::Pathway;
use crate::Rng;

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_MLP_DEPTH: usize = 2;

/// Uniform in `(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.uniform(-s, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Isolating { layers: Vec<Dense> },
    Densifying { w_self: Tensor, w_neigh: Tensor },
}

/// Parameters of an [`EncoderParams`] registered on a tape.
#[derive(Debug, Clone)]
pub enum EncoderVars {
    Isolating(Vec<(Var, Var)>),
    Densifying { w_self: Var, w_neigh: Var },
}

pub fn init_encoder(pathway: Pathway, in_dim: usize, embed_dim: usize, mlp_depth: usize, rng: &mut Rng) -> Result<EncoderParams> {
    if in_dim == 0 || embed_dim == 0 || mlp_depth == 0 {
        return Err(Error::Config("encoder dimensions and depth must be >= 1".into()));
    }
    Ok(match pathway {
        Pathway::Isolating => {
            let layers = (0..mlp_depth)
                .map(|i| {
                    let fan_in = if i == 0 { in_dim } else { embed_dim };
                    Dense {
                        weight: glorot_uniform(fan_in, embed_dim, fan_in, embed_dim, rng),
                        bias: Tensor::zeros(1, embed_dim),
                    }
                })
                .collect();
            EncoderParams::Isolating { layers }
        }
        Pathway::Densifying => EncoderParams::Densifying {
            w_self: glorot_uniform(in_dim, embed_dim, in_dim, embed_dim, rng),
            w_neigh: glorot_uniform(in_dim, embed_dim, in_dim, embed_dim, rng),
        },
    })
}

impl EncoderParams {
    pub fn pathway(&self) -> Pathway {
        match self {
            EncoderParams::Isolating { .. } => Pathway::Isolating,
            EncoderParams::Densifying { .. } => Pathway::Densifying,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            EncoderParams::Isolating { layers } => layers[0].weight.rows(),
            EncoderParams::Densifying { w_self, .. } => w_self.rows(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            EncoderParams::Isolating { layers } => layers.last().unwrap().weight.cols(),
            EncoderParams::Densifying { w_self, .. } => w_self.cols(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            EncoderParams::Isolating { layers } => layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
            EncoderParams::Densifying { w_self, w_neigh } => vec![w_self, w_neigh],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            EncoderParams::Isolating { layers } => layers
                .iter_mut()
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .collect(),
            EncoderParams::Densifying { w_self, w_neigh } => vec![w_self, w_neigh],
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        match self {
            EncoderParams::Isolating { layers } => EncoderVars::Isolating(
                layers
                    .iter()
                    .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                    .collect(),
            ),
            EncoderParams::Densifying { w_self, w_neigh } => EncoderVars::Densifying {
                w_self: tape.leaf(w_self.clone()),
                w_neigh: tape.leaf(w_neigh.clone()),
            },
        }
    }
}

impl EncoderVars {
    /// Leaf handles in the same order as [`EncoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        match self {
            EncoderVars::Isolating(layers) => layers.iter().flat_map(|&(w, b)| [w, b]).collect(),
            EncoderVars::Densifying { w_self, w_neigh } => vec![*w_self, *w_neigh],
        }
    }
}

pub fn features_tensor(x: &FeatureMatrix) -> Tensor {
    Tensor::new(x.n_rows(), x.dim(), x.data().to_vec()).expect("feature matrix shape")
}

/// Row `u` is the mean of the feature rows of `u`'s neighbours, or zero for
/// an isolated node.
pub fn neighbor_mean(g: &Graph, x: &FeatureMatrix) -> Tensor {
    let d = x.dim();
    let mut out = Tensor::zeros(x.n_rows(), d);
    for u in 0..g.n_nodes() {
        let nb = g.neighbors(u);
        if nb.is_empty() {
            continue;
        }
        let row = out.row_mut(u);
        for &v in nb {
            for (o, xv) in row.iter_mut().zip(x.row(v)) {
                *o += xv;
            }
        }
        let inv = 1.0 / nb.len() as f64;
        row.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Records the encoder forward pass and returns `Z0` (`N x h`).
pub fn encode(g: &Graph, x: &FeatureMatrix, vars: &EncoderVars, tape: &mut Tape) -> Result<Var> {
    x.check_rows(g)?;
    let input = tape.constant(features_tensor(x));
    let check_in = |tape: &Tape, w: Var| -> Result<()> {
        if tape.shape(w).0 != x.dim() {
            return Err(Error::Dimension(format!(
                "encoder expects {} input features, matrix has {}",
                tape.shape(w).0,
                x.dim()
            )));
        }
        Ok(())
    };
    match vars {
        EncoderVars::Isolating(layers) => {
            check_in(tape, layers[0].0)?;
            let mut h = input;
            for &(w, b) in layers {
                let lin = tape.matmul(h, w)?;
                let lin = tape.add_bias(lin, b)?;
                h = tape.tanh(lin)?;
            }
            Ok(h)
        }
        EncoderVars::Densifying { w_self, w_neigh } => {
            check_in(tape, *w_self)?;
            let mean = tape.constant(neighbor_mean(g, x));
            let own = tape.matmul(input, *w_self)?;
            let pooled = tape.matmul(mean, *w_neigh)?;
            let sum = tape.add(own, pooled)?;
            Ok(tape.tanh(sum)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_encoder(Pathway::Isolating, 5, DEFAULT_EMBED_DIM, 2, &mut Rng::new(1)).unwrap();
        let b = init_encoder(Pathway::Isolating, 5, DEFAULT_EMBED_DIM, 2, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        let EncoderParams::Isolating { layers } = &a else { unreachable!() };
        let s0 = (6.0f64 / (5 + 128) as f64).sqrt();
        assert!(layers[0].weight.data().iter().all(|w| w.abs() < s0));
        let s1 = (6.0f64 / 256.0).sqrt();
        assert!(layers[1].weight.data().iter().all(|w| w.abs() < s1));
        assert!(layers[0].bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(a.embed_dim(), 128);
    }

    #[test]
    fn zero_everything_gives_zero_embedding() {
        let g = Graph::from_edges(3, [(0, 1)]);
        let x = FeatureMatrix::zeros(3, 4);
        let mut p = init_encoder(Pathway::Isolating, 4, 6, 2, &mut Rng::new(0)).unwrap();
        p.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = encode(&g, &x, &vars, &mut tape).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_node_uses_only_its_own_features() {
        let g = Graph::from_edges(3, [(0, 1)]);
        let x = FeatureMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, -2.0]).unwrap();
        let p = init_encoder(Pathway::Densifying, 2, 3, 1, &mut Rng::new(4)).unwrap();
        let EncoderParams::Densifying { w_self, .. } = &p else { unreachable!() };
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = encode(&g, &x, &vars, &mut tape).unwrap();
        for c in 0..3 {
            let want = (0.5 * w_self.get(0, c) - 2.0 * w_self.get(1, c)).tanh();
            assert!((tape.value(z).get(2, c) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn densifying_path_graph_by_hand() {
        // Path 0-1-2, x = [1, 0, 1], w_self = 0.5, w_neigh = -0.25 (1x1).
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]);
        let x = FeatureMatrix::new(3, 1, vec![1.0, 0.0, 1.0]).unwrap();
        let p = EncoderParams::Densifying {
            w_self: Tensor::scalar(0.5),
            w_neigh: Tensor::scalar(-0.25),
        };
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let z = encode(&g, &x, &vars, &mut tape).unwrap();
        // node 0: 0.5*1 - 0.25*0; node 1: 0 - 0.25*mean(1,1); node 2 like 0.
        let want = [0.5f64.tanh(), (-0.25f64).tanh(), 0.5f64.tanh()];
        for (got, want) in tape.value(z).data().iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = Graph::from_edges(2, [(0, 1)]);
        let x = FeatureMatrix::zeros(2, 3);
        let p = init_encoder(Pathway::Isolating, 4, 2, 2, &mut Rng::new(0)).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        assert!(matches!(encode(&g, &x, &vars, &mut tape), Err(Error::Dimension(_))));
    }
}
