//! Helpers shared by unit, integration and acceptance tests: random inputs
//! and a central finite-difference gradient oracle that only ever evaluates
//! the forward pass.

use std::sync::Arc;

use crate::contrastive::{compute_loss_with, LossConfig, NegativeEval, NegativePool};
use crate::diffusion::{diffuse, DiffusionVars, EdgeIndex};
use crate::encoders::{encode, EncoderVars};
use crate::graph::{FeatureMatrix, Graph};
use crate::kernel::{Index, KernelResult, Tape, Tensor, Var};
use crate::Rng;

/// Uniform entries in `(-scale, scale)`.
pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale))
}

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively.
pub const FD_FLOOR: f64 = 1e-4;

/// Relative error used by [`finite_difference_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Builds the scalar function `build` over leaves holding `inputs`, runs
/// `backward`, and compares every gradient entry with the central difference
/// `(f(x + h) - f(x - h)) / 2h`. Returns the largest relative error.
pub fn finite_difference_check<F, E>(inputs: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: std::fmt::Debug,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward");
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    tape.backward(out).expect("backward");

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = eval(&probe);
            probe[k].data_mut()[i] = x0 - h;
            let down = eval(&probe);
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    worst
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>;

/// A scalar function of some leaf tensors, for gradient checking.
pub struct GradientCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

impl GradientCase {
    /// Largest relative error of the analytic gradient against central
    /// differences with step `h`.
    pub fn check(&self, h: f64) -> f64 {
        finite_difference_check(&self.inputs, h, &self.build)
    }
}

fn index(v: &[usize]) -> Index {
    Arc::from(v.to_vec())
}

/// `sum(weights * y)` with fixed random weights, so every output entry
/// reaches the loss with a different coefficient.
fn weigh(tape: &mut Tape, y: Var, seed: u64) -> KernelResult<Var> {
    let (r, c) = tape.shape(y);
    let w = tape.constant(random_tensor(&mut Rng::new(seed), r, c, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn op_case(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> KernelResult<Var> + 'static) -> GradientCase {
    GradientCase {
        name: name.to_string(),
        inputs,
        build: Box::new(move |t, v| {
            let y = f(t, v)?;
            Ok(weigh(t, y, 99)?)
        }),
    }
}

/// One case per differentiable kernel op.
pub fn op_gradient_cases() -> Vec<GradientCase> {
    let mut rng = Rng::new(2024);
    let mut m = |r: usize, c: usize| random_tensor(&mut rng, r, c, 1.0);
    let positive = Tensor::from_fn(3, 2, |i, j| 0.5 + (i + 2 * j) as f64 * 0.3);
    let gather = index(&[2, 0, 2, 1, 3]);
    let scatter = index(&[1, 1, 0, 3, 1]);
    let segments = index(&[0, 0, 1, 2, 2, 2]);
    let pool = index(&[1, 2, 0, 0, 3, 3, 2, 1, 0, 3, 1, 1]);
    let mut cases = vec![
        op_case("matmul", vec![m(3, 4), m(4, 2)], |t, v| t.matmul(v[0], v[1])),
        op_case("add_bias", vec![m(3, 4), m(1, 4)], |t, v| t.add_bias(v[0], v[1])),
        op_case("add", vec![m(3, 2), m(3, 2)], |t, v| t.add(v[0], v[1])),
        op_case("sub", vec![m(3, 2), m(3, 2)], |t, v| t.sub(v[0], v[1])),
        op_case("mul", vec![m(3, 2), m(3, 2)], |t, v| t.mul(v[0], v[1])),
        op_case("add_scalar", vec![m(3, 2)], |t, v| t.add_scalar(v[0], 0.7)),
        op_case("scale", vec![m(3, 2)], |t, v| t.scale(v[0], -1.3)),
        op_case("tanh", vec![m(3, 2)], |t, v| t.tanh(v[0])),
        op_case("exp", vec![m(3, 2)], |t, v| t.exp(v[0])),
        op_case("log", vec![positive], |t, v| t.log(v[0])),
        op_case("concat_cols", vec![m(3, 2), m(3, 1)], |t, v| t.concat_cols(v[0], v[1])),
        op_case("gather_rows", vec![m(4, 3)], move |t, v| t.gather_rows(v[0], &gather)),
        op_case("scatter_add_rows", vec![m(5, 2)], move |t, v| t.scatter_add_rows(v[0], &scatter, 4)),
        op_case("segment_softmax", vec![m(6, 1)], move |t, v| t.segment_softmax(v[0], &segments, 3)),
        op_case("scale_rows", vec![m(3, 4), m(3, 1)], |t, v| t.scale_rows(v[0], v[1])),
        op_case("edge_scores", vec![m(4, 3), m(3, 3), m(1, 3), m(3, 1)], {
            let (src, dst) = (index(&[0, 3, 3, 1, 2]), index(&[2, 0, 1, 1, 0]));
            move |t, v| t.edge_scores(v[0], v[1], v[2], v[3], &src, &dst)
        }),
        op_case("weighted_scatter", vec![m(4, 3), m(5, 1)], {
            let (src, dst) = (index(&[0, 3, 3, 1, 2]), index(&[2, 0, 1, 1, 0]));
            move |t, v| t.weighted_scatter(v[0], v[1], &src, &dst, 3)
        }),
        op_case("row_dot", vec![m(3, 4), m(3, 4)], |t, v| t.row_dot(v[0], v[1])),
        op_case("l2_normalize_rows", vec![m(3, 4)], |t, v| t.l2_normalize_rows(v[0])),
        op_case("sum", vec![m(3, 2)], |t, v| t.sum(v[0])),
        op_case("mean", vec![m(3, 2)], |t, v| t.mean(v[0])),
    ];
    for chunk in [1, 3, 4] {
        let pool = pool.clone();
        cases.push(op_case(&format!("exp_similarity_sum/chunk{chunk}"), vec![m(4, 3)], move |t, v| {
            t.exp_similarity_sum(v[0], &pool, 3, 1.7, chunk)
        }));
    }
    cases
}

/// A small attributed graph for end-to-end checks: two triangles joined by
/// one edge plus a pendant node, with random features.
pub fn tiny_graph(n_features: usize, seed: u64) -> (Graph, FeatureMatrix) {
    let g = Graph::from_edges(7, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3), (5, 6)]);
    let mut rng = Rng::new(seed);
    let data = (0..7 * n_features).map(|_| rng.uniform(-1.0, 1.0)).collect();
    (g, FeatureMatrix::new(7, n_features, data).expect("finite"))
}

/// Encode, diffuse `steps` times and evaluate the loss, differentiating
/// with respect to every encoder and diffusion parameter.
pub fn pipeline_gradient_case(densifying: bool, steps: usize, negatives: NegativeEval) -> GradientCase {
    let (f, h, p) = (3, 4, 5);
    let (g, x) = tiny_graph(f, 7);
    let mut rng = Rng::new(31 + steps as u64);
    let mut m = |r: usize, c: usize, s: f64| random_tensor(&mut rng, r, c, s);
    let mut inputs = if densifying {
        vec![m(f, h, 0.8), m(f, h, 0.8)]
    } else {
        vec![m(f, h, 0.8), m(1, h, 0.3), m(h, h, 0.8), m(1, h, 0.3)]
    };
    inputs.extend([m(h, h, 0.8), m(h, h, 0.8), m(1, h, 0.3), m(h, 1, 0.8), m(h, h, 0.8)]);
    let n_enc = inputs.len() - 5;
    let pool_rng = &mut Rng::new(5);
    let pool = NegativePool {
        n_nodes: g.n_nodes(),
        per_node: p,
        indices: Arc::from((0..g.n_nodes() * p).map(|_| pool_rng.below(g.n_nodes())).collect::<Vec<_>>()),
    };
    let edges = EdgeIndex::new(&g);
    let cfg = LossConfig {
        temperature: 0.5,
        neg_per_node: p,
        sparsity_lambda: 0.3,
        ..LossConfig::default()
    };
    let name = format!(
        "{}/K{steps}/{negatives:?}",
        if densifying { "densifying" } else { "isolating" }
    );
    GradientCase {
        name,
        inputs,
        build: Box::new(move |tape, v| {
            let enc = if densifying {
                EncoderVars::Densifying {
                    w_self: v[0],
                    w_neigh: v[1],
                }
            } else {
                EncoderVars::Isolating(vec![(v[0], v[1]), (v[2], v[3])])
            };
            let d = &v[n_enc..];
            let dif = DiffusionVars {
                w_src: d[0],
                w_dst: d[1],
                b_hidden: d[2],
                w_score: d[3],
                w_node: d[4],
                steps,
            };
            let z0 = encode(&g, &x, &enc, tape)?;
            let (s, alpha) = diffuse(z0, &edges, &dif, tape)?;
            let (loss, _) = compute_loss_with(s, alpha, &edges, &pool, &cfg, tape, negatives)?;
            Ok(loss.total)
        }),
    }
}

/// Every op case plus the end-to-end compositions.
pub fn gradient_suite() -> Vec<GradientCase> {
    let mut cases = op_gradient_cases();
    for densifying in [false, true] {
        for steps in [0, 1, 2] {
            cases.push(pipeline_gradient_case(densifying, steps, NegativeEval::Auto));
        }
        cases.push(pipeline_gradient_case(densifying, 2, NegativeEval::Chunked(3)));
    }
    cases
}
