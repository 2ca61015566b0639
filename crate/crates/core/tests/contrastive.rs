use std::sync::Arc;

use echo_core::contrastive::{compute_loss_with, shard_decision, LossConfig, NegativeEval, NegativePool};
use echo_core::diffusion::{diffuse, init_diffusion, EdgeIndex};
use echo_core::encoders::{encode, init_encoder};
use echo_core::graph::Graph;
use echo_core::kernel::{Tape, Tensor};
use echo_core::router::Pathway;
use echo_core::testing::relative_error;
use echo_core::{FeatureMatrix, Rng};
use proptest::prelude::*;

fn random_graph(n: usize, m: usize, rng: &mut Rng) -> Graph {
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    pairs.extend((0..m).map(|_| (rng.below(n), rng.below(n))));
    Graph::from_edges(n, pairs)
}

/// Loss value and every parameter gradient of one forward/backward pass.
fn loss_and_grads(n: usize, d: usize, p: usize, eval: NegativeEval) -> (f64, Vec<Tensor>) {
    let mut rng = Rng::new(77);
    let g = random_graph(n, 2 * n, &mut rng);
    let f = 6;
    let x = FeatureMatrix::new(n, f, (0..n * f).map(|_| rng.normal()).collect()).unwrap();
    let enc = init_encoder(Pathway::Densifying, f, d, 2, &mut rng).unwrap();
    let dif = init_diffusion(d, 2, &mut rng);
    let pool = NegativePool {
        n_nodes: n,
        per_node: p,
        indices: Arc::from((0..n * p).map(|_| rng.below(n)).collect::<Vec<_>>()),
    };
    let edges = EdgeIndex::new(&g);
    let cfg = LossConfig {
        neg_per_node: p,
        ..LossConfig::default()
    };
    let mut tape = Tape::new();
    let ev = enc.bind(&mut tape);
    let dv = dif.bind(&mut tape);
    let z0 = encode(&g, &x, &ev, &mut tape).unwrap();
    let (s, alpha) = diffuse(z0, &edges, &dv, &mut tape).unwrap();
    let (loss, _) = compute_loss_with(s, alpha, &edges, &pool, &cfg, &mut tape, eval).unwrap();
    tape.backward(loss.total).unwrap();
    let mut params = ev.vars();
    params.extend(dv.vars());
    let grads = params.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();
    (tape.value(loss.total).item(), grads)
}

fn max_rel(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(&p, &q)| relative_error(p, q)))
        .fold(0.0, f64::max)
}

#[test]
fn blocked_negatives_match_single_block() {
    let (n, d, p) = (60, 8, 16);
    let (l_full, g_full) = loss_and_grads(n, d, p, NegativeEval::Chunked(n));
    for c in [1, 7, 59] {
        let (l, g) = loss_and_grads(n, d, p, NegativeEval::Chunked(c));
        assert!(relative_error(l, l_full) < 1e-12);
        assert!(max_rel(&g, &g_full) < 1e-10, "chunk {c}");
    }
}

#[test]
fn fused_negatives_match_composed_ops() {
    let (n, d, p) = (40, 6, 10);
    let (l_fused, g_fused) = loss_and_grads(n, d, p, NegativeEval::Auto);
    let (l_comp, g_comp) = loss_and_grads(n, d, p, NegativeEval::Composed);
    assert!(relative_error(l_fused, l_comp) < 1e-12);
    assert!(max_rel(&g_fused, &g_comp) < 1e-9);
}

proptest! {
    #[test]
    fn shard_plan_is_tight(n in 1usize..100_000, p in 1usize..512, d in 1usize..256, t in 1u64..1_000_000_000) {
        let per = (p * d) as u64;
        match shard_decision(n, p, d, t) {
            Err(_) => prop_assert!(t < per),
            Ok(plan) => {
                prop_assert_eq!(plan.sharded, n as u64 * per > t);
                if plan.sharded {
                    prop_assert!(plan.chunk_size as u64 * per <= t);
                    prop_assert!((plan.chunk_size as u64 + 1) * per > t);
                } else {
                    prop_assert_eq!(plan.chunk_size, n);
                }
            }
        }
    }
}
