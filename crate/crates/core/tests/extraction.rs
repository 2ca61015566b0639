use echo_core::extraction::{adaptive_k, extract_similarity_graph, pair_similarity, ExtractConfig, SimilarityGraph};
use echo_core::{Embeddings, Graph, Rng};
use proptest::prelude::*;

fn random_embeddings(n: usize, d: usize, seed: u64) -> Embeddings {
    let mut rng = Rng::new(seed);
    Embeddings::new(n, d, (0..n * d).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn random_graph(n: usize, m: usize, seed: u64) -> Graph {
    let mut rng = Rng::new(seed);
    Graph::from_edges(n, (0..m).map(|_| (rng.below(n), rng.below(n))))
}

/// All-pairs reference: full similarity matrix, sort each row, cut at k_i.
fn dense_oracle(e: &Embeddings, g: &Graph, cfg: &ExtractConfig) -> SimilarityGraph {
    let n = e.n_rows();
    let sim: Vec<Vec<f32>> = (0..n).map(|i| (0..n).map(|j| pair_similarity(e, i, j)).collect()).collect();
    let zero = |i: usize| e.row(i).iter().all(|&x| x == 0.0);
    let chosen: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if zero(i) {
                return Vec::new();
            }
            let mut c: Vec<usize> = (0..n).filter(|&j| j != i && !zero(j)).collect();
            c.sort_by(|&a, &b| sim[i][b].partial_cmp(&sim[i][a]).unwrap().then(a.cmp(&b)));
            c.truncate(adaptive_k(g.degree(i), cfg));
            c
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let ij = chosen[i].contains(&j);
            let ji = chosen[j].contains(&i);
            let keep = if cfg.one_sided { ij || ji } else { ij && ji };
            let w = sim[i][j].max(sim[j][i]);
            if keep && w >= cfg.delta as f32 {
                edges.push((i, j, w));
            }
        }
    }
    SimilarityGraph::from_edges(n, edges)
}

#[test]
fn matches_dense_oracle_for_every_chunk_size() {
    let e = random_embeddings(300, 16, 1);
    let g = random_graph(300, 2500, 2);
    for one_sided in [false, true] {
        let base = ExtractConfig {
            delta: 0.2,
            one_sided,
            ..ExtractConfig::default()
        };
        let oracle = dense_oracle(&e, &g, &base);
        assert!(oracle.n_edges() > 100);
        for chunk_rows in [1, 7, 64, 300] {
            let cfg = ExtractConfig { chunk_rows, ..base.clone() };
            assert_eq!(extract_similarity_graph(&e, &g, &cfg).unwrap(), oracle, "chunk {chunk_rows}");
        }
    }
}

#[test]
fn similarity_is_symmetric_bitwise() {
    let e = random_embeddings(50, 13, 3);
    for i in 0..50 {
        for j in 0..50 {
            assert_eq!(pair_similarity(&e, i, j).to_bits(), pair_similarity(&e, j, i).to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn structural_invariants(n in 2usize..80, d in 1usize..20, seed in any::<u64>(), delta in -1.0f64..1.0, chunk in 1usize..90) {
        let e = random_embeddings(n, d, seed);
        let g = random_graph(n, 3 * n, seed ^ 1);
        let cfg = ExtractConfig { delta, chunk_rows: chunk, k_min: 2, k_max: 6, ..ExtractConfig::default() };
        let sg = extract_similarity_graph(&e, &g, &cfg).unwrap();
        let whole = extract_similarity_graph(&e, &g, &ExtractConfig { chunk_rows: n, ..cfg.clone() }).unwrap();
        prop_assert_eq!(&sg, &whole);
        let mut per_node = vec![0usize; n];
        for &(i, j, w) in sg.edges() {
            prop_assert!(i < j);
            prop_assert!(w >= delta as f32);
            per_node[i] += 1;
            per_node[j] += 1;
        }
        // mutual edges: every endpoint selected the other, so at most k_i each
        for (i, &c) in per_node.iter().enumerate() {
            prop_assert!(c <= adaptive_k(g.degree(i), &cfg));
        }
    }
}
