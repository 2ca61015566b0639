use echo_core::contrastive::{sample_negatives, LossConfig};
use echo_core::router::{route, RouterConfig};
use echo_core::trainer::{evaluate_loss, train, ModelParams, TrainConfig};
use echo_core::{Error, FeatureMatrix, Graph, Rng};

/// Two 50-node cliques joined by one edge, one-hot community features.
fn planted() -> (Graph, FeatureMatrix) {
    let mut pairs = Vec::new();
    for c in 0..2 {
        for i in 0..50 {
            for j in i + 1..50 {
                pairs.push((c * 50 + i, c * 50 + j));
            }
        }
    }
    pairs.push((0, 50));
    let x = (0..100).flat_map(|i| if i < 50 { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
    (Graph::from_edges(100, pairs), FeatureMatrix::new(100, 2, x).unwrap())
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        embed_dim: 16,
        loss: LossConfig {
            neg_per_node: 32,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Per-epoch losses use fresh negatives, and on this graph the sampled
/// loss is dominated by how many same-clique negatives were drawn. Compare
/// the initial and trained parameters on one fixed pool instead.
#[test]
fn loss_falls_on_planted_communities() {
    let (g, x) = planted();
    let mut drops: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = small_cfg(seed);
            let report = route(&g, &x, &RouterConfig::default(), &mut Rng::new(seed)).unwrap();
            let out = train(&g, &x, &report, &cfg).unwrap();
            assert_eq!(out.report.history.len(), 200);
            assert!(out.report.history.iter().all(|b| b.total.is_finite()));
            let pool = sample_negatives(100, 1000, &mut Rng::new(99)).unwrap();
            let eval = |m: &ModelParams| evaluate_loss(m, &g, &x, &pool, &cfg.loss).unwrap().total;
            let initial = ModelParams::init(&report, x.dim(), &cfg).unwrap();
            eval(&initial) - eval(&out.params)
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "{drops:?}");
}

#[test]
fn overflow_reports_epoch() {
    let (g, x) = planted();
    let mut cfg = small_cfg(0);
    cfg.epochs = 3;
    cfg.loss.temperature = 1e-300;
    let report = route(&g, &x, &RouterConfig::default(), &mut Rng::new(0)).unwrap();
    match train(&g, &x, &report, &cfg) {
        Err(Error::NonFiniteLoss { epoch }) => assert_eq!(epoch, Some(1)),
        other => panic!("expected non-finite loss, got {:?}", other.map(|o| o.report.history.len())),
    }
}
