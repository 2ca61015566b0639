use std::time::Instant;

use echo_core::contrastive::LossConfig;
use echo_core::router::{route, RouterConfig};
use echo_core::trainer::{train, TrainConfig};
use echo_core::{FeatureMatrix, Graph, Rng};

// Separate binary so no other test competes for the CPU while timing.

fn epoch_seconds(n: usize, m: usize) -> f64 {
    let mut rng = Rng::new(m as u64);
    let mut seen = std::collections::HashSet::new();
    while seen.len() < m {
        let (u, v) = (rng.below(n), rng.below(n));
        if u != v {
            seen.insert((u.min(v), u.max(v)));
        }
    }
    let g = Graph::from_edges(n, seen);
    let x = FeatureMatrix::new(n, 8, (0..n * 8).map(|_| rng.normal()).collect()).unwrap();
    let report = route(&g, &x, &RouterConfig::default(), &mut Rng::new(0)).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        embed_dim: 32,
        loss: LossConfig {
            neg_per_node: 32,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    (0..5)
        .map(|_| {
            let t = Instant::now();
            train(&g, &x, &report, &cfg).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn epoch_time_scales_with_edges() {
    // Runs of well under a second are dominated by timer and scheduler noise.
    let small = epoch_seconds(2000, 20_000);
    let large = epoch_seconds(2000, 40_000);
    assert!(large / small <= 2.5, "{small:.4}s -> {large:.4}s");
}
