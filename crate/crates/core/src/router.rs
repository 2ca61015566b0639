//! Structural heuristics that choose the initial encoder.
//!
//! A graph is routed to the isolating encoder when it is dense
//! (`mean_degree > degree_threshold`) or when connected nodes are not much
//! more similar than random pairs (`H_R < homophily_threshold`); otherwise
//! neighbourhood averaging is considered safe and the densifying encoder is
//! used. Feature sparsity is measured and reported but does not gate the
//! decision.
//!
//! The homophily cut-off defaults to 1.5; 0.1 is the other common choice
//! and can be set through `homophily_threshold`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{mean_degree, FeatureMatrix, Graph};
use crate::Rng;

/// Graphs with at most this many nodes get the exact all-pairs random
/// baseline instead of a sampled one.
pub const EXACT_PAIRS_MAX_NODES: usize = 2_000;

/// Guards the `H_R` denominator.
pub const RANDOM_COSINE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Isolating,
    Densifying,
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pathway::Isolating => "isolating",
            Pathway::Densifying => "densifying",
        })
    }
}

impl std::str::FromStr for Pathway {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isolating" | "mlp" => Ok(Pathway::Isolating),
            "densifying" | "sage" => Ok(Pathway::Densifying),
            other => Err(Error::Config(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub degree_threshold: f64,
    pub homophily_threshold: f64,
    /// Reported alongside the decision; not used to gate it.
    pub sparsity_threshold: f64,
    /// Random pairs for the `H_R` baseline; `None` means `10 * N`, capped at
    /// one million.
    pub random_pair_samples: Option<usize>,
    pub force: Option<Pathway>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            degree_threshold: 20.0,
            homophily_threshold: 1.5,
            sparsity_threshold: 0.85,
            random_pair_samples: None,
            force: None,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.degree_threshold > 0.0 && self.homophily_threshold > 0.0 && self.sparsity_threshold > 0.0) {
            return Err(Error::Config("router thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_for(&self, n_nodes: usize) -> usize {
        self.random_pair_samples
            .unwrap_or_else(|| (10 * n_nodes).min(1_000_000))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterReport {
    pub feature_sparsity: f64,
    pub mean_degree: f64,
    pub assortativity_ratio: f64,
    pub decision: Pathway,
    /// Random pairs behind the baseline; for exact enumeration, the number of
    /// unordered pairs.
    pub sample_pairs_used: usize,
    pub forced: bool,
}

impl RouterReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "feature_sparsity={}\nmean_degree={}\nassortativity_ratio={}\ndecision={}\nsample_pairs_used={}\nforced={}\n",
            self.feature_sparsity,
            self.mean_degree,
            self.assortativity_ratio,
            self.decision,
            self.sample_pairs_used,
            self.forced
        )
    }
}

/// Fraction of exactly-zero entries.
pub fn feature_sparsity(x: &FeatureMatrix) -> f64 {
    if x.data().is_empty() {
        return 0.0;
    }
    x.data().iter().filter(|&&v| v == 0.0).count() as f64 / x.data().len() as f64
}

fn unit_rows(x: &FeatureMatrix) -> Vec<f64> {
    let d = x.dim();
    let mut out = x.data().to_vec();
    if d == 0 {
        return out;
    }
    for row in out.chunks_exact_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

fn cosine(unit: &[f64], d: usize, u: usize, v: usize) -> f64 {
    unit[u * d..(u + 1) * d]
        .iter()
        .zip(&unit[v * d..(v + 1) * d])
        .map(|(a, b)| a * b)
        .sum()
}

/// Mean cosine over edges divided by the mean cosine over random node pairs
/// (exact over all pairs for small graphs, `samples` uniform draws with
/// replacement otherwise). Zero rows have cosine 0 with everything.
///
/// Returns the ratio and the number of random pairs it used.
pub fn assortativity_ratio(g: &Graph, x: &FeatureMatrix, rng: &mut Rng, samples: usize) -> Result<(f64, usize)> {
    x.check_rows(g)?;
    if g.n_edges() == 0 {
        return Err(Error::NoEdges);
    }
    let d = x.dim();
    let unit = unit_rows(x);
    let edge_mean = g
        .edges()
        .iter()
        .map(|&(u, v)| cosine(&unit, d, u, v))
        .sum::<f64>()
        / g.n_edges() as f64;

    let n = g.n_nodes();
    let (random_sum, pairs) = if n <= EXACT_PAIRS_MAX_NODES {
        let mut total = 0.0;
        for u in 0..n {
            for v in u + 1..n {
                total += cosine(&unit, d, u, v);
            }
        }
        (total, n * (n - 1) / 2)
    } else {
        let samples = samples.max(1);
        let mut total = 0.0;
        for _ in 0..samples {
            let u = rng.below(n);
            let mut v = rng.below(n - 1);
            if v >= u {
                v += 1;
            }
            total += cosine(&unit, d, u, v);
        }
        (total, samples)
    };
    let random_mean = random_sum / pairs as f64;
    Ok((edge_mean / random_mean.max(RANDOM_COSINE_FLOOR), pairs))
}

/// The routing rule on precomputed heuristics.
pub fn decide(mean_degree: f64, assortativity_ratio: f64, cfg: &RouterConfig) -> Pathway {
    if let Some(p) = cfg.force {
        return p;
    }
    if mean_degree > cfg.degree_threshold || assortativity_ratio < cfg.homophily_threshold {
        Pathway::Isolating
    } else {
        Pathway::Densifying
    }
}

pub fn route(g: &Graph, x: &FeatureMatrix, cfg: &RouterConfig, rng: &mut Rng) -> Result<RouterReport> {
    cfg.validate()?;
    x.check_rows(g)?;
    let sparsity = feature_sparsity(x);
    let k = mean_degree(g);
    let (h_r, pairs) = assortativity_ratio(g, x, rng, cfg.samples_for(g.n_nodes()))?;
    let decision = decide(k, h_r, cfg);
    log::info!(
        "router: sparsity={sparsity:.4} (threshold {}) mean_degree={k:.3} H_R={h_r:.4} -> {decision}",
        cfg.sparsity_threshold
    );
    Ok(RouterReport {
        feature_sparsity: sparsity,
        mean_degree: k,
        assortativity_ratio: h_r,
        decision,
        sample_pairs_used: pairs,
        forced: cfg.force.is_some(),
    })
}
