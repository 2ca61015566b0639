//! The three phases wired together. The CLI subcommands call the same
//! phase functions, so running them one after another with the same
//! configuration reproduces [`detect`] exactly.

use std::path::Path;
use std::time::Instant;

use crate::clustering::{louvain, LouvainResult};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{load_edge_list, load_features};
use crate::extraction::{extract_similarity_graph, SimilarityGraph};
use crate::graph::{Embeddings, FeatureMatrix, Graph};
use crate::metrics::PhaseTimings;
use crate::router::{route, RouterReport};
use crate::trainer::{train, TrainOutput};
use crate::Rng;

const STREAM_ROUTER: u64 = 0x524f_5554;

/// Loads a zero-indexed edge list and its feature matrix. Feature rows past
/// the largest edge id become isolated nodes.
pub fn load_inputs(graph: impl AsRef<Path>, features: impl AsRef<Path>) -> Result<(Graph, FeatureMatrix)> {
    let (g, stats) = load_edge_list(graph.as_ref(), true)?;
    if stats.self_loops_dropped > 0 {
        log::warn!("{}: dropped {} self-loops", graph.as_ref().display(), stats.self_loops_dropped);
    }
    let x = load_features(features.as_ref())?;
    if x.n_rows() < g.n_nodes() {
        return Err(Error::Dimension(format!(
            "{} has {} rows but {} references {} nodes",
            features.as_ref().display(),
            x.n_rows(),
            graph.as_ref().display(),
            g.n_nodes()
        )));
    }
    let g = if x.n_rows() > g.n_nodes() {
        Graph::from_edges(x.n_rows(), g.edges().iter().copied())
    } else {
        g
    };
    Ok((g, x))
}

pub fn route_phase(g: &Graph, x: &FeatureMatrix, cfg: &PipelineConfig) -> Result<RouterReport> {
    let mut rng = Rng::new(cfg.seed).substream(STREAM_ROUTER);
    route(g, x, &cfg.router, &mut rng).map_err(|e| e.in_phase("route"))
}

pub fn train_phase(g: &Graph, x: &FeatureMatrix, report: &RouterReport, cfg: &PipelineConfig) -> Result<TrainOutput> {
    train(g, x, report, &cfg.train_config()).map_err(|e| e.in_phase("train"))
}

/// Final embedding at the `f32` precision it is stored with.
pub fn embeddings_of(out: &TrainOutput) -> Result<Embeddings> {
    Embeddings::from_f64(out.embedding.rows(), out.embedding.cols(), out.embedding.data())
}

pub fn extract_phase(emb: &Embeddings, g: &Graph, cfg: &PipelineConfig) -> Result<SimilarityGraph> {
    extract_similarity_graph(emb, g, &cfg.extract).map_err(|e| e.in_phase("extract"))
}

pub fn cluster_phase(sg: &SimilarityGraph, cfg: &PipelineConfig) -> Result<LouvainResult> {
    louvain(sg, &cfg.louvain_config()).map_err(|e| e.in_phase("cluster"))
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub route: RouterReport,
    pub train: TrainOutput,
    pub embeddings: Embeddings,
    pub similarity: SimilarityGraph,
    pub clusters: LouvainResult,
    pub timings: PhaseTimings,
}

pub fn detect(g: &Graph, x: &FeatureMatrix, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    let t0 = Instant::now();
    let report = route_phase(g, x, cfg)?;
    let t1 = Instant::now();
    let trained = train_phase(g, x, &report, cfg)?;
    let embeddings = embeddings_of(&trained)?;
    let t2 = Instant::now();
    let similarity = extract_phase(&embeddings, g, cfg)?;
    let clusters = cluster_phase(&similarity, cfg)?;
    let t3 = Instant::now();
    let timings = PhaseTimings {
        phase1_s: (t1 - t0).as_secs_f64(),
        phase2_s: (t2 - t1).as_secs_f64(),
        phase3_s: (t3 - t2).as_secs_f64(),
        total_s: (t3 - t0).as_secs_f64(),
    };
    Ok(Detection {
        route: report,
        train: trained,
        embeddings,
        similarity,
        clusters,
        timings,
    })
}
