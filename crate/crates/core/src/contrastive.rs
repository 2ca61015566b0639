//! Attention-weighted InfoNCE with an L1 penalty on the attention.
//!
//! With `s_hat` the row-normalised embedding and `sim(u, v) = s_hat_u .
//! s_hat_v / tau`:
//!
//! ```text
//! P_v   = sum_{u in N(v)} (alpha_uv + eps) exp(sim(u, v))
//! N_v   = sum_{j in pool(v)} exp(sim(v, j))
//! L_C   = -mean_{v : deg v > 0} log(P_v / (P_v + N_v))
//! L     = L_C + lambda * mean_{directed (u, v)} alpha_uv
//! ```
//!
//! `pool(v)` holds `P` node ids drawn uniformly (a node may draw itself or a
//! neighbour). When `N * P * d` exceeds the shard threshold, `N_v` is
//! evaluated in blocks of `c = floor(threshold / (P * d))` rows; the value
//! and all gradients are the same as for the single-block evaluation.
//!
//! Nodes without neighbours have an empty positive sum and are left out of
//! the mean.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::EdgeIndex;
use crate::error::{Error, Result};
use crate::kernel::{Index, Tape, Var};
use crate::Rng;

pub const DEFAULT_SHARD_ELEM_THRESHOLD: u64 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub neg_per_node: usize,
    pub epsilon: f64,
    pub sparsity_lambda: f64,
    pub shard_elem_threshold: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            neg_per_node: 256,
            epsilon: 1e-8,
            sparsity_lambda: 1e-4,
            shard_elem_threshold: DEFAULT_SHARD_ELEM_THRESHOLD,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.neg_per_node == 0 {
            return Err(Error::Config("negatives per node must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.sparsity_lambda >= 0.0) {
            return Err(Error::Config("epsilon and lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// `n_nodes x per_node` negative node ids, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativePool {
    pub n_nodes: usize,
    pub per_node: usize,
    pub indices: Index,
}

impl NegativePool {
    pub fn row(&self, v: usize) -> &[usize] {
        &self.indices[v * self.per_node..(v + 1) * self.per_node]
    }
}

pub fn sample_negatives(n_nodes: usize, per_node: usize, rng: &mut Rng) -> Result<NegativePool> {
    if n_nodes < 2 {
        return Err(Error::Empty("negative sampling needs at least two nodes"));
    }
    let indices: Vec<usize> = (0..n_nodes * per_node).map(|_| rng.below(n_nodes)).collect();
    Ok(NegativePool {
        n_nodes,
        per_node,
        indices: Arc::from(indices),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub sharded: bool,
    pub chunk_size: usize,
}

impl ShardPlan {
    pub fn chunks(&self, n: usize) -> usize {
        n.div_ceil(self.chunk_size.max(1))
    }
}

/// Shards iff `n * p * d > threshold`, with `floor(threshold / (p * d))`
/// rows per block.
pub fn shard_decision(n: usize, p: usize, d: usize, threshold: u64) -> Result<ShardPlan> {
    let per_node = (p as u64) * (d as u64);
    let total = (n as u64) * per_node;
    if threshold < per_node {
        return Err(Error::ShardThreshold { threshold, per_node });
    }
    if total > threshold {
        Ok(ShardPlan {
            sharded: true,
            chunk_size: (threshold / per_node) as usize,
        })
    } else {
        Ok(ShardPlan {
            sharded: false,
            chunk_size: n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub sparsity: f64,
    pub total: f64,
    pub sharded: bool,
    pub chunks_used: usize,
}

/// How the negative term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeEval {
    /// Blocked evaluation sized by [`shard_decision`].
    Auto,
    /// Blocked evaluation with an explicit block size.
    Chunked(usize),
    /// Composition of gather / row-dot / exp / scatter that materialises all
    /// `N * P` gathered rows. Reference route for testing.
    Composed,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub contrastive: Var,
    pub sparsity: Var,
}

pub fn compute_loss(s: Var, alpha: Var, edges: &EdgeIndex, pool: &NegativePool, cfg: &LossConfig, tape: &mut Tape) -> Result<(LossVars, LossBreakdown)> {
    compute_loss_with(s, alpha, edges, pool, cfg, tape, NegativeEval::Auto)
}

fn composed_negative_sum(tape: &mut Tape, s_hat: Var, pool: &NegativePool, inv_tau: f64) -> Result<Var> {
    let owner: Vec<usize> = (0..pool.n_nodes)
        .flat_map(|v| std::iter::repeat_n(v, pool.per_node))
        .collect();
    let owner: Index = Arc::from(owner);
    let mine = tape.gather_rows(s_hat, &owner)?;
    let theirs = tape.gather_rows(s_hat, &pool.indices)?;
    let sims = tape.row_dot(mine, theirs)?;
    let sims = tape.scale(sims, inv_tau)?;
    let terms = tape.exp(sims)?;
    Ok(tape.scatter_add_rows(terms, &owner, pool.n_nodes)?)
}

pub fn compute_loss_with(
    s: Var,
    alpha: Var,
    edges: &EdgeIndex,
    pool: &NegativePool,
    cfg: &LossConfig,
    tape: &mut Tape,
    negatives: NegativeEval,
) -> Result<(LossVars, LossBreakdown)> {
    cfg.validate()?;
    let (n, d) = tape.shape(s);
    if pool.n_nodes != n || edges.n_nodes != n {
        return Err(Error::Dimension(format!(
            "embedding has {n} rows, pool {} and graph {}",
            pool.n_nodes, edges.n_nodes
        )));
    }
    if tape.shape(alpha) != (edges.len(), 1) {
        return Err(Error::Dimension("one attention weight per directed edge".into()));
    }
    let mut has_edge = vec![false; n];
    for &v in edges.dst.iter() {
        has_edge[v] = true;
    }
    let active: Vec<usize> = (0..n).filter(|&v| has_edge[v]).collect();
    if active.is_empty() {
        return Err(Error::NoEdges);
    }
    let active: Index = Arc::from(active);
    let inv_tau = 1.0 / cfg.temperature;

    let s_hat = tape.l2_normalize_rows(s)?;
    let a = tape.gather_rows(s_hat, &edges.src)?;
    let b = tape.gather_rows(s_hat, &edges.dst)?;
    let pos = tape.row_dot(a, b)?;
    let pos = tape.scale(pos, inv_tau)?;
    let pos = tape.exp(pos)?;
    let weight = tape.add_scalar(alpha, cfg.epsilon)?;
    let pos = tape.mul(weight, pos)?;
    let positive = tape.scatter_add_rows(pos, &edges.dst, n)?;

    let plan = shard_decision(n, pool.per_node, d, cfg.shard_elem_threshold)?;
    let (negative, sharded, chunks_used) = match negatives {
        NegativeEval::Auto => (
            tape.exp_similarity_sum(s_hat, &pool.indices, pool.per_node, inv_tau, plan.chunk_size)?,
            plan.sharded,
            plan.chunks(n),
        ),
        NegativeEval::Chunked(c) => {
            let c = c.max(1);
            (
                tape.exp_similarity_sum(s_hat, &pool.indices, pool.per_node, inv_tau, c)?,
                c < n,
                n.div_ceil(c),
            )
        }
        NegativeEval::Composed => (composed_negative_sum(tape, s_hat, pool, inv_tau)?, false, 1),
    };

    let positive = tape.gather_rows(positive, &active)?;
    let negative = tape.gather_rows(negative, &active)?;
    let both = tape.add(positive, negative)?;
    let log_both = tape.log(both)?;
    let log_pos = tape.log(positive)?;
    let per_node = tape.sub(log_both, log_pos)?;
    let contrastive = tape.mean(per_node)?;
    let sparsity = tape.mean(alpha)?;
    let penalty = tape.scale(sparsity, cfg.sparsity_lambda)?;
    let total = tape.add(contrastive, penalty)?;

    let breakdown = LossBreakdown {
        contrastive: tape.value(contrastive).item(),
        sparsity: tape.value(sparsity).item(),
        total: tape.value(total).item(),
        sharded,
        chunks_used,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: None });
    }
    Ok((
        LossVars {
            total,
            contrastive,
            sparsity,
        },
        breakdown,
    ))
}
