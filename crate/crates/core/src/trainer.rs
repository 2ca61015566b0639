//! Full-batch training of encoder + diffusion with Adam.
//!
//! Every epoch draws a fresh negative pool, runs the whole graph forward,
//! back-propagates the loss and takes one Adam step. Weight decay is
//! decoupled: `w <- w - lr * wd * w` before the Adam update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contrastive::{compute_loss, sample_negatives, LossBreakdown, LossConfig, NegativePool};
use crate::diffusion::{diffuse, init_diffusion, DiffusionParams, EdgeAttention, EdgeIndex};
use crate::encoders::{encode, init_encoder, EncoderParams, DEFAULT_EMBED_DIM, DEFAULT_MLP_DEPTH};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::kernel::{KernelError, Tape, Tensor, Var};
use crate::router::RouterReport;
use crate::Rng;

const STREAM_ENCODER: u64 = 1;
const STREAM_DIFFUSION: u64 = 2;
const STREAM_NEGATIVES: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Diffusion steps `K`.
    pub steps: usize,
    pub embed_dim: usize,
    pub mlp_depth: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            steps: 2,
            embed_dim: DEFAULT_EMBED_DIM,
            mlp_depth: DEFAULT_MLP_DEPTH,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        if self.embed_dim == 0 || self.mlp_depth == 0 {
            return Err(Error::Config("embedding dimension and depth must be >= 1".into()));
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One Adam step over every tensor in `params`; a missing gradient counts
/// as zero.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<&Tensor>], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let w = p.data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..w.len() {
            let g = grads[i].map_or(0.0, |g| g.data()[j]);
            w[j] -= cfg.learning_rate * cfg.weight_decay * w[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            w[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub diffusion: DiffusionParams,
}

impl ModelParams {
    pub fn init(route: &RouterReport, in_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        let rng = Rng::new(cfg.seed);
        let encoder = init_encoder(
            route.decision,
            in_dim,
            cfg.embed_dim,
            cfg.mlp_depth,
            &mut rng.substream(STREAM_ENCODER),
        )?;
        let diffusion = init_diffusion(cfg.embed_dim, cfg.steps, &mut rng.substream(STREAM_DIFFUSION));
        Ok(Self { encoder, diffusion })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut all = self.encoder.tensors();
        all.extend(self.diffusion.tensors());
        all
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut all = self.encoder.tensors_mut();
        all.extend(self.diffusion.tensors_mut());
        all
    }

    /// FNV-1a over the bit patterns of every parameter, as 16 hex digits.
    pub fn snapshot_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for x in t.data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        format!("{h:016x}")
    }
}

/// Output of one forward pass: tape handles for the final embedding, the
/// attention column and every parameter (in [`ModelParams::tensors`] order).
struct Forward {
    s: Var,
    alpha: Var,
    params: Vec<Var>,
}

fn forward(model: &ModelParams, g: &Graph, x: &FeatureMatrix, edges: &EdgeIndex, tape: &mut Tape) -> Result<Forward> {
    let enc = model.encoder.bind(tape);
    let dif = model.diffusion.bind(tape);
    let z0 = encode(g, x, &enc, tape)?;
    let (s, alpha) = diffuse(z0, edges, &dif, tape)?;
    let mut params = enc.vars();
    params.extend(dif.vars());
    Ok(Forward { s, alpha, params })
}

/// Loss of `model` on a given negative pool, without touching the parameters.
pub fn evaluate_loss(model: &ModelParams, g: &Graph, x: &FeatureMatrix, pool: &NegativePool, cfg: &LossConfig) -> Result<LossBreakdown> {
    x.check_rows(g)?;
    let edges = EdgeIndex::new(g);
    let mut tape = Tape::new();
    let f = forward(model, g, x, &edges, &mut tape)?;
    compute_loss(f.s, f.alpha, &edges, pool, cfg, &mut tape).map(|(_, b)| b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LossBreakdown>,
    pub forward_s: f64,
    pub backward_s: f64,
    pub update_s: f64,
    pub total_s: f64,
    pub snapshot_id: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Final embedding `S`, `N x embed_dim`.
    pub embedding: Tensor,
    pub attention: EdgeAttention,
    pub report: TrainReport,
}

fn tag_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss { .. } | Error::Kernel(KernelError::NonFinite { .. }) => Error::NonFiniteLoss { epoch: Some(epoch) },
        other => other,
    }
}

pub fn train(g: &Graph, x: &FeatureMatrix, route: &RouterReport, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    x.check_rows(g)?;
    if g.n_edges() == 0 {
        return Err(Error::NoEdges);
    }
    let started = Instant::now();
    let mut model = ModelParams::init(route, x.dim(), cfg)?;
    let edges = EdgeIndex::new(g);
    let adam = cfg.adam();
    let mut state = AdamState::new(&model.tensors());
    let mut neg_rng = Rng::new(cfg.seed).substream(STREAM_NEGATIVES);
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut forward_s, mut backward_s, mut update_s) = (0.0, 0.0, 0.0);
    let mut tape = Tape::new();

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        tape.clear();
        let pool = sample_negatives(g.n_nodes(), cfg.loss.neg_per_node, &mut neg_rng)?;
        let step = forward(&model, g, x, &edges, &mut tape)
            .and_then(|f| compute_loss(f.s, f.alpha, &edges, &pool, &cfg.loss, &mut tape).map(|l| (f, l)));
        let (fwd, (loss, breakdown)) = step.map_err(|e| tag_epoch(e, epoch))?;
        let t1 = Instant::now();
        tape.backward(loss.total).map_err(|e| tag_epoch(e.into(), epoch))?;
        let t2 = Instant::now();
        let grads: Vec<Option<&Tensor>> = fwd.params.iter().map(|&v| tape.grad(v)).collect();
        adam_step(&mut model.tensors_mut(), &grads, &mut state, &adam);
        let t3 = Instant::now();
        forward_s += (t1 - t0).as_secs_f64();
        backward_s += (t2 - t1).as_secs_f64();
        update_s += (t3 - t2).as_secs_f64();
        log::debug!(
            "epoch {epoch}: loss={:.6} contrastive={:.6} sparsity={:.6}",
            breakdown.total,
            breakdown.contrastive,
            breakdown.sparsity
        );
        history.push(breakdown);
    }

    tape.clear();
    let fwd = forward(&model, g, x, &edges, &mut tape)?;
    let embedding = tape.value(fwd.s).clone();
    let attention = EdgeAttention::from_tape(&tape, fwd.alpha, &edges);
    let report = TrainReport {
        history,
        forward_s,
        backward_s,
        update_s,
        total_s: started.elapsed().as_secs_f64(),
        snapshot_id: model.snapshot_id(),
    };
    log::info!(
        "trained {} epochs in {:.2}s, final loss {:.6}",
        cfg.epochs,
        report.total_s,
        report.history.last().map_or(f64::NAN, |b| b.total)
    );
    Ok(TrainOutput {
        params: model,
        embedding,
        attention,
        report,
    })
}
