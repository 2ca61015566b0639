//! Flat `key = value` pipeline configuration.
//!
//! Grammar: one `key = value` per line; blank lines and lines starting with
//! `#` are ignored; a later line overrides an earlier one. Unknown keys are
//! rejected. [`PipelineConfig::to_text`] writes every key and parses back to
//! the same configuration.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | seeds routing, training and Louvain |
//! | `encoder` | auto | `auto`, `isolating` or `densifying` |
//! | `degree_threshold` | 20 | route to isolating above this mean degree |
//! | `homophily_threshold` | 1.5 | route to isolating below this `H_R` |
//! | `sparsity_threshold` | 0.85 | reported only |
//! | `router_samples` | auto | random pairs for `H_R` (`auto` = 10 N, at most 10^6) |
//! | `epochs` | 200 | training epochs |
//! | `lr` | 5e-4 | Adam learning rate |
//! | `weight_decay` | 5e-4 | decoupled weight decay |
//! | `adam_beta1` / `adam_beta2` / `adam_eps` | 0.9 / 0.999 / 1e-8 | Adam constants |
//! | `steps` | 2 | diffusion steps `K` |
//! | `temperature` | 0.1 | contrastive temperature `tau` |
//! | `lambda` | 1e-4 | attention sparsity weight |
//! | `negatives` | 256 | negatives per node `P` |
//! | `epsilon` | 1e-8 | added to attention in the positive term |
//! | `shard_threshold` | 200000000 | shard the negative term above `N * P * d` elements |
//! | `embed_dim` | 128 | embedding width `d` |
//! | `mlp_depth` | 2 | isolating encoder layers |
//! | `k_min` / `k_max` | 5 / 30 | bounds of the per-node candidate count |
//! | `delta` | 0.15 | minimum similarity of a kept edge |
//! | `chunk_rows` | 4096 | rows per similarity block |
//! | `one_sided` | false | keep edges selected by either endpoint |
//! | `resolution` | 1 | Louvain resolution |
//! | `max_passes` | 20 | Louvain passes |
//! | `min_gain` | 1e-7 | stop once a pass gains less modularity |

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::clustering::LouvainConfig;
use crate::error::{Error, Result};
use crate::extraction::ExtractConfig;
use crate::router::{Pathway, RouterConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub router: RouterConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
    pub louvain: LouvainConfig,
}

pub const KEYS: &[&str] = &[
    "seed",
    "encoder",
    "degree_threshold",
    "homophily_threshold",
    "sparsity_threshold",
    "router_samples",
    "epochs",
    "lr",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "steps",
    "temperature",
    "lambda",
    "negatives",
    "epsilon",
    "shard_threshold",
    "embed_dim",
    "mlp_depth",
    "k_min",
    "k_max",
    "delta",
    "chunk_rows",
    "one_sided",
    "resolution",
    "max_passes",
    "min_gain",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "encoder" => {
                self.router.force = match v {
                    "auto" => None,
                    other => Some(Pathway::from_str(other)?),
                }
            }
            "degree_threshold" => self.router.degree_threshold = parse(key, v)?,
            "homophily_threshold" => self.router.homophily_threshold = parse(key, v)?,
            "sparsity_threshold" => self.router.sparsity_threshold = parse(key, v)?,
            "router_samples" => {
                self.router.random_pair_samples = match v {
                    "auto" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "epochs" => self.train.epochs = parse(key, v)?,
            "lr" => self.train.learning_rate = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "adam_beta1" => self.train.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam_eps = parse(key, v)?,
            "steps" => self.train.steps = parse(key, v)?,
            "temperature" => self.train.loss.temperature = parse(key, v)?,
            "lambda" => self.train.loss.sparsity_lambda = parse(key, v)?,
            "negatives" => self.train.loss.neg_per_node = parse(key, v)?,
            "epsilon" => self.train.loss.epsilon = parse(key, v)?,
            "shard_threshold" => self.train.loss.shard_elem_threshold = parse(key, v)?,
            "embed_dim" => self.train.embed_dim = parse(key, v)?,
            "mlp_depth" => self.train.mlp_depth = parse(key, v)?,
            "k_min" => self.extract.k_min = parse(key, v)?,
            "k_max" => self.extract.k_max = parse(key, v)?,
            "delta" => self.extract.delta = parse(key, v)?,
            "chunk_rows" => self.extract.chunk_rows = parse(key, v)?,
            "one_sided" => self.extract.one_sided = parse(key, v)?,
            "resolution" => self.louvain.resolution = parse(key, v)?,
            "max_passes" => self.louvain.max_passes = parse(key, v)?,
            "min_gain" => self.louvain.min_modularity_gain = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.router.validate()?;
        self.train_config().validate()?;
        self.extract.validate()?;
        if !(self.louvain.resolution > 0.0) {
            return Err(Error::Config("resolution must be > 0".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn louvain_config(&self) -> LouvainConfig {
        LouvainConfig {
            seed: self.seed,
            ..self.louvain.clone()
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "encoder" => self.router.force.map_or("auto".into(), |p| p.to_string()),
            "degree_threshold" => self.router.degree_threshold.to_string(),
            "homophily_threshold" => self.router.homophily_threshold.to_string(),
            "sparsity_threshold" => self.router.sparsity_threshold.to_string(),
            "router_samples" => self.router.random_pair_samples.map_or("auto".into(), |n| n.to_string()),
            "epochs" => t.epochs.to_string(),
            "lr" => t.learning_rate.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "adam_beta1" => t.adam_beta1.to_string(),
            "adam_beta2" => t.adam_beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "steps" => t.steps.to_string(),
            "temperature" => t.loss.temperature.to_string(),
            "lambda" => t.loss.sparsity_lambda.to_string(),
            "negatives" => t.loss.neg_per_node.to_string(),
            "epsilon" => t.loss.epsilon.to_string(),
            "shard_threshold" => t.loss.shard_elem_threshold.to_string(),
            "embed_dim" => t.embed_dim.to_string(),
            "mlp_depth" => t.mlp_depth.to_string(),
            "k_min" => self.extract.k_min.to_string(),
            "k_max" => self.extract.k_max.to_string(),
            "delta" => self.extract.delta.to_string(),
            "chunk_rows" => self.extract.chunk_rows.to_string(),
            "one_sided" => self.extract.one_sided.to_string(),
            "resolution" => self.louvain.resolution.to_string(),
            "max_passes" => self.louvain.max_passes.to_string(),
            "min_gain" => self.louvain.min_modularity_gain.to_string(),
            _ => return None,
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}
