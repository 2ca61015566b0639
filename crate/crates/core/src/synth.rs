//! LFR-style planted-partition graphs and noisy community features.
//!
//! Degrees follow a power law truncated at `max_degree` whose lower cutoff
//! is solved for so the mean matches `mean_degree`; community sizes follow a
//! second power law on `[min_community, max_community]`. Each node sends
//! `round(mu * k)` of its stubs outside its community and the rest inside.
//! Both stub sets are paired by a configuration model that rejects
//! self-loops and repeated edges, reshuffles the leftovers a bounded number
//! of times, then splices the remaining stubs into existing edges.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, Partition};
use crate::Rng;

const SHUFFLE_ROUNDS: usize = 50;
const SPLICE_TRIES: usize = 200;
const SIZE_ATTEMPTS: usize = 1000;
/// Largest share of stubs that may stay unpaired.
const MAX_DROPPED_STUBS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfrConfig {
    pub n: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub mu: f64,
    pub degree_exponent: f64,
    pub community_exponent: f64,
    pub min_community: usize,
    pub max_community: usize,
    pub seed: u64,
}

impl Default for LfrConfig {
    fn default() -> Self {
        Self {
            n: 500,
            mean_degree: 15.0,
            max_degree: 50,
            mu: 0.5,
            degree_exponent: 2.0,
            community_exponent: 1.0,
            min_community: 20,
            max_community: 100,
            seed: 0,
        }
    }
}

impl LfrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config("mu must lie in [0, 1]".into()));
        }
        if self.min_community == 0 || self.min_community > self.max_community || self.max_community > self.n {
            return Err(Error::Config("need 1 <= min_community <= max_community <= n".into()));
        }
        if self.max_degree == 0 || !(self.mean_degree >= 1.0) || self.mean_degree > self.max_degree as f64 {
            return Err(Error::Config("need 1 <= mean_degree <= max_degree".into()));
        }
        if !(self.degree_exponent >= 0.0 && self.community_exponent >= 0.0) {
            return Err(Error::Config("exponents must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSynthConfig {
    pub noise_sigma: f64,
    pub include_degree: bool,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.5,
            include_degree: true,
        }
    }
}

/// Inverse-CDF draw from `x^-gamma` on `[lo, hi]`.
fn power_law(rng: &mut Rng, lo: f64, hi: f64, gamma: f64) -> f64 {
    let u = rng.next_f64();
    if (gamma - 1.0).abs() < 1e-9 {
        lo * (hi / lo).powf(u)
    } else {
        let e = 1.0 - gamma;
        (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
    }
}

/// Mean of the continuous power law `x^-gamma` on `[lo, hi]`.
fn power_law_mean(lo: f64, hi: f64, gamma: f64) -> f64 {
    if hi - lo < 1e-12 {
        return lo;
    }
    let g1 = (gamma - 1.0).abs() < 1e-9;
    let g2 = (gamma - 2.0).abs() < 1e-9;
    if g1 {
        (hi - lo) / (hi / lo).ln()
    } else if g2 {
        (hi / lo).ln() / (1.0 / lo - 1.0 / hi)
    } else {
        (1.0 - gamma) / (2.0 - gamma) * (hi.powf(2.0 - gamma) - lo.powf(2.0 - gamma)) / (hi.powf(1.0 - gamma) - lo.powf(1.0 - gamma))
    }
}

fn sample_degrees(cfg: &LfrConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let hi = cfg.max_degree as f64;
    let gamma = cfg.degree_exponent;
    if power_law_mean(1.0, hi, gamma) > cfg.mean_degree {
        return Err(Error::Infeasible(format!(
            "mean degree {} is below the smallest mean reachable with exponent {gamma}",
            cfg.mean_degree
        )));
    }
    let (mut a, mut b) = (1.0, hi);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if power_law_mean(mid, hi, gamma) < cfg.mean_degree {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lo = 0.5 * (a + b);
    let mut degrees: Vec<usize> = (0..cfg.n)
        .map(|_| (power_law(rng, lo, hi, gamma).round() as usize).clamp(1, cfg.max_degree))
        .collect();
    if degrees.iter().sum::<usize>() % 2 == 1 {
        let i = degrees.iter().position(|&k| k < cfg.max_degree).unwrap_or(0);
        if degrees[i] < cfg.max_degree {
            degrees[i] += 1;
        } else {
            degrees[i] -= 1;
        }
    }
    Ok(degrees)
}

fn sample_sizes(cfg: &LfrConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let (lo, hi) = (cfg.min_community as f64, cfg.max_community as f64);
    for _ in 0..SIZE_ATTEMPTS {
        let mut sizes = Vec::new();
        let mut total = 0;
        while total < cfg.n {
            let s = (power_law(rng, lo, hi + 0.5, cfg.community_exponent).floor() as usize)
                .clamp(cfg.min_community, cfg.max_community);
            sizes.push(s);
            total += s;
        }
        let mut excess = total - cfg.n;
        let mut progress = true;
        while excess > 0 && progress {
            progress = false;
            for s in sizes.iter_mut().rev() {
                if excess > 0 && *s > cfg.min_community {
                    *s -= 1;
                    excess -= 1;
                    progress = true;
                }
            }
        }
        if excess == 0 {
            return Ok(sizes);
        }
    }
    Err(Error::Infeasible(format!(
        "no community sizes in [{}, {}] sum to {}",
        cfg.min_community, cfg.max_community, cfg.n
    )))
}

/// Places nodes by descending internal degree into communities large enough
/// to hold their internal edges, falling back to the largest community with
/// room.
fn assign(internal: &[usize], sizes: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..internal.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(internal[i]));
    let mut room = sizes.to_vec();
    let mut comm = vec![0; internal.len()];
    for i in order {
        let fits: Vec<usize> = (0..sizes.len()).filter(|&c| room[c] > 0 && sizes[c] > internal[i]).collect();
        let c = if fits.is_empty() {
            (0..sizes.len())
                .filter(|&c| room[c] > 0)
                .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
                .expect("sizes sum to n")
        } else {
            fits[rng.below(fits.len())]
        };
        room[c] -= 1;
        comm[i] = c;
    }
    comm
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Pairs `stubs` into new edges accepted by `allowed`. Returns the number of
/// stubs left unpaired.
fn wire(stubs: Vec<usize>, allowed: &dyn Fn(usize, usize) -> bool, edges: &mut HashSet<(usize, usize)>, rng: &mut Rng) -> usize {
    let mut pending = stubs;
    let mut made: Vec<(usize, usize)> = Vec::new();
    let ok = |a: usize, b: usize, edges: &HashSet<(usize, usize)>| a != b && allowed(a, b) && !edges.contains(&key(a, b));
    for _ in 0..SHUFFLE_ROUNDS {
        if pending.len() < 2 {
            break;
        }
        rng.shuffle(&mut pending);
        let mut rest = Vec::new();
        for pair in pending.chunks(2) {
            match *pair {
                [a, b] if ok(a, b, edges) => {
                    edges.insert(key(a, b));
                    made.push((a, b));
                }
                _ => rest.extend_from_slice(pair),
            }
        }
        if rest.len() == pending.len() {
            pending = rest;
            break;
        }
        pending = rest;
    }
    // Splice each leftover pair (a, b) into an existing edge (x, y):
    // (x, y) becomes (a, x) + (b, y), keeping every other degree.
    let mut dropped = 0;
    let mut rest = pending.chunks_exact(2);
    for pair in &mut rest {
        let (a, b) = (pair[0], pair[1]);
        let mut placed = false;
        for _ in 0..SPLICE_TRIES {
            if made.is_empty() {
                break;
            }
            let e = rng.below(made.len());
            let (mut x, mut y) = made[e];
            if rng.below(2) == 1 {
                std::mem::swap(&mut x, &mut y);
            }
            if key(a, x) == key(b, y) || !ok(a, x, edges) || !ok(b, y, edges) {
                continue;
            }
            edges.remove(&key(x, y));
            made.swap_remove(e);
            edges.insert(key(a, x));
            edges.insert(key(b, y));
            made.push((a, x));
            made.push((b, y));
            placed = true;
            break;
        }
        if !placed {
            dropped += 2;
        }
    }
    dropped + rest.remainder().len()
}

/// Generates a graph and its planted partition.
pub fn generate_lfr(cfg: &LfrConfig) -> Result<(Graph, Partition)> {
    cfg.validate()?;
    let rng = Rng::new(cfg.seed);
    let degrees = sample_degrees(cfg, &mut rng.substream(1))?;
    let sizes = sample_sizes(cfg, &mut rng.substream(2))?;
    let mut external: Vec<usize> = degrees.iter().map(|&k| (cfg.mu * k as f64).round() as usize).collect();
    let mut internal: Vec<usize> = degrees.iter().zip(&external).map(|(&k, &e)| k - e).collect();
    let comm = assign(&internal, &sizes, &mut rng.substream(3));
    for (i, d) in internal.iter_mut().enumerate() {
        *d = (*d).min(sizes[comm[i]] - 1);
    }

    let mut members = vec![Vec::new(); sizes.len()];
    for (i, &c) in comm.iter().enumerate() {
        members[c].push(i);
    }
    for nodes in &members {
        if nodes.iter().map(|&i| internal[i]).sum::<usize>() % 2 == 1 {
            let &i = nodes.iter().max_by_key(|&&i| internal[i]).expect("non-empty");
            internal[i] -= 1;
        }
    }
    if external.iter().sum::<usize>() % 2 == 1 {
        let i = (0..cfg.n).max_by_key(|&i| external[i]).expect("n >= 1");
        external[i] -= 1;
    }

    let mut wiring = rng.substream(4);
    let mut edges = HashSet::new();
    let mut dropped = 0;
    for nodes in &members {
        let stubs: Vec<usize> = nodes.iter().flat_map(|&i| std::iter::repeat_n(i, internal[i])).collect();
        dropped += wire(stubs, &|_, _| true, &mut edges, &mut wiring);
    }
    let stubs: Vec<usize> = (0..cfg.n).flat_map(|i| std::iter::repeat_n(i, external[i])).collect();
    dropped += wire(stubs, &|a, b| comm[a] != comm[b], &mut edges, &mut wiring);

    let total: usize = internal.iter().chain(&external).sum();
    if dropped as f64 > MAX_DROPPED_STUBS * total.max(1) as f64 {
        return Err(Error::Infeasible(format!("{dropped} of {total} stubs could not be paired")));
    }
    let g = Graph::from_edges(cfg.n, edges);
    log::info!(
        "lfr: {} nodes, {} edges, {} communities, {dropped} stubs dropped",
        cfg.n,
        g.n_edges(),
        sizes.len()
    );
    Ok((g, Partition::new(comm)))
}

/// Mean over non-isolated nodes of the fraction of neighbours in another
/// community.
pub fn mixing_fraction(g: &Graph, p: &Partition) -> f64 {
    let fractions: Vec<f64> = (0..g.n_nodes())
        .filter(|&u| g.degree(u) > 0)
        .map(|u| {
            let out = g.neighbors(u).iter().filter(|&&v| p.community(v) != p.community(u)).count();
            out as f64 / g.degree(u) as f64
        })
        .collect();
    if fractions.is_empty() {
        0.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    }
}

/// Degree share (optional) and one-hot community columns, plus
/// `N(0, sigma^2)` noise on every entry.
pub fn synthesize_features(g: &Graph, truth: &Partition, cfg: &FeatureSynthConfig, rng: &mut Rng) -> Result<FeatureMatrix> {
    if truth.len() != g.n_nodes() {
        return Err(Error::Dimension(format!(
            "partition covers {} nodes, graph has {}",
            truth.len(),
            g.n_nodes()
        )));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::Config("noise sigma must be >= 0".into()));
    }
    let offset = usize::from(cfg.include_degree);
    let dim = offset + truth.n_communities();
    let max_degree = g.max_degree();
    let mut x = FeatureMatrix::zeros(g.n_nodes(), dim);
    let data = x.data_mut();
    for u in 0..g.n_nodes() {
        let row = &mut data[u * dim..(u + 1) * dim];
        if cfg.include_degree && max_degree > 0 {
            row[0] = g.degree(u) as f64 / max_degree as f64;
        }
        row[offset + truth.community(u)] = 1.0;
        if cfg.noise_sigma > 0.0 {
            for v in row.iter_mut() {
                *v += cfg.noise_sigma * rng.normal();
            }
        }
    }
    Ok(x)
}
