//! Sparse similarity graph from embeddings by chunked top-k cosine search.
//!
//! Rows are processed `chunk_rows` at a time: each chunk fills a
//! `chunk_rows x N` block of cosine similarities, every row keeps its
//! `k_i = clamp(deg_G(i), k_min, k_max)` best candidates (self excluded,
//! equal similarities resolved towards the smaller id), and the block is
//! reused for the next chunk. An edge `(i, j)` is kept when each endpoint
//! selected the other and the similarity is at least `delta`; with
//! `one_sided`, either selection suffices.
//!
//! Every similarity is computed by [`pair_similarity`]'s arithmetic, so the
//! output is bit-identical for every chunk size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Embeddings, Graph};

/// Upper bound on the similarity block, in `f32` values (256 MiB).
pub const MAX_BLOCK_VALUES: usize = 1 << 26;

const ROW_TILE: usize = 64;
const ROW_BLOCK: usize = 4;
const PANEL: usize = 16;
const PANELS_PER_BLOCK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub delta: f64,
    pub chunk_rows: usize,
    pub one_sided: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            k_min: 5,
            k_max: 30,
            delta: 0.15,
            chunk_rows: 4096,
            one_sided: false,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Config("need 1 <= k_min <= k_max".into()));
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::Config("delta must lie in [-1, 1]".into()));
        }
        if self.chunk_rows == 0 {
            return Err(Error::Config("chunk rows must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn adaptive_k(degree: usize, cfg: &ExtractConfig) -> usize {
    degree.clamp(cfg.k_min, cfg.k_max)
}

/// Undirected weighted graph stored as `(i, j, w)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f32)>,
}

impl SimilarityGraph {
    /// Orients every edge as `i < j`, drops self-edges and sorts. Repeated
    /// pairs keep the first weight.
    ///
    /// # Panics
    /// If an endpoint is `>= n_nodes`.
    pub fn from_edges(n_nodes: usize, edges: Vec<(usize, usize, f32)>) -> Self {
        let mut edges: Vec<_> = edges
            .into_iter()
            .filter(|&(i, j, _)| i != j)
            .map(|(i, j, w)| {
                assert!(i < n_nodes && j < n_nodes, "edge ({i}, {j}) outside {n_nodes} nodes");
                (i.min(j), i.max(j), w)
            })
            .collect();
        edges.sort_by_key(|&(i, j, _)| (i, j));
        edges.dedup_by_key(|&mut (i, j, _)| (i, j));
        Self { n_nodes, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f32)] {
        &self.edges
    }
}

/// Sequential sum of products: the order every similarity is computed in.
#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Unit-length copy of every row, rounded to `f32`; zero rows stay zero.
pub fn normalize_rows(emb: &Embeddings) -> (Vec<f32>, Vec<bool>) {
    let d = emb.dim();
    let mut out = vec![0.0f32; emb.n_rows() * d];
    let mut nonzero = vec![false; emb.n_rows()];
    for i in 0..emb.n_rows() {
        let row = emb.row(i);
        let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            nonzero[i] = true;
            for (o, &x) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = ((x as f64) / norm) as f32;
            }
        }
    }
    (out, nonzero)
}

/// Cosine similarity of rows `i` and `j` as the extractor computes it.
pub fn pair_similarity(emb: &Embeddings, i: usize, j: usize) -> f32 {
    let unit = |r: usize| {
        let row = emb.row(r);
        let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        row.iter()
            .map(|&x| if norm > 0.0 { ((x as f64) / norm) as f32 } else { 0.0 })
            .collect::<Vec<f32>>()
    };
    dot(&unit(i), &unit(j))
}

/// Rows regrouped into panels of [`PANEL`] rows stored column-major
/// (`panel[k * PANEL + l]` is entry `k` of row `p * PANEL + l`), zero padded.
fn to_panels(unit: &[f32], n: usize, d: usize) -> Vec<f32> {
    let n_panels = n.div_ceil(PANEL);
    let mut out = vec![0.0f32; n_panels * d * PANEL];
    for j in 0..n {
        let (p, l) = (j / PANEL, j % PANEL);
        for k in 0..d {
            out[p * d * PANEL + k * PANEL + l] = unit[j * d + k];
        }
    }
    out
}

/// Similarities of [`ROW_BLOCK`] rows against one panel. Each lane
/// accumulates one pair in [`dot`]'s order.
#[inline(always)]
fn panel_kernel(a: [&[f32]; ROW_BLOCK], panel: &[f32], d: usize) -> [[f32; PANEL]; ROW_BLOCK] {
    let mut acc = [[0.0f32; PANEL]; ROW_BLOCK];
    for k in 0..d {
        let b: &[f32; PANEL] = panel[k * PANEL..(k + 1) * PANEL].try_into().expect("panel width");
        for r in 0..ROW_BLOCK {
            let x = a[r][k];
            for l in 0..PANEL {
                acc[r][l] += x * b[l];
            }
        }
    }
    acc
}

#[inline(always)]
fn fill_tile_generic(unit: &[f32], panels: &[f32], d: usize, rows: std::ops::Range<usize>, out: &mut [f32], n: usize) {
    let row = |j: usize| &unit[j * d..(j + 1) * d];
    let n_panels = n.div_ceil(PANEL);
    for p0 in (0..n_panels).step_by(PANELS_PER_BLOCK) {
        let p1 = (p0 + PANELS_PER_BLOCK).min(n_panels);
        for r0 in (rows.start..rows.end).step_by(ROW_BLOCK) {
            let a: [&[f32]; ROW_BLOCK] = std::array::from_fn(|m| row((r0 + m).min(rows.end - 1)));
            for p in p0..p1 {
                let acc = panel_kernel(a, &panels[p * d * PANEL..(p + 1) * d * PANEL], d);
                let c0 = p * PANEL;
                let width = PANEL.min(n - c0);
                for (m, vals) in acc.iter().enumerate().take(rows.end - r0) {
                    let r = r0 + m - rows.start;
                    out[r * n + c0..r * n + c0 + width].copy_from_slice(&vals[..width]);
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_tile_avx2(unit: &[f32], panels: &[f32], d: usize, rows: std::ops::Range<usize>, out: &mut [f32], n: usize) {
    fill_tile_generic(unit, panels, d, rows, out, n)
}

/// Similarities of `rows` against all `n` rows into `out` (row-major,
/// `rows.len() x n`). Wider registers change speed only: there is no fused
/// multiply-add, so every lane performs the same roundings.
fn fill_tile(unit: &[f32], panels: &[f32], d: usize, rows: std::ops::Range<usize>, out: &mut [f32], n: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { fill_tile_avx2(unit, panels, d, rows, out, n) };
        return;
    }
    fill_tile_generic(unit, panels, d, rows, out, n)
}

/// Best `k` candidates of one row, best first. Entries equal to
/// `-inf` are never selected.
fn top_k(sims: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut best: Vec<(usize, f32)> = Vec::with_capacity(k + 1);
    let mut bar = f32::NEG_INFINITY;
    for (j, &s) in sims.iter().enumerate() {
        // Columns arrive in ascending id order, so an equal similarity never
        // displaces an entry already held.
        if s > bar {
            let pos = best.partition_point(|&(_, b)| b >= s);
            best.insert(pos, (j, s));
            if best.len() >= k {
                best.truncate(k);
                bar = best[k - 1].1;
            }
        }
    }
    best
}

/// Per-node candidate lists, sorted by node id.
pub fn candidate_lists(emb: &Embeddings, g: &Graph, cfg: &ExtractConfig) -> Result<Vec<Vec<(usize, f32)>>> {
    cfg.validate()?;
    let n = emb.n_rows();
    if n == 0 {
        return Err(Error::Empty("embedding has no rows"));
    }
    if g.n_nodes() != n {
        return Err(Error::Dimension(format!("embedding has {n} rows, graph has {} nodes", g.n_nodes())));
    }
    let d = emb.dim();
    let (unit, nonzero) = normalize_rows(emb);
    let panels = to_panels(&unit, n, d);
    let zero_rows: Vec<usize> = (0..n).filter(|&j| !nonzero[j]).collect();
    let chunk = cfg.chunk_rows.min((MAX_BLOCK_VALUES / n).max(1));
    let mut block = vec![0.0f32; chunk.min(n) * n];
    let mut lists = Vec::with_capacity(n);
    for r0 in (0..n).step_by(chunk) {
        let r1 = (r0 + chunk).min(n);
        let used = &mut block[..(r1 - r0) * n];
        let chunk_lists: Vec<Vec<(usize, f32)>> = used
            .par_chunks_mut(ROW_TILE * n)
            .enumerate()
            .flat_map_iter(|(t, tile)| {
                let a = r0 + t * ROW_TILE;
                let b = (a + ROW_TILE).min(r1);
                fill_tile(&unit, &panels, d, a..b, tile, n);
                let tile = &mut *tile;
                (a..b)
                    .map(|i| {
                        if !nonzero[i] {
                            return Vec::new();
                        }
                        let sims = &mut tile[(i - a) * n..(i - a + 1) * n];
                        sims[i] = f32::NEG_INFINITY;
                        for &j in &zero_rows {
                            sims[j] = f32::NEG_INFINITY;
                        }
                        let mut best = top_k(sims, adaptive_k(g.degree(i), cfg));
                        best.sort_unstable_by_key(|&(j, _)| j);
                        best
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        lists.extend(chunk_lists);
    }
    Ok(lists)
}

fn selects(lists: &[Vec<(usize, f32)>], i: usize, j: usize) -> bool {
    lists[i].binary_search_by_key(&j, |&(id, _)| id).is_ok()
}

pub fn extract_similarity_graph(emb: &Embeddings, g: &Graph, cfg: &ExtractConfig) -> Result<SimilarityGraph> {
    let lists = candidate_lists(emb, g, cfg)?;
    let delta = cfg.delta as f32;
    let mut edges = Vec::new();
    for (i, list) in lists.iter().enumerate() {
        for &(j, s) in list {
            let mutual = selects(&lists, j, i);
            let emit = if mutual { i < j } else { cfg.one_sided };
            if emit && s >= delta {
                edges.push((i, j, s));
            }
        }
    }
    let sg = SimilarityGraph::from_edges(emb.n_rows(), edges);
    log::info!("similarity graph: {} nodes, {} edges", sg.n_nodes(), sg.n_edges());
    Ok(sg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[&[f32]]) -> Embeddings {
        let d = rows[0].len();
        Embeddings::new(rows.len(), d, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn clamp() {
        let cfg = ExtractConfig::default();
        assert_eq!(adaptive_k(2, &cfg), 5);
        assert_eq!(adaptive_k(100, &cfg), 30);
        assert_eq!(adaptive_k(12, &cfg), 12);
    }

    #[test]
    fn identical_rows_form_triangle() {
        let e = emb(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let g = Graph::from_edges(3, []);
        let cfg = ExtractConfig {
            k_min: 2,
            delta: 0.5,
            ..ExtractConfig::default()
        };
        let sg = extract_similarity_graph(&e, &g, &cfg).unwrap();
        let pairs: Vec<_> = sg.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        for &(_, _, w) in sg.edges() {
            assert!((w - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_clusters_stay_apart() {
        let e = emb(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]]);
        let g = Graph::from_edges(4, []);
        let cfg = ExtractConfig {
            delta: 0.5,
            ..ExtractConfig::default()
        };
        let sg = extract_similarity_graph(&e, &g, &cfg).unwrap();
        let pairs: Vec<_> = sg.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn ties_prefer_smaller_ids() {
        let sims = [0.5f32, f32::NEG_INFINITY, 0.5, 0.5, 0.1];
        assert_eq!(top_k(&sims, 2), vec![(0, 0.5), (2, 0.5)]);
        let sims = [f32::NEG_INFINITY, 0.9, 0.5, 0.5, 0.1];
        assert_eq!(top_k(&sims, 2), vec![(1, 0.9), (2, 0.5)]);
        assert_eq!(top_k(&sims, 9).len(), 4);
    }

    #[test]
    fn zero_rows_have_no_edges() {
        let e = emb(&[&[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.1]]);
        let g = Graph::from_edges(3, []);
        let cfg = ExtractConfig {
            delta: -1.0,
            ..ExtractConfig::default()
        };
        let sg = extract_similarity_graph(&e, &g, &cfg).unwrap();
        assert!(sg.edges().iter().all(|&(i, j, _)| i != 1 && j != 1));
    }

    #[test]
    fn empty_input_is_an_error() {
        let e = Embeddings::new(0, 4, vec![]).unwrap();
        assert!(extract_similarity_graph(&e, &Graph::from_edges(0, []), &ExtractConfig::default()).is_err());
    }

    #[test]
    fn one_sided_is_a_superset() {
        let mut rng = crate::Rng::new(5);
        let data: Vec<f32> = (0..60 * 4).map(|_| rng.normal() as f32).collect();
        let e = Embeddings::new(60, 4, data).unwrap();
        let g = Graph::from_edges(60, []);
        let mutual = extract_similarity_graph(&e, &g, &ExtractConfig::default()).unwrap();
        let either = extract_similarity_graph(
            &e,
            &g,
            &ExtractConfig {
                one_sided: true,
                ..ExtractConfig::default()
            },
        )
        .unwrap();
        assert!(mutual.edges().iter().all(|x| either.edges().contains(x)));
        assert!(either.n_edges() > mutual.n_edges());
    }
}
