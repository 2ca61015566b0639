//! Plain-text and binary file formats.
//!
//! | file | format |
//! |------|--------|
//! | edge list | `u v` per line, whitespace separated, `#` starts a comment |
//! | features (text) | CSV without header, row `i` = node `i` |
//! | features (binary) | `b"ECHF"`, `u64` rows, `u64` cols, `f32` row-major, little-endian |
//! | embeddings | `b"ECHE"`, `u64` rows, `u64` cols, `f32` row-major, little-endian |
//! | partition | one community id per line, line `i` = node `i` |
//! | similarity graph | `i j w` per line with `i < j` |
//! | attention dump | `u v alpha` per directed edge |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::extraction::SimilarityGraph;
use crate::graph::{Embeddings, FeatureMatrix, Graph, Partition};

pub const FEATURE_MAGIC: &[u8; 4] = b"ECHF";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"ECHE";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeListStats {
    pub lines: usize,
    pub self_loops_dropped: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_pairs(path: &Path) -> Result<Vec<(u64, u64)>> {
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let mut next = || -> Result<u64> {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_err(path, i + 1, "expected two node ids"))?;
            tok.parse::<u64>()
                .map_err(|_| parse_err(path, i + 1, format!("bad node id {tok:?}")))
        };
        let u = next()?;
        let v = next()?;
        pairs.push((u, v));
    }
    Ok(pairs)
}

/// Reads an edge list. With `zero_indexed == false` ids start at 1. Node
/// count is one past the largest id, so trailing isolated ids are kept.
pub fn load_edge_list(path: impl AsRef<Path>, zero_indexed: bool) -> Result<(Graph, EdgeListStats)> {
    let path = path.as_ref();
    let raw = read_pairs(path)?;
    let base = if zero_indexed { 0 } else { 1 };
    let mut pairs = Vec::with_capacity(raw.len());
    let mut n = 0usize;
    for (line, &(u, v)) in raw.iter().enumerate() {
        if u < base || v < base {
            return Err(parse_err(path, line + 1, "node id 0 in a one-indexed file"));
        }
        let (u, v) = ((u - base) as usize, (v - base) as usize);
        n = n.max(u + 1).max(v + 1);
        pairs.push((u, v));
    }
    let stats = EdgeListStats {
        lines: raw.len(),
        self_loops_dropped: pairs.iter().filter(|(u, v)| u == v).count(),
    };
    if stats.self_loops_dropped > 0 {
        log::warn!(
            "{}: dropped {} self-loop lines",
            path.display(),
            stats.self_loops_dropped
        );
    }
    Ok((Graph::from_edges(n, pairs), stats))
}

/// Reads an edge list with arbitrary (sparse) integer ids, relabeling them
/// to `0..n` in ascending order. Returns the graph and the external id of
/// each internal node.
pub fn load_edge_list_remapped(path: impl AsRef<Path>) -> Result<(Graph, Vec<u64>)> {
    let raw = read_pairs(path.as_ref())?;
    let mut ids: Vec<u64> = raw.iter().flat_map(|&(u, v)| [u, v]).collect();
    ids.sort_unstable();
    ids.dedup();
    let index = |x: u64| ids.binary_search(&x).unwrap();
    let pairs: Vec<_> = raw.iter().map(|&(u, v)| (index(u), index(v))).collect();
    Ok((Graph::from_edges(ids.len(), pairs), ids))
}

pub fn save_edge_list(path: impl AsRef<Path>, g: &Graph) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for &(u, v) in g.edges() {
        writeln!(w, "{u} {v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                path: path.to_path_buf(),
                row: rows,
                expected,
                found: record.len(),
            });
        }
        for cell in record.iter() {
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, format!("non-numeric cell {cell:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(path, line, format!("non-finite cell {cell:?}")));
            }
            data.push(x);
        }
        rows += 1;
    }
    match dim {
        Some(d) if rows > 0 => FeatureMatrix::new(rows, d, data),
        _ => Err(Error::NoRows {
            path: path.to_path_buf(),
        }),
    }
}

pub fn save_features_csv(path: impl AsRef<Path>, x: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for i in 0..x.n_rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_f32_container(path: &Path, magic: &[u8; 4], rows: usize, cols: usize, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(magic).map_err(io)?;
    w.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(cols as u64).to_le_bytes()).map_err(io)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_f32_container(path: &Path, magic: &[u8; 4]) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Container {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 20 || &bytes[..4] != magic {
        return Err(bad(&format!(
            "missing {:?} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[20..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
        return Err(bad(&format!(
            "payload of {} bytes does not match {rows}x{cols} f32",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

pub fn save_features_binary(path: impl AsRef<Path>, x: &FeatureMatrix) -> Result<()> {
    write_f32_container(
        path.as_ref(),
        FEATURE_MAGIC,
        x.n_rows(),
        x.dim(),
        x.data().iter().map(|&v| v as f32),
    )
}

pub fn load_features_binary(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let (rows, cols, values) = read_f32_container(path, FEATURE_MAGIC)?;
    if rows == 0 {
        return Err(Error::NoRows {
            path: path.to_path_buf(),
        });
    }
    FeatureMatrix::new(rows, cols, values.into_iter().map(f64::from).collect()).map_err(|e| {
        Error::Container {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    })
}

/// Reads features in either format, sniffing the `ECHF` magic.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut head = [0u8; 4];
    let n = open(path)?
        .read(&mut head)
        .map_err(|e| Error::io(path, e))?;
    if n == 4 && &head == FEATURE_MAGIC {
        load_features_binary(path)
    } else {
        load_features_csv(path)
    }
}

pub fn save_embeddings(path: impl AsRef<Path>, e: &Embeddings) -> Result<()> {
    write_f32_container(
        path.as_ref(),
        EMBEDDING_MAGIC,
        e.n_rows(),
        e.dim(),
        e.data().iter().copied(),
    )
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    let (rows, cols, values) = read_f32_container(path, EMBEDDING_MAGIC)?;
    Embeddings::new(rows, cols, values).map_err(|e| Error::Container {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn save_partition(path: impl AsRef<Path>, p: &Partition) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for &c in p.assignment() {
        writeln!(w, "{c}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let path = path.as_ref();
    let mut labels = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        labels.push(
            tok.parse::<usize>()
                .map_err(|_| parse_err(path, i + 1, format!("bad community id {tok:?}")))?,
        );
    }
    Ok(Partition::new(labels))
}

pub fn save_similarity_graph(path: impl AsRef<Path>, sg: &SimilarityGraph) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "# nodes {}", sg.n_nodes()).map_err(|e| Error::io(path, e))?;
    for &(i, j, wt) in sg.edges() {
        writeln!(w, "{i} {j} {wt}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `i j w` lines. The node count comes from a `# nodes N` header when
/// present, otherwise from the largest id.
pub fn load_similarity_graph(path: impl AsRef<Path>) -> Result<SimilarityGraph> {
    let path = path.as_ref();
    let mut n_nodes = None;
    let mut edges = Vec::new();
    let mut max_id = None;
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(n) = comment.trim().strip_prefix("nodes") {
                n_nodes = Some(
                    n.trim()
                        .parse::<usize>()
                        .map_err(|_| parse_err(path, i + 1, "bad node count"))?,
                );
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, i + 1, "expected `i j w`"));
        }
        let a: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(path, i + 1, "bad node id"))?;
        let b: usize = toks[1]
            .parse()
            .map_err(|_| parse_err(path, i + 1, "bad node id"))?;
        let wt: f32 = toks[2]
            .parse()
            .map_err(|_| parse_err(path, i + 1, "bad weight"))?;
        max_id = Some(max_id.unwrap_or(0).max(a).max(b));
        edges.push((a, b, wt));
    }
    let n = n_nodes.unwrap_or_else(|| max_id.map_or(0, |m| m + 1));
    if max_id.is_some_and(|m| m >= n) {
        return Err(parse_err(path, 0, "node id exceeds declared node count"));
    }
    Ok(SimilarityGraph::from_edges(n, edges))
}

/// Writes `u v alpha` for each directed edge `u -> v`.
pub fn save_attention(path: impl AsRef<Path>, src: &[usize], dst: &[usize], alpha: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for ((u, v), a) in src.iter().zip(dst).zip(alpha) {
        writeln!(w, "{u} {v} {a}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn edge_list_path() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _) = load_edge_list(write(&dir, "g", b"0 1\n1 2"), true).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn edge_list_dedup_and_loops() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _) = load_edge_list(write(&dir, "g", b"0 1\n1 0\n0 1"), true).unwrap();
        assert_eq!(g.n_edges(), 1);
        let (g, stats) = load_edge_list(write(&dir, "h", b"# c\n5 5\n0 1\n"), true).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(stats.self_loops_dropped, 1);
        assert_eq!(g.n_nodes(), 6);
    }

    #[test]
    fn edge_list_one_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _) = load_edge_list(write(&dir, "g", b"1 2\n2 3"), false).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn edge_list_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_edge_list(write(&dir, "g", b"0 1\n# ok\n2 x\n"), true).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn remapped_ids() {
        let dir = tempfile::tempdir().unwrap();
        let (g, ids) = load_edge_list_remapped(write(&dir, "g", b"100 7\n7 9000\n")).unwrap();
        assert_eq!(ids, vec![7, 100, 9000]);
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn features_csv() {
        let dir = tempfile::tempdir().unwrap();
        let x = load_features_csv(write(&dir, "a", b"1,0\n0,1")).unwrap();
        assert_eq!((x.n_rows(), x.dim()), (2, 2));
        assert_eq!(x.data(), &[1.0, 0.0, 0.0, 1.0]);
        let x = load_features_csv(write(&dir, "b", b"1,2,3")).unwrap();
        assert_eq!((x.n_rows(), x.dim()), (1, 3));
    }

    #[test]
    fn features_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let e = load_features_csv(write(&dir, "a", b"")).unwrap_err();
        assert!(e.to_string().contains("no rows"), "{e}");
        assert!(matches!(
            load_features_csv(write(&dir, "b", b"1,2\n3\n")),
            Err(Error::Ragged { row: 1, .. })
        ));
        assert!(matches!(
            load_features_csv(write(&dir, "c", b"1,2\n3,z\n")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn binary_features_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let x = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.5]).unwrap();
        save_features_binary(&p, &x).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ECHF");
        assert_eq!(&bytes[4..12], &2u64.to_le_bytes());
        assert_eq!(&bytes[12..20], &3u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 6 * 4);
        assert_eq!(load_features(&p).unwrap(), x);
    }

    #[test]
    fn partition_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.txt");
        save_partition(&p, &Partition::new([0, 0, 1])).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0\n0\n1\n");
        fs::write(&p, "2\n2\n7\n").unwrap();
        assert_eq!(load_partition(&p).unwrap().assignment(), &[0, 0, 1]);
        fs::write(&p, "0\na\n").unwrap();
        assert!(load_partition(&p).is_err());
    }

    #[test]
    fn similarity_graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wedges");
        let sg = SimilarityGraph::from_edges(5, vec![(0, 1, 0.25), (1, 3, 0.123_456_79)]);
        save_similarity_graph(&p, &sg).unwrap();
        let back = load_similarity_graph(&p).unwrap();
        assert_eq!(back, sg);
    }
}
