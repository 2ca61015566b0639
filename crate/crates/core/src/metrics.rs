//! Partition quality against ground truth, and run reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information `2 I(Y; C) / (H(Y) + H(C))`, natural logs.
/// Two single-cluster partitions score 1.
pub fn nmi(truth: &Partition, pred: &Partition) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "truth covers {} nodes, prediction {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("partitions are empty"));
    }
    let n = truth.len() as f64;
    let mut a = vec![0usize; truth.n_communities()];
    let mut b = vec![0usize; pred.n_communities()];
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&y, &c) in truth.assignment().iter().zip(pred.assignment()) {
        a[y] += 1;
        b[c] += 1;
        *joint.entry((y, c)).or_insert(0) += 1;
    }
    let h_y = entropy(a.iter().copied(), n);
    let h_c = entropy(b.iter().copied(), n);
    if h_y + h_c == 0.0 {
        return Ok(1.0);
    }
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mutual: f64 = cells
        .into_iter()
        .map(|((y, c), k)| {
            let k = k as f64;
            k / n * (n * k / (a[y] as f64 * b[c] as f64)).ln()
        })
        .sum();
    Ok((2.0 * mutual / (h_y + h_c)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    /// Routing.
    pub phase1_s: f64,
    /// Training.
    pub phase2_s: f64,
    /// Extraction and clustering.
    pub phase3_s: f64,
    pub total_s: f64,
}

/// `n / seconds`, or 0 when no time was measured.
pub fn throughput(n_nodes: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        n_nodes as f64 / seconds
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_nodes: usize,
    pub nmi: Option<f64>,
    pub n_communities_pred: usize,
    pub n_communities_true: Option<usize>,
    pub modularity_pred: Option<f64>,
    pub timings: PhaseTimings,
    pub throughput_nodes_per_second: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Flat `key=value` lines; absent values are omitted.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("n_nodes={}\n", self.n_nodes);
        if let Some(v) = self.nmi {
            out += &format!("nmi={v}\n");
        }
        out += &format!("n_communities_pred={}\n", self.n_communities_pred);
        if let Some(v) = self.n_communities_true {
            out += &format!("n_communities_true={v}\n");
        }
        if let Some(v) = self.modularity_pred {
            out += &format!("modularity_pred={v}\n");
        }
        out
    }

    /// Phase timings and throughput as `key=value` lines.
    pub fn timing_key_values(&self) -> String {
        let t = &self.timings;
        format!(
            "phase1_s={}\nphase2_s={}\nphase3_s={}\ntotal_s={}\nnodes_per_s={}\n",
            t.phase1_s, t.phase2_s, t.phase3_s, t.total_s, self.throughput_nodes_per_second
        )
    }
}

pub fn evaluate(truth: Option<&Partition>, pred: &Partition, modularity_pred: Option<f64>, timings: PhaseTimings) -> Result<EvalReport> {
    let nmi = truth.map(|t| nmi(t, pred)).transpose()?;
    Ok(EvalReport {
        n_nodes: pred.len(),
        nmi,
        n_communities_pred: pred.n_communities(),
        n_communities_true: truth.map(Partition::n_communities),
        modularity_pred,
        timings,
        throughput_nodes_per_second: throughput(pred.len(), timings.total_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant() {
        let p = Partition::new([0, 0, 1, 1, 2]);
        assert!((nmi(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&p, &Partition::new([0; 5])).unwrap(), 0.0);
        assert_eq!(nmi(&Partition::new([0; 5]), &Partition::new([3; 5])).unwrap(), 1.0);
    }

    #[test]
    fn independent_partitions() {
        // Every joint cell holds n_a n_b / n, so each log term vanishes.
        let v = nmi(&Partition::new([0, 0, 1, 1]), &Partition::new([0, 1, 0, 1])).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn hand_computed_value() {
        // truth {0,1}{2,3}, pred {0}{1,2,3}: H(Y) = ln 2,
        // H(C) = -(1/4 ln 1/4 + 3/4 ln 3/4), I = 1/4 ln 2 + 1/4 ln(2/3) + 1/2 ln(4/3)
        let h_y = 2f64.ln();
        let h_c = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let i = 0.25 * 2f64.ln() + 0.25 * (2.0f64 / 3.0).ln() + 0.5 * (4.0f64 / 3.0).ln();
        let want = 2.0 * i / (h_y + h_c);
        let got = nmi(&Partition::new([0, 0, 1, 1]), &Partition::new([0, 1, 1, 1])).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn length_mismatch() {
        assert!(nmi(&Partition::new([0, 1]), &Partition::new([0])).is_err());
    }

    #[test]
    fn report_throughput_and_json() {
        let pred = Partition::new((0..1000).map(|i| i % 3));
        let timings = PhaseTimings {
            phase1_s: 0.5,
            phase2_s: 1.0,
            phase3_s: 0.5,
            total_s: 2.0,
        };
        let r = evaluate(Some(&pred), &pred, Some(0.3), timings).unwrap();
        assert_eq!(r.throughput_nodes_per_second, 500.0);
        assert_eq!(r.nmi, Some(nmi(&pred, &pred).unwrap()));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
