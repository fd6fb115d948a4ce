//! Soft-to-hard assignment conversion, cluster counting and
//! clustering-quality metrics.

use crate::graph::{hard_modularity, Graph, GraphError};
use crate::losses::{AssignmentMatrix, Bounds};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("partitions have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("ARI requires at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A hard node-to-cluster labeling. Ids need not be contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition(Vec<usize>);

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Metrics of one assignment against its graph and bounds.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub predicted_cluster_count: usize,
    /// Agreement with the ground truth, when labels exist.
    pub ari: Option<f64>,
    pub hard_modularity: f64,
    /// Whether `lower <= predicted_cluster_count <= upper`.
    pub within_bounds: bool,
}

/// Labels each node with its row argmax; ties break to the lowest column.
pub fn hard_assign(s: &AssignmentMatrix) -> Partition {
    let m = s.matrix();
    let labels = m
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Partition::new(labels)
}

/// Number of distinct labels present.
pub fn count_clusters(p: &Partition) -> usize {
    p.labels().iter().collect::<HashSet<_>>().len()
}

fn binom2(x: u128) -> u128 {
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand Index between two partitions.
///
/// Pair counts (the contingency table, its row and column sums, and all
/// choose-2 terms) are exact integers; only the final ratio is a float.
/// Returns 1.0 when both partitions are trivially identical (the usual
/// convention for a vanishing denominator).
pub fn ari(a: &Partition, b: &Partition) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewNodes(n));
    }
    let mut contingency: HashMap<(usize, usize), u128> = HashMap::new();
    let mut row_sums: HashMap<usize, u128> = HashMap::new();
    let mut col_sums: HashMap<usize, u128> = HashMap::new();
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        *contingency.entry((la, lb)).or_insert(0) += 1;
        *row_sums.entry(la).or_insert(0) += 1;
        *col_sums.entry(lb).or_insert(0) += 1;
    }
    let sum_cells: u128 = contingency.values().map(|&c| binom2(c)).sum();
    let sum_a: u128 = row_sums.values().map(|&c| binom2(c)).sum();
    let sum_b: u128 = col_sums.values().map(|&c| binom2(c)).sum();
    let total = binom2(n as u128);
    // ARI = (sum_cells − sum_a·sum_b/total) / ((sum_a+sum_b)/2 − sum_a·sum_b/total),
    // cleared of denominators: 2(total·sum_cells − sum_a·sum_b) /
    // (total·(sum_a+sum_b) − 2·sum_a·sum_b).
    let numerator = 2 * (total as i128 * sum_cells as i128 - (sum_a * sum_b) as i128);
    let denominator = total as i128 * (sum_a + sum_b) as i128 - 2 * (sum_a * sum_b) as i128;
    if denominator == 0 {
        return Ok(1.0);
    }
    Ok(numerator as f64 / denominator as f64)
}

/// Bundles the reported metrics for one soft assignment: hard cluster
/// count, bounds check, hard modularity and (when labels are available) the
/// ARI. `ground_truth` falls back to the graph's own labels.
pub fn evaluate(
    g: &Graph,
    s: &AssignmentMatrix,
    bounds: &Bounds,
    ground_truth: Option<&[usize]>,
) -> Result<EvalReport, EvalError> {
    let partition = hard_assign(s);
    let predicted_cluster_count = count_clusters(&partition);
    let q = hard_modularity(g, partition.labels())?;
    let truth = ground_truth.or_else(|| g.labels());
    let ari_value = match truth {
        Some(t) => Some(ari(&partition, &Partition::new(t.to_vec()))?),
        None => None,
    };
    Ok(EvalReport {
        predicted_cluster_count,
        ari: ari_value,
        hard_modularity: q,
        within_bounds: bounds.lower <= predicted_cluster_count
            && predicted_cluster_count <= bounds.upper,
    })
}

/// Brute-force ARI over all node pairs, classified as same/different in
/// each partition. Independent of the contingency-table route; exposed for
/// the acceptance suite.
pub fn ari_pair_bruteforce(a: &Partition, b: &Partition) -> f64 {
    let n = a.len();
    let (mut n11, mut n10, mut n01, mut n00) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..n {
        for j in (i + 1)..n {
            let same_a = a.labels()[i] == a.labels()[j];
            let same_b = b.labels()[i] == b.labels()[j];
            match (same_a, same_b) {
                (true, true) => n11 += 1,
                (true, false) => n10 += 1,
                (false, true) => n01 += 1,
                (false, false) => n00 += 1,
            }
        }
    }
    let numerator = 2 * (n11 * n00 - n10 * n01);
    let denominator = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
    if denominator == 0 {
        return 1.0;
    }
    numerator as f64 / denominator as f64
}
