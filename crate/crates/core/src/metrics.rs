//! Clustering-quality and diagnostic measurements.
//!
//! ARI and AMI score a predicted assignment against ground truth through a
//! shared contingency table. AMI uses the exact expected mutual information
//! under the permutation (hypergeometric) model, accumulated with log-space
//! factorials so the terms stay finite for datasets in the thousands.

use rayon::prelude::*;
use thiserror::Error;

use crate::dbscan::{dbscan, ClusterAssignment, ClusterError, ClusterParams, PointLabel};
use crate::neighbors::RangeQueryEngine;
use crate::vecspace::{Dataset, DistanceMetric};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("assignment lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// How noise points enter the pair-counting universe.
///
/// The default folds all noise points of a partition into one shared
/// pseudo-cluster; the alternative gives each noise point its own
/// singleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseHandling {
    #[default]
    SharedCluster,
    Singletons,
}

/// Co-occurrence counts between ground-truth classes and predicted
/// clusters, with row/column marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_marginals: Vec<u64>,
    pub col_marginals: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    /// Builds the table from two assignments of equal length.
    pub fn build(
        truth: &ClusterAssignment,
        pred: &ClusterAssignment,
        noise: NoiseHandling,
    ) -> Result<Self, MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                left: truth.len(),
                right: pred.len(),
            });
        }
        let a = class_ids(truth, noise);
        let b = class_ids(pred, noise);
        let rows = a.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        let cols = b.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        let mut counts = vec![vec![0u64; cols]; rows];
        let mut row_marginals = vec![0u64; rows];
        let mut col_marginals = vec![0u64; cols];
        for (&i, &j) in a.iter().zip(&b) {
            counts[i][j] += 1;
            row_marginals[i] += 1;
            col_marginals[j] += 1;
        }
        Ok(ContingencyTable {
            counts,
            row_marginals,
            col_marginals,
            total: truth.len() as u64,
        })
    }
}

/// Dense class ids in order of first appearance; noise per the handling
/// convention.
fn class_ids(assignment: &ClusterAssignment, noise: NoiseHandling) -> Vec<usize> {
    let mut remap = std::collections::HashMap::new();
    let mut next = 0usize;
    let mut noise_id: Option<usize> = None;
    assignment
        .labels()
        .iter()
        .map(|l| match l {
            PointLabel::Cluster(c) => *remap.entry(*c).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            }),
            PointLabel::Noise | PointLabel::Undefined => match noise {
                NoiseHandling::SharedCluster => *noise_id.get_or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                }),
                NoiseHandling::Singletons => {
                    let id = next;
                    next += 1;
                    id
                }
            },
        })
        .collect()
}

fn comb2(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index in [-1, 1]; 1.0 for identical partitions.
pub fn adjusted_rand_index(
    truth: &ClusterAssignment,
    pred: &ClusterAssignment,
    noise: NoiseHandling,
) -> Result<f64, MetricsError> {
    let table = ContingencyTable::build(truth, pred, noise)?;
    Ok(ari_from_table(&table))
}

pub fn ari_from_table(table: &ContingencyTable) -> f64 {
    let index: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_a: f64 = table.row_marginals.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = table.col_marginals.iter().map(|&c| comb2(c)).sum();
    let pairs = comb2(table.total);
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / pairs;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // Degenerate marginals (e.g. both partitions trivial).
        1.0
    } else {
        (index - expected) / (max_index - expected)
    }
}

/// Adjusted mutual information with the exact hypergeometric expectation;
/// 1.0 for identical partitions, degenerate cases by convention.
pub fn adjusted_mutual_information(
    truth: &ClusterAssignment,
    pred: &ClusterAssignment,
    noise: NoiseHandling,
) -> Result<f64, MetricsError> {
    let table = ContingencyTable::build(truth, pred, noise)?;
    let identical = class_ids(truth, noise) == class_ids(pred, noise);
    Ok(ami_from_table(&table, identical))
}

pub fn ami_from_table(table: &ContingencyTable, identical: bool) -> f64 {
    if identical || table.total == 0 {
        // Identical partitions score exactly 1; the formula only reproduces
        // that up to rounding.
        return 1.0;
    }
    let n = table.total;
    let nf = n as f64;

    let mut mi = 0.0f64;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let pij = nij as f64 / nf;
                mi += pij
                    * ((nij as f64 * nf)
                        / (table.row_marginals[i] as f64 * table.col_marginals[j] as f64))
                        .ln();
            }
        }
    }
    let entropy = |marginals: &[u64]| -> f64 {
        marginals
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h_truth = entropy(&table.row_marginals);
    let h_pred = entropy(&table.col_marginals);

    let emi = expected_mutual_information(&table.row_marginals, &table.col_marginals, n);
    let denominator = 0.5 * (h_truth + h_pred) - emi;
    if denominator == 0.0 {
        // 0/0 by the formula; fixed by convention.
        return if identical { 1.0 } else { 0.0 };
    }
    (mi - emi) / denominator
}

/// Exact E[MI] under the permutation model, summed directly over the
/// hypergeometric support of every cell.
pub fn expected_mutual_information(a: &[u64], b: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    // ln(k!) table, built by accumulation.
    let mut lnfact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        lnfact[k] = lnfact[k - 1] + (k as f64).ln();
    }
    let mut emi = 0.0f64;
    for &ai in a {
        if ai == 0 {
            continue;
        }
        for &bj in b {
            if bj == 0 {
                continue;
            }
            let lo = 1.max((ai + bj).saturating_sub(n));
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let log_term = ((nij as f64 * nf) / (ai as f64 * bj as f64)).ln();
                let log_prob = lnfact[ai as usize] + lnfact[bj as usize]
                    + lnfact[(n - ai) as usize]
                    + lnfact[(n - bj) as usize]
                    - lnfact[n as usize]
                    - lnfact[nij as usize]
                    - lnfact[(ai - nij) as usize]
                    - lnfact[(bj - nij) as usize]
                    - lnfact[(n + nij - ai - bj) as usize];
                emi += (nij as f64 / nf) * log_term * log_prob.exp();
            }
        }
    }
    emi
}

/// Fraction of points labeled noise.
pub fn noise_ratio(assignment: &ClusterAssignment) -> f64 {
    if assignment.is_empty() {
        return 0.0;
    }
    let noise = assignment
        .labels()
        .iter()
        .filter(|l| **l == PointLabel::Noise)
        .count();
    noise as f64 / assignment.len() as f64
}

/// Number of distinct cluster ids.
pub fn cluster_count(assignment: &ClusterAssignment) -> usize {
    assignment.num_clusters() as usize
}

/// Qualification thresholds for the parameter grid: a cell qualifies when
/// its noise ratio stays below `max_noise_ratio` and it produces more than
/// `min_clusters` clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridThresholds {
    pub max_noise_ratio: f64,
    pub min_clusters: usize,
}

impl Default for GridThresholds {
    fn default() -> Self {
        GridThresholds {
            max_noise_ratio: 0.6,
            min_clusters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchCell {
    pub eps: f64,
    pub tau: usize,
    pub noise_ratio: f64,
    pub cluster_count: usize,
    pub qualifies: bool,
}

/// Runs reference DBSCAN on every `(eps, tau)` cell and flags the cells
/// meeting the thresholds. Cells run in parallel; output order follows the
/// grids.
pub fn parameter_grid_search(
    dataset: &Dataset,
    metric: DistanceMetric,
    eps_grid: &[f64],
    tau_grid: &[usize],
    thresholds: GridThresholds,
) -> Result<Vec<GridSearchCell>, ClusterError> {
    if eps_grid.is_empty() || tau_grid.is_empty() {
        return Err(ClusterError::InvalidParams(
            "parameter grids must be non-empty".into(),
        ));
    }
    let cells: Vec<(f64, usize)> = eps_grid
        .iter()
        .flat_map(|&eps| tau_grid.iter().map(move |&tau| (eps, tau)))
        .collect();
    cells
        .into_par_iter()
        .map(|(eps, tau)| {
            let engine = RangeQueryEngine::new(dataset, metric);
            let assignment = dbscan(&engine, &ClusterParams::new(eps, tau).with_metric(metric))?;
            let nr = noise_ratio(&assignment);
            let cc = cluster_count(&assignment);
            Ok(GridSearchCell {
                eps,
                tau,
                noise_ratio: nr,
                cluster_count: cc,
                qualifies: nr < thresholds.max_noise_ratio && cc > thresholds.min_clusters,
            })
        })
        .collect()
}

/// Fully-missed-cluster statistics, comparing a prediction against ground
/// truth: a ground-truth cluster is fully missed when every one of its
/// points is labeled noise in the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MissedClusterReport {
    /// Fully missed clusters.
    pub mc: usize,
    /// Total ground-truth clusters.
    pub tc: usize,
    /// Points inside fully missed clusters.
    pub mp: usize,
    /// Total non-noise ground-truth points.
    pub tpc: usize,
    /// Average size of the fully missed clusters, 0 when none are missed.
    pub asmc: f64,
}

pub fn missed_cluster_report(
    truth: &ClusterAssignment,
    pred: &ClusterAssignment,
) -> Result<MissedClusterReport, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    let tc = truth.num_clusters() as usize;
    let mut sizes = vec![0usize; tc + 1];
    let mut missed = vec![true; tc + 1];
    for (i, label) in truth.labels().iter().enumerate() {
        if let PointLabel::Cluster(c) = label {
            sizes[*c as usize] += 1;
            if pred.label(i) != PointLabel::Noise {
                missed[*c as usize] = false;
            }
        }
    }
    let mut mc = 0;
    let mut mp = 0;
    for c in 1..=tc {
        if sizes[c] > 0 && missed[c] {
            mc += 1;
            mp += sizes[c];
        }
    }
    let tpc: usize = sizes[1..].iter().sum();
    Ok(MissedClusterReport {
        mc,
        tc,
        mp,
        tpc,
        asmc: if mc > 0 { mp as f64 / mc as f64 } else { 0.0 },
    })
}
