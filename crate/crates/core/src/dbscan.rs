//! Exact reference DBSCAN, the ground truth for all quality metrics.
//!
//! Neighbor sets come from [`RangeQueryEngine::range_query`] (self-inclusive,
//! strict `<`), a point is core iff it has at least `tau` neighbors counting
//! itself, and both the outer scan and seed expansion follow ascending index
//! order so the output is deterministic.

use thiserror::Error;

use crate::cardest::EstimatorError;
use crate::neighbors::{QueryError, RangeQueryEngine};
use crate::vecspace::DistanceMetric;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("estimator failed at point {index}: {source}")]
    Estimator {
        index: usize,
        source: EstimatorError,
    },
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
}

/// Parameters governing one clustering run.
///
/// `tau` counts the point itself, matching the raw self-inclusive range-query
/// cardinality it is compared against. `alpha` scales the estimator gate
/// threshold `alpha * tau` and is ignored by the reference algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub eps: f64,
    pub tau: usize,
    pub alpha: f64,
    pub metric: DistanceMetric,
}

impl ClusterParams {
    pub fn new(eps: f64, tau: usize) -> Self {
        ClusterParams {
            eps,
            tau,
            alpha: 1.0,
            metric: DistanceMetric::Cosine,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(ClusterError::InvalidParams(format!(
                "eps must be positive and finite, got {}",
                self.eps
            )));
        }
        if self.tau == 0 {
            return Err(ClusterError::InvalidParams("tau must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(ClusterError::InvalidParams(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Label of a single point in a clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointLabel {
    Undefined,
    Noise,
    /// Cluster ids form a contiguous range `1..=num_clusters`.
    Cluster(u32),
}

/// The map from point index to label, plus the cluster count.
///
/// A completed run leaves no point `Undefined` and every id in
/// `1..=num_clusters` non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<PointLabel>,
    num_clusters: u32,
}

impl ClusterAssignment {
    pub fn new_undefined(n: usize) -> Self {
        ClusterAssignment {
            labels: vec![PointLabel::Undefined; n],
            num_clusters: 0,
        }
    }

    /// Builds an assignment from explicit labels, recomputing the cluster
    /// count and checking id contiguity.
    pub fn from_labels(labels: Vec<PointLabel>) -> Result<Self, ClusterError> {
        let max_id = labels
            .iter()
            .filter_map(|l| match l {
                PointLabel::Cluster(c) => Some(*c),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut seen = vec![false; max_id as usize + 1];
        for l in &labels {
            if let PointLabel::Cluster(c) = l {
                if *c == 0 {
                    return Err(ClusterError::InvalidParams(
                        "cluster ids must start at 1".into(),
                    ));
                }
                seen[*c as usize] = true;
            }
        }
        if let Some(missing) = (1..=max_id).find(|&c| !seen[c as usize]) {
            return Err(ClusterError::InvalidParams(format!(
                "cluster ids are not contiguous: id {missing} is empty"
            )));
        }
        Ok(ClusterAssignment {
            labels,
            num_clusters: max_id,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> PointLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[PointLabel] {
        &self.labels
    }

    pub fn num_clusters(&self) -> u32 {
        self.num_clusters
    }

    pub(crate) fn set_label(&mut self, i: usize, label: PointLabel) {
        self.labels[i] = label;
    }

    pub(crate) fn set_num_clusters(&mut self, c: u32) {
        self.num_clusters = c;
    }

    /// True when no point is still `Undefined`.
    pub fn is_complete(&self) -> bool {
        self.labels.iter().all(|l| *l != PointLabel::Undefined)
    }

    /// Compares the induced partitions: same cluster blocks and the same
    /// noise set, irrespective of the numeric cluster ids.
    pub fn same_partition(&self, other: &ClusterAssignment) -> bool {
        if self.labels.len() != other.labels.len() {
            return false;
        }
        fn canonical(labels: &[PointLabel]) -> Vec<i64> {
            let mut remap = std::collections::HashMap::new();
            let mut next = 0i64;
            labels
                .iter()
                .map(|l| match l {
                    PointLabel::Noise => -1,
                    PointLabel::Undefined => -2,
                    PointLabel::Cluster(c) => *remap.entry(*c).or_insert_with(|| {
                        next += 1;
                        next
                    }),
                })
                .collect()
        }
        canonical(&self.labels) == canonical(&other.labels)
    }
}

/// Classic DBSCAN over the engine's dataset.
///
/// An empty dataset yields an empty assignment with zero clusters.
pub fn dbscan(
    engine: &RangeQueryEngine<'_>,
    params: &ClusterParams,
) -> Result<ClusterAssignment, ClusterError> {
    params.validate()?;
    let n = engine.dataset().len();
    let mut assignment = ClusterAssignment::new_undefined(n);
    let mut cluster = 0u32;

    // Per-expansion membership stamps for the seed set; a generation counter
    // avoids reinitializing the whole array for every cluster.
    let mut stamp = vec![0u32; n];
    let mut generation = 0u32;

    for p in 0..n {
        if assignment.label(p) != PointLabel::Undefined {
            continue;
        }
        let neighbors = engine.range_query(p, params.eps)?;
        if neighbors.len() < params.tau {
            assignment.set_label(p, PointLabel::Noise);
            continue;
        }
        cluster += 1;
        assignment.set_label(p, PointLabel::Cluster(cluster));
        generation += 1;
        stamp[p] = generation;
        let mut seeds: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        for &q in &neighbors {
            if stamp[q] != generation {
                stamp[q] = generation;
                seeds.push_back(q);
            }
        }
        while let Some(q) = seeds.pop_front() {
            if assignment.label(q) == PointLabel::Noise {
                assignment.set_label(q, PointLabel::Cluster(cluster));
            }
            if assignment.label(q) != PointLabel::Undefined {
                continue;
            }
            assignment.set_label(q, PointLabel::Cluster(cluster));
            let nq = engine.range_query(q, params.eps)?;
            if nq.len() >= params.tau {
                for &r in &nq {
                    if stamp[r] != generation {
                        stamp[r] = generation;
                        seeds.push_back(r);
                    }
                }
            }
        }
    }

    assignment.set_num_clusters(cluster);
    debug_assert!(assignment.is_complete());
    Ok(assignment)
}
