//! Exact range queries over a dataset, with instrumentation.
//!
//! The linear scan here is the computational kernel whose invocations the
//! estimator gate exists to avoid; it stays exact (no ANN index) so that
//! skipping a query is the only approximation anywhere in the pipeline.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::vecspace::{Dataset, DistanceMetric};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("point index {index} out of range for dataset of {len} vectors")]
    InvalidIndex { index: usize, len: usize },
    #[error("range query radius must be positive, got {eps}")]
    InvalidEps { eps: f64 },
}

/// Executes exact range queries against one dataset and counts them.
///
/// The counter is the only mutable state; increments are atomic, so the
/// engine can be shared across threads, and counts read at quiescence are
/// exact, not approximate.
pub struct RangeQueryEngine<'a> {
    dataset: &'a Dataset,
    metric: DistanceMetric,
    executed: AtomicU64,
}

impl<'a> RangeQueryEngine<'a> {
    pub fn new(dataset: &'a Dataset, metric: DistanceMetric) -> Self {
        RangeQueryEngine {
            dataset,
            metric,
            executed: AtomicU64::new(0),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    /// All indices `q` with `d(dataset[q], dataset[p]) < eps`, ascending.
    ///
    /// Membership uses strict inequality and the result contains `p` itself:
    /// the self-distance computes to at most ~1e-7 on unit-normalized 32-bit
    /// data (zero in exact arithmetic), so any eps above that residual
    /// includes it. Each call increments the executed-query counter by one.
    pub fn range_query(&self, p: usize, eps: f64) -> Result<Vec<usize>, QueryError> {
        let n = self.dataset.len();
        if p >= n {
            return Err(QueryError::InvalidIndex { index: p, len: n });
        }
        if !(eps > 0.0) {
            return Err(QueryError::InvalidEps { eps });
        }
        self.executed.fetch_add(1, Ordering::Relaxed);
        let query = self.dataset.vector(p);
        let mut out = Vec::new();
        for (q, v) in self.dataset.iter().enumerate() {
            if self.metric.distance(query, v) < eps {
                out.push(q);
            }
        }
        Ok(out)
    }

    /// Range queries executed since construction or the last reset.
    pub fn query_count(&self) -> u64 {
        self.executed.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.executed.store(0, Ordering::Relaxed);
    }
}
