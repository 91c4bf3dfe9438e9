//! Sampling-based DBSCAN (DBSCAN++) and its estimator-gated version.
//!
//! DBSCAN++ runs range queries only for a uniform sample of the points:
//! sampled points with enough full-dataset neighbors are core, clusters grow
//! over those cores within the sample, and everything still unclassified is
//! assigned to its closest core point (within eps, unless the unbounded flag
//! is set). The gated version additionally skips sampled queries the
//! estimator predicts to be stop points, exactly like the gate in
//! [`laf_dbscan`].
//!
//! [`laf_dbscan`]: crate::laf::laf_dbscan

use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cardest::CardinalityEstimator;
use crate::dbscan::{ClusterAssignment, ClusterError, ClusterParams, PointLabel};
use crate::laf::{
    post_processing, update_partial_neighbors, MergeSelection, PartialNeighborMap, RunReport,
};
use crate::neighbors::RangeQueryEngine;

/// Sampling controls for the DBSCAN++ variants.
///
/// With `auto_p`, the effective fraction is `min(1, delta + R_c)` where
/// `R_c` is the estimator's predicted-core ratio; resolve it with
/// [`predicted_core_ratio`] and [`SamplingParams::effective_p`] before
/// running. `unbounded_assignment` lifts the eps bound of the final
/// closest-core assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub p: f64,
    pub delta: f64,
    pub seed: u64,
    pub auto_p: bool,
    pub unbounded_assignment: bool,
}

impl SamplingParams {
    pub fn new(p: f64, seed: u64) -> Self {
        SamplingParams {
            p,
            delta: 0.0,
            seed,
            auto_p: false,
            unbounded_assignment: false,
        }
    }

    /// The sample fraction implied by a predicted-core ratio.
    pub fn effective_p(&self, core_ratio: f64) -> f64 {
        if self.auto_p {
            (self.delta + core_ratio).min(1.0)
        } else {
            self.p
        }
    }

    fn validate(&self, n: usize) -> Result<(), ClusterError> {
        if self.auto_p {
            return Err(ClusterError::InvalidSampling(
                "auto_p must be resolved to a concrete fraction before clustering".into(),
            ));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ClusterError::InvalidSampling(format!(
                "sample fraction must be in (0, 1], got {}",
                self.p
            )));
        }
        if self.p * (n as f64) < 1.0 {
            return Err(ClusterError::InvalidSampling(format!(
                "sample fraction {} yields no points on a dataset of {n}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Fraction of points the estimator predicts to be core: `predict >= tau`.
pub fn predicted_core_ratio(
    engine: &RangeQueryEngine<'_>,
    params: &ClusterParams,
    estimator: &dyn CardinalityEstimator,
) -> Result<f64, ClusterError> {
    let dataset = engine.dataset();
    let n = dataset.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut core = 0usize;
    for p in 0..n {
        let pred = estimator
            .predict(dataset.vector(p), params.eps)
            .map_err(|source| ClusterError::Estimator { index: p, source })?;
        if pred >= params.tau as f64 {
            core += 1;
        }
    }
    Ok(core as f64 / n as f64)
}

/// Uniform sample of `ceil(p * n)` indices without replacement, ascending.
fn draw_sample(n: usize, p: f64, seed: u64) -> Vec<usize> {
    let m = ((p * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = rand::seq::index::sample(&mut rng, n, m).into_vec();
    sample.sort_unstable();
    sample
}

/// Per-sampled-point query outcome feeding the growth and assignment steps.
struct SampledPoint {
    core: bool,
    /// Full-dataset neighbors, kept only for core points.
    neighbors: Vec<usize>,
}

fn grow_and_assign(
    engine: &RangeQueryEngine<'_>,
    params: &ClusterParams,
    sample: &[usize],
    outcomes: &std::collections::HashMap<usize, SampledPoint>,
    unbounded: bool,
) -> ClusterAssignment {
    let dataset = engine.dataset();
    let n = dataset.len();
    let mut assignment = ClusterAssignment::new_undefined(n);
    let mut sampled = vec![false; n];
    for &s in sample {
        sampled[s] = true;
    }
    let is_core = |q: usize| outcomes.get(&q).map(|o| o.core).unwrap_or(false);

    // Cluster growth within the sample: seeds advance only through sampled
    // core points, and only sampled points take labels here.
    let mut cluster = 0u32;
    let mut stamp = vec![0u32; n];
    let mut generation = 0u32;
    for &p in sample {
        if !is_core(p) || assignment.label(p) != PointLabel::Undefined {
            continue;
        }
        cluster += 1;
        assignment.set_label(p, PointLabel::Cluster(cluster));
        generation += 1;
        stamp[p] = generation;
        let mut seeds: VecDeque<usize> = VecDeque::new();
        for &q in &outcomes[&p].neighbors {
            if sampled[q] && stamp[q] != generation {
                stamp[q] = generation;
                seeds.push_back(q);
            }
        }
        while let Some(q) = seeds.pop_front() {
            if assignment.label(q) != PointLabel::Undefined {
                continue;
            }
            assignment.set_label(q, PointLabel::Cluster(cluster));
            if is_core(q) {
                for &r in &outcomes[&q].neighbors {
                    if sampled[r] && stamp[r] != generation {
                        stamp[r] = generation;
                        seeds.push_back(r);
                    }
                }
            }
        }
    }
    assignment.set_num_clusters(cluster);

    // Everything still unclassified goes to its closest core point.
    let cores: Vec<usize> = sample.iter().copied().filter(|&s| is_core(s)).collect();
    for q in 0..n {
        if assignment.label(q) != PointLabel::Undefined {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &c in &cores {
            let d = engine.metric().distance(dataset.vector(q), dataset.vector(c));
            // Strictly-closer wins; ties keep the earlier core.
            if best.map(|(bd, _)| d < bd).unwrap_or(true) {
                best = Some((d, c));
            }
        }
        match best {
            Some((d, c)) if unbounded || d < params.eps => {
                assignment.set_label(q, assignment.label(c));
            }
            _ => assignment.set_label(q, PointLabel::Noise),
        }
    }
    debug_assert!(assignment.is_complete());
    assignment
}

/// DBSCAN++ over the engine's dataset.
///
/// With `p = 1.0` the output equals [`dbscan`]'s on the same input.
///
/// [`dbscan`]: crate::dbscan::dbscan
pub fn dbscan_pp(
    engine: &RangeQueryEngine<'_>,
    params: &ClusterParams,
    sampling: &SamplingParams,
) -> Result<(ClusterAssignment, RunReport), ClusterError> {
    params.validate()?;
    let n = engine.dataset().len();
    sampling.validate(n)?;
    let started = Instant::now();
    let sample = draw_sample(n, sampling.p, sampling.seed);

    let mut report = RunReport::default();
    let mut outcomes = std::collections::HashMap::new();
    for &s in &sample {
        report.executed_queries += 1;
        let neighbors = engine.range_query(s, params.eps)?;
        let core = neighbors.len() >= params.tau;
        outcomes.insert(
            s,
            SampledPoint {
                core,
                neighbors: if core { neighbors } else { Vec::new() },
            },
        );
    }

    let assignment = grow_and_assign(
        engine,
        params,
        &sample,
        &outcomes,
        sampling.unbounded_assignment,
    );
    report.wall_time = started.elapsed();
    Ok((assignment, report))
}

/// DBSCAN++ with the estimator gate in front of every sampled range query
/// and the false-negative merge at the end.
pub fn laf_dbscan_pp(
    engine: &RangeQueryEngine<'_>,
    params: &ClusterParams,
    sampling: &SamplingParams,
    estimator: &dyn CardinalityEstimator,
) -> Result<(ClusterAssignment, RunReport), ClusterError> {
    params.validate()?;
    let dataset = engine.dataset();
    let n = dataset.len();
    sampling.validate(n)?;
    let started = Instant::now();
    let sample = draw_sample(n, sampling.p, sampling.seed);
    let gate = params.alpha * params.tau as f64;

    let mut report = RunReport::default();
    let mut e = PartialNeighborMap::new();
    let mut outcomes = std::collections::HashMap::new();
    for &s in &sample {
        report.estimator_calls += 1;
        let pred = estimator
            .predict(dataset.vector(s), params.eps)
            .map_err(|source| ClusterError::Estimator { index: s, source })?;
        if pred < gate {
            report.skipped_queries += 1;
            e.ensure_entry(s);
            outcomes.insert(
                s,
                SampledPoint {
                    core: false,
                    neighbors: Vec::new(),
                },
            );
            continue;
        }
        report.executed_queries += 1;
        let neighbors = engine.range_query(s, params.eps)?;
        update_partial_neighbors(s, &neighbors, &mut e);
        let core = neighbors.len() >= params.tau;
        outcomes.insert(
            s,
            SampledPoint {
                core,
                neighbors: if core { neighbors } else { Vec::new() },
            },
        );
    }

    let assignment = grow_and_assign(
        engine,
        params,
        &sample,
        &outcomes,
        sampling.unbounded_assignment,
    );
    let (assignment, merges) =
        post_processing(assignment, &e, params.tau, MergeSelection::Deterministic);
    report.merges_performed = merges;
    report.wall_time = started.elapsed();
    Ok((assignment, report))
}
