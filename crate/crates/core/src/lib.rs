//! Density-based clustering for high-dimensional unit vectors under angular
//! distance, accelerated by a learned cardinality-estimator gate.
//!
//! The pipeline: [`neighbors`] answers exact range queries over a
//! [`vecspace::Dataset`]; [`dbscan`] is the exact reference algorithm;
//! [`cardest`] predicts range-query cardinalities so that [`laf`] can skip
//! queries for predicted stop points and repair false-negative splits
//! afterwards; [`sampling`] carries the sampled variant and its gated
//! version; [`metrics`] scores clusterings; [`cli`] holds the benchmark
//! harness behind the `laf-dbscan` binary.

pub mod cardest;
pub mod cli;
pub mod dbscan;
pub mod laf;
pub mod metrics;
pub mod neighbors;
pub mod sampling;
pub mod vecspace;

pub use cardest::{CardinalityEstimator, EstimatorConfig, EstimatorKind, LearnedModel};
pub use dbscan::{dbscan, ClusterAssignment, ClusterParams, PointLabel};
pub use laf::{laf_dbscan, post_processing, update_partial_neighbors, PartialNeighborMap, RunReport};
pub use neighbors::RangeQueryEngine;
pub use sampling::{dbscan_pp, laf_dbscan_pp, predicted_core_ratio, SamplingParams};
pub use vecspace::{cos_to_euclidean, cosine_distance, normalize, Dataset, DistanceMetric};
