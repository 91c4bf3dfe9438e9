//! Cardinality estimation: predicting range-query result counts without
//! executing the query.
//!
//! Three interchangeable estimator families sit behind one trait: an exact
//! oracle (ground truth for the equivalence tests), a uniform-sample
//! estimator, and learned regressors (a single MLP or a staged recursive
//! model index) trained on exact counts at a grid of distance thresholds.

mod mlp;
mod model_io;
mod rmi;

pub use mlp::{DenseLayer, Mlp};
pub use rmi::RmiModel;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vecspace::{Dataset, DistanceMetric};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("query dimension {got} does not match estimator dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("threshold {value} outside the open interval (0, 2)")]
    InvalidThreshold { value: f64 },
    #[error("point index {index} out of range for dataset of {len} vectors")]
    InvalidIndex { index: usize, len: usize },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model file i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
}

/// Predicts the cardinality of a range query `(point, eps)` without running
/// it. Implementations are immutable once built and safe to share across
/// threads; predictions are deterministic for a fixed model and input.
pub trait CardinalityEstimator: Send + Sync {
    fn predict(&self, point: &[f32], eps: f64) -> Result<f64, EstimatorError>;

    /// Vector dimension the estimator accepts.
    fn dim(&self) -> usize;
}

/// Which estimator implementation a configuration selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Oracle,
    Sample,
    Mlp,
    Rmi,
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(EstimatorKind::Oracle),
            "sample" => Ok(EstimatorKind::Sample),
            "mlp" => Ok(EstimatorKind::Mlp),
            "rmi" => Ok(EstimatorKind::Rmi),
            other => Err(format!("unknown estimator kind: {other}")),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Oracle => write!(f, "oracle"),
            EstimatorKind::Sample => write!(f, "sample"),
            EstimatorKind::Mlp => write!(f, "mlp"),
            EstimatorKind::Rmi => write!(f, "rmi"),
        }
    }
}

/// Structural and training hyperparameters for the estimators.
///
/// `default()` carries the full-size network: four hidden layers of widths
/// 512/512/256/128, a three-stage index with 1/2/4 models, 200 epochs at
/// batch size 512. [`EstimatorConfig::desk_scale`] shrinks the networks so
/// training finishes in seconds on small datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub sample_rate: f64,
    pub hidden_widths: Vec<usize>,
    pub stage_fanout: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Mlp,
            sample_rate: 0.1,
            hidden_widths: vec![512, 512, 256, 128],
            stage_fanout: vec![1, 2, 4],
            epochs: 200,
            batch_size: 512,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

impl EstimatorConfig {
    /// Small networks for datasets in the hundreds-to-thousands range.
    pub fn desk_scale() -> Self {
        EstimatorConfig {
            hidden_widths: vec![64, 32],
            stage_fanout: vec![1, 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.kind == EstimatorKind::Sample && !(self.sample_rate > 0.0 && self.sample_rate <= 1.0)
        {
            return Err(EstimatorError::InvalidConfig(format!(
                "sample_rate must be in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(EstimatorError::InvalidConfig(
                "hidden_widths must be non-empty positive integers".into(),
            ));
        }
        if self.kind == EstimatorKind::Rmi {
            if self.stage_fanout.is_empty() || self.stage_fanout.contains(&0) {
                return Err(EstimatorError::InvalidConfig(
                    "stage_fanout must be non-empty positive integers".into(),
                ));
            }
            if self.stage_fanout[0] != 1 {
                return Err(EstimatorError::InvalidConfig(
                    "stage_fanout must start with a single root model".into(),
                ));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EstimatorError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(EstimatorError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One supervised example: the exact neighbor count of `point` at radius
/// `eps`, self-inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub point: Vec<f32>,
    pub eps: f64,
    pub true_count: u64,
}

/// Exact neighbor count of dataset point `p` at radius `eps`.
///
/// Runs its own scan and never touches any [`RangeQueryEngine`] counter, so
/// benchmark query counts stay meaningful.
///
/// [`RangeQueryEngine`]: crate::neighbors::RangeQueryEngine
pub fn oracle_predict(
    dataset: &Dataset,
    metric: DistanceMetric,
    p: usize,
    eps: f64,
) -> Result<u64, EstimatorError> {
    if p >= dataset.len() {
        return Err(EstimatorError::InvalidIndex {
            index: p,
            len: dataset.len(),
        });
    }
    let query = dataset.vector(p);
    Ok(dataset
        .iter()
        .filter(|v| metric.distance(query, v) < eps)
        .count() as u64)
}

/// Exact-count estimator backed by a full scan per prediction.
pub struct OracleEstimator {
    dataset: Arc<Dataset>,
    metric: DistanceMetric,
    scans: AtomicU64,
}

impl OracleEstimator {
    pub fn new(dataset: Arc<Dataset>, metric: DistanceMetric) -> Self {
        OracleEstimator {
            dataset,
            metric,
            scans: AtomicU64::new(0),
        }
    }

    /// Scans performed so far; separate from the range-query counter.
    pub fn scan_count(&self) -> u64 {
        self.scans.load(Ordering::Relaxed)
    }
}

impl CardinalityEstimator for OracleEstimator {
    fn predict(&self, point: &[f32], eps: f64) -> Result<f64, EstimatorError> {
        if point.len() != self.dataset.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dataset.dim(),
                got: point.len(),
            });
        }
        self.scans.fetch_add(1, Ordering::Relaxed);
        let count = self
            .dataset
            .iter()
            .filter(|v| self.metric.distance(point, v) < eps)
            .count();
        Ok(count as f64)
    }

    fn dim(&self) -> usize {
        self.dataset.dim()
    }
}

/// Scales the count observed within a seeded Bernoulli sample of the data.
///
/// Each point joins the sample independently with probability `rate`, so the
/// scaled count is an unbiased estimate of the true cardinality.
pub struct SampleEstimator {
    dim: usize,
    rate: f64,
    metric: DistanceMetric,
    subset: Vec<f32>,
}

impl SampleEstimator {
    pub fn new(
        dataset: &Dataset,
        rate: f64,
        metric: DistanceMetric,
        seed: u64,
    ) -> Result<Self, EstimatorError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(EstimatorError::InvalidConfig(format!(
                "sample_rate must be in (0, 1], got {rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut subset = Vec::new();
        for v in dataset.iter() {
            if rng.random_range(0.0..1.0) < rate {
                subset.extend_from_slice(v);
            }
        }
        Ok(SampleEstimator {
            dim: dataset.dim(),
            rate,
            metric,
            subset,
        })
    }

    pub fn sample_len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.subset.len() / self.dim
        }
    }
}

impl CardinalityEstimator for SampleEstimator {
    fn predict(&self, point: &[f32], eps: f64) -> Result<f64, EstimatorError> {
        if point.len() != self.dim {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        let count = self
            .subset
            .chunks_exact(self.dim)
            .filter(|v| self.metric.distance(point, v) < eps)
            .count();
        Ok(count as f64 / self.rate)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Builds exact-count training pairs over a grid of distance thresholds.
///
/// Every dataset point contributes one pair per threshold unless
/// `per_point_cap` subsamples the points (seeded, then re-sorted so pair
/// order stays deterministic).
pub fn build_training_set(
    dataset: &Dataset,
    metric: DistanceMetric,
    thresholds: &[f64],
    per_point_cap: Option<usize>,
    seed: u64,
) -> Result<Vec<TrainingPair>, EstimatorError> {
    if dataset.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    if thresholds.is_empty() {
        return Err(EstimatorError::InvalidConfig(
            "threshold grid is empty".into(),
        ));
    }
    for &t in thresholds {
        if !(t > 0.0 && t < 2.0) {
            return Err(EstimatorError::InvalidThreshold { value: t });
        }
    }

    let n = dataset.len();
    let selected: Vec<usize> = match per_point_cap {
        Some(cap) if cap < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sampled = rand::seq::index::sample(&mut rng, n, cap).into_vec();
            sampled.sort_unstable();
            sampled
        }
        _ => (0..n).collect(),
    };

    let mut pairs = Vec::with_capacity(selected.len() * thresholds.len());
    for &p in &selected {
        let query = dataset.vector(p);
        let mut counts = vec![0u64; thresholds.len()];
        for v in dataset.iter() {
            let d = metric.distance(query, v);
            for (c, &t) in counts.iter_mut().zip(thresholds) {
                if d < t {
                    *c += 1;
                }
            }
        }
        for (&t, &c) in thresholds.iter().zip(&counts) {
            pairs.push(TrainingPair {
                point: query.to_vec(),
                eps: t,
                true_count: c,
            });
        }
    }
    Ok(pairs)
}

/// The default threshold grid: cosine distances 0.1 through 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// A trained learned estimator, either a single MLP or a staged index.
///
/// The regression target is `ln(1 + count)`; predictions invert it and floor
/// at zero. Network input is the point vector with `eps` appended.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnedModel {
    Mlp { dim: usize, config: EstimatorConfig, net: Mlp },
    Rmi { dim: usize, config: EstimatorConfig, index: RmiModel },
}

impl LearnedModel {
    pub fn config(&self) -> &EstimatorConfig {
        match self {
            LearnedModel::Mlp { config, .. } | LearnedModel::Rmi { config, .. } => config,
        }
    }

    /// Errors unless the model was trained for `expected`-dimensional points.
    pub fn ensure_dim(&self, expected: usize) -> Result<(), EstimatorError> {
        if self.dim() != expected {
            return Err(EstimatorError::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn model_input(point: &[f32], eps: f64) -> Vec<f32> {
    let mut input = Vec::with_capacity(point.len() + 1);
    input.extend_from_slice(point);
    input.push(eps as f32);
    input
}

pub(crate) fn count_from_output(out: f32) -> f64 {
    (f64::from(out).exp() - 1.0).max(0.0)
}

pub(crate) fn target_from_count(count: u64) -> f32 {
    ((count as f64) + 1.0).ln() as f32
}

impl CardinalityEstimator for LearnedModel {
    fn predict(&self, point: &[f32], eps: f64) -> Result<f64, EstimatorError> {
        if point.len() != self.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let input = model_input(point, eps);
        let out = match self {
            LearnedModel::Mlp { net, .. } => net.forward(&input),
            LearnedModel::Rmi { index, .. } => index.forward(&input),
        };
        Ok(count_from_output(out))
    }

    fn dim(&self) -> usize {
        match self {
            LearnedModel::Mlp { dim, .. } | LearnedModel::Rmi { dim, .. } => *dim,
        }
    }
}

/// Trains a learned estimator from exact-count pairs.
///
/// Identical `(config, pairs)` inputs reproduce identical weights; the seed
/// lives in the config.
pub fn train(
    config: &EstimatorConfig,
    pairs: &[TrainingPair],
) -> Result<LearnedModel, EstimatorError> {
    config.validate()?;
    let Some(first) = pairs.first() else {
        return Err(EstimatorError::EmptyTrainingSet);
    };
    let dim = first.point.len();
    if pairs.iter().any(|p| p.point.len() != dim) {
        return Err(EstimatorError::InvalidConfig(
            "training pairs have inconsistent dimensions".into(),
        ));
    }
    let inputs: Vec<Vec<f32>> = pairs.iter().map(|p| model_input(&p.point, p.eps)).collect();
    let targets: Vec<f32> = pairs.iter().map(|p| target_from_count(p.true_count)).collect();

    match config.kind {
        EstimatorKind::Mlp => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut net = Mlp::new(dim + 1, &config.hidden_widths, &mut init_rng);
            let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
            mlp::train_mlp(
                &mut net,
                &inputs,
                &targets,
                config.epochs,
                config.batch_size,
                config.learning_rate,
                &mut train_rng,
            )?;
            Ok(LearnedModel::Mlp {
                dim,
                config: config.clone(),
                net,
            })
        }
        EstimatorKind::Rmi => {
            let index = RmiModel::train(config, dim + 1, &inputs, &targets)?;
            Ok(LearnedModel::Rmi {
                dim,
                config: config.clone(),
                index,
            })
        }
        other => Err(EstimatorError::InvalidConfig(format!(
            "kind {other} is not trainable; construct it directly"
        ))),
    }
}

/// Multiplicative error `max(pred/truth, truth/pred)`, with both sides
/// floored at a tiny positive value so zero predictions stay finite.
pub fn q_error(prediction: f64, truth: f64) -> f64 {
    let p = prediction.max(1e-12);
    let t = truth.max(1e-12);
    (p / t).max(t / p)
}

/// Mean q-error of an estimator over a pair set.
pub fn mean_q_error(
    estimator: &dyn CardinalityEstimator,
    pairs: &[TrainingPair],
) -> Result<f64, EstimatorError> {
    if pairs.is_empty() {
        return Err(EstimatorError::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for pair in pairs {
        let pred = estimator.predict(&pair.point, pair.eps)?;
        total += q_error(pred, pair.true_count as f64);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean q-error of the constant predictor that always answers the mean
/// true count of `train_pairs`. The reference baseline a trained model must
/// beat.
pub fn constant_mean_baseline_q_error(train_pairs: &[TrainingPair], eval_pairs: &[TrainingPair]) -> f64 {
    let mean: f64 = train_pairs
        .iter()
        .map(|p| p.true_count as f64)
        .sum::<f64>()
        / train_pairs.len().max(1) as f64;
    let total: f64 = eval_pairs
        .iter()
        .map(|p| q_error(mean, p.true_count as f64))
        .sum();
    total / eval_pairs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_dataset(degrees: &[f64]) -> Dataset {
        let rows: Vec<Vec<f32>> = degrees
            .iter()
            .map(|d| {
                let r = d.to_radians();
                vec![r.cos() as f32, r.sin() as f32]
            })
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    fn six_point_circle() -> Dataset {
        circle_dataset(&[0.0, 5.0, 10.0, 120.0, 125.0, 240.0])
    }

    #[test]
    fn oracle_predict_matches_brute_force() {
        let ds = six_point_circle();
        assert_eq!(
            oracle_predict(&ds, DistanceMetric::Cosine, 1, 0.01).unwrap(),
            3
        );
        for p in 0..ds.len() {
            assert_eq!(
                oracle_predict(&ds, DistanceMetric::Cosine, p, 2.1).unwrap(),
                6
            );
            // eps just above the f32 self-distance residual: only the point
            // itself on a duplicate-free dataset.
            assert_eq!(
                oracle_predict(&ds, DistanceMetric::Cosine, p, 1e-5).unwrap(),
                1
            );
        }
        assert!(matches!(
            oracle_predict(&ds, DistanceMetric::Cosine, 6, 0.1),
            Err(EstimatorError::InvalidIndex { index: 6, len: 6 })
        ));
    }

    #[test]
    fn oracle_estimator_delegates_and_counts_scans() {
        let ds = Arc::new(six_point_circle());
        let est = OracleEstimator::new(ds.clone(), DistanceMetric::Cosine);
        let pred = est.predict(ds.vector(1), 0.01).unwrap();
        assert_eq!(pred, 3.0);
        assert_eq!(est.scan_count(), 1);
        assert!(matches!(
            est.predict(&[1.0, 0.0, 0.0], 0.01),
            Err(EstimatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn training_set_covers_the_threshold_grid() {
        let ds = six_point_circle();
        let thresholds = default_thresholds();
        let pairs =
            build_training_set(&ds, DistanceMetric::Cosine, &thresholds, None, 0).unwrap();
        assert_eq!(pairs.len(), 9 * 6);

        let small = build_training_set(&ds, DistanceMetric::Cosine, &[0.01], None, 0).unwrap();
        let five_deg = &small[1];
        assert_eq!(five_deg.point, ds.vector(1));
        assert_eq!(five_deg.true_count, 3);
    }

    #[test]
    fn training_set_rejects_bad_inputs() {
        let ds = six_point_circle();
        assert!(matches!(
            build_training_set(&ds, DistanceMetric::Cosine, &[2.1], None, 0),
            Err(EstimatorError::InvalidThreshold { .. })
        ));
        assert!(matches!(
            build_training_set(&Dataset::empty(2), DistanceMetric::Cosine, &[0.5], None, 0),
            Err(EstimatorError::EmptyDataset)
        ));
    }

    #[test]
    fn per_point_cap_subsamples_deterministically() {
        let ds = circle_dataset(&[0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0]);
        let a = build_training_set(&ds, DistanceMetric::Cosine, &[0.3], Some(3), 9).unwrap();
        let b = build_training_set(&ds, DistanceMetric::Cosine, &[0.3], Some(3), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn train_rejects_empty_pairs() {
        let config = EstimatorConfig::desk_scale();
        assert!(matches!(
            train(&config, &[]),
            Err(EstimatorError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn mlp_learns_constant_counts() {
        let ds = circle_dataset(&(0..24).map(|i| i as f64 * 15.0).collect::<Vec<_>>());
        // Every point on the even grid sees the same count at this radius.
        let pairs = build_training_set(&ds, DistanceMetric::Cosine, &[0.1], None, 0).unwrap();
        let k = pairs[0].true_count;
        assert!(pairs.iter().all(|p| p.true_count == k));

        let mut config = EstimatorConfig::desk_scale();
        config.epochs = 300;
        config.batch_size = 8;
        config.learning_rate = 0.05;
        let model = train(&config, &pairs).unwrap();
        for pair in &pairs {
            let pred = model.predict(&pair.point, pair.eps).unwrap();
            let rel = (pred - k as f64).abs() / k as f64;
            assert!(rel < 0.1, "prediction {pred} vs target {k}");
        }
    }

    #[test]
    fn learned_training_is_bit_deterministic() {
        let ds = six_point_circle();
        let pairs =
            build_training_set(&ds, DistanceMetric::Cosine, &[0.2, 0.5], None, 0).unwrap();
        let mut config = EstimatorConfig::desk_scale();
        config.epochs = 20;
        config.batch_size = 4;
        let a = train(&config, &pairs).unwrap();
        let b = train(&config, &pairs).unwrap();
        assert_eq!(a, b);
        for pair in &pairs {
            assert_eq!(
                a.predict(&pair.point, pair.eps).unwrap().to_bits(),
                b.predict(&pair.point, pair.eps).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn sample_estimator_is_unbiased_over_seeds() {
        let ds = circle_dataset(&(0..40).map(|i| i as f64 * 9.0).collect::<Vec<_>>());
        let truth = oracle_predict(&ds, DistanceMetric::Cosine, 0, 0.3).unwrap() as f64;
        let mut preds = Vec::new();
        for seed in 0..1500u64 {
            let est = SampleEstimator::new(&ds, 0.4, DistanceMetric::Cosine, seed).unwrap();
            preds.push(est.predict(ds.vector(0), 0.3).unwrap());
        }
        let n = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        assert!(
            (mean - truth).abs() <= 3.0 * stderr.max(1e-9),
            "mean {mean} vs truth {truth} (stderr {stderr})"
        );
    }

    #[test]
    fn two_cluster_mixture_beats_constant_baseline() {
        // Two caps of different density: counts vary with position and
        // threshold, which a constant predictor cannot track.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut degrees = Vec::new();
        for _ in 0..40 {
            degrees.push(rng.random_range(-10.0..10.0));
        }
        for _ in 0..20 {
            degrees.push(180.0 + rng.random_range(-40.0..40.0));
        }
        let ds = circle_dataset(&degrees);
        let pairs =
            build_training_set(&ds, DistanceMetric::Cosine, &[0.05, 0.2, 0.6], None, 0).unwrap();
        let (train_pairs, eval_pairs) = pairs.split_at(pairs.len() * 4 / 5);

        let mut config = EstimatorConfig::desk_scale();
        config.epochs = 150;
        config.batch_size = 32;
        config.learning_rate = 0.05;
        let model = train(&config, train_pairs).unwrap();

        let model_q = mean_q_error(&model, eval_pairs).unwrap();
        let baseline_q = constant_mean_baseline_q_error(train_pairs, eval_pairs);
        assert!(
            model_q < baseline_q,
            "model q-error {model_q} vs baseline {baseline_q}"
        );
    }
}
