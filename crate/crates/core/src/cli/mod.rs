//! Configuration, command dispatch, and benchmark reporting.
//!
//! Persisted outputs (label files, report files, sweep tables, model files)
//! contain only seed-determined fields, so repeating a command with the same
//! seeds reproduces them byte for byte; wall-clock timings appear on stdout
//! only.

pub mod io;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::cardest::{
    build_training_set, constant_mean_baseline_q_error, mean_q_error, train,
    CardinalityEstimator, EstimatorConfig, EstimatorError, EstimatorKind, LearnedModel,
    OracleEstimator, SampleEstimator, TrainingPair,
};
use crate::dbscan::{dbscan, ClusterAssignment, ClusterError, ClusterParams};
use crate::laf::{laf_dbscan, RunReport};
use crate::metrics::{
    adjusted_mutual_information, adjusted_rand_index, missed_cluster_report, noise_ratio,
    parameter_grid_search, GridSearchCell, GridThresholds, MissedClusterReport, NoiseHandling,
};
use crate::neighbors::RangeQueryEngine;
use crate::sampling::{dbscan_pp, laf_dbscan_pp, predicted_core_ratio, SamplingParams};
use crate::vecspace::{Dataset, DistanceMetric};

pub use io::InputFormat;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl CliError {
    /// 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dbscan,
    LafDbscan,
    DbscanPp,
    LafDbscanPp,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dbscan" => Ok(Algorithm::Dbscan),
            "laf-dbscan" => Ok(Algorithm::LafDbscan),
            "dbscan++" => Ok(Algorithm::DbscanPp),
            "laf-dbscan++" => Ok(Algorithm::LafDbscanPp),
            other => Err(format!("unknown algorithm: {other}")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Dbscan => write!(f, "dbscan"),
            Algorithm::LafDbscan => write!(f, "laf-dbscan"),
            Algorithm::DbscanPp => write!(f, "dbscan++"),
            Algorithm::LafDbscanPp => write!(f, "laf-dbscan++"),
        }
    }
}

/// Everything one clustering run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub input: PathBuf,
    pub format: InputFormat,
    pub normalize: bool,
    pub metric: DistanceMetric,
    pub eps: f64,
    pub tau: usize,
    pub alpha: f64,
    pub estimator: Option<EstimatorKind>,
    pub model_path: Option<PathBuf>,
    pub sample_rate: f64,
    pub sampling_p: Option<f64>,
    pub delta: f64,
    pub auto_p: bool,
    pub unbounded_assignment: bool,
    pub seed: u64,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl RunConfig {
    fn needs_sampling(&self) -> bool {
        matches!(self.algorithm, Algorithm::DbscanPp | Algorithm::LafDbscanPp)
    }

    fn needs_gate(&self) -> bool {
        matches!(self.algorithm, Algorithm::LafDbscan | Algorithm::LafDbscanPp)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.needs_gate() && self.estimator.is_none() {
            return Err(CliError::Config(format!(
                "{} requires --estimator",
                self.algorithm
            )));
        }
        if self.auto_p && self.estimator.is_none() {
            return Err(CliError::Config(
                "--auto-p derives the sample fraction from estimator predictions; pass --estimator"
                    .into(),
            ));
        }
        if self.needs_sampling() && !self.auto_p && self.sampling_p.is_none() {
            return Err(CliError::Config(format!(
                "{} requires --p or --auto-p with --delta",
                self.algorithm
            )));
        }
        if matches!(self.estimator, Some(EstimatorKind::Mlp | EstimatorKind::Rmi))
            && self.model_path.is_none()
        {
            return Err(CliError::Config(
                "learned estimators need --model pointing at a trained model file".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the configured estimator over the dataset.
fn build_estimator(
    config: &RunConfig,
    dataset: &Arc<Dataset>,
) -> Result<Option<Box<dyn CardinalityEstimator>>, CliError> {
    let Some(kind) = config.estimator else {
        return Ok(None);
    };
    let estimator: Box<dyn CardinalityEstimator> = match kind {
        EstimatorKind::Oracle => Box::new(OracleEstimator::new(dataset.clone(), config.metric)),
        EstimatorKind::Sample => Box::new(SampleEstimator::new(
            dataset,
            config.sample_rate,
            config.metric,
            config.seed,
        )?),
        EstimatorKind::Mlp | EstimatorKind::Rmi => {
            let path = config.model_path.as_ref().expect("validated");
            let model = LearnedModel::load_with_dim(path, dataset.dim())?;
            let loaded_kind = match &model {
                LearnedModel::Mlp { .. } => EstimatorKind::Mlp,
                LearnedModel::Rmi { .. } => EstimatorKind::Rmi,
            };
            if loaded_kind != kind {
                return Err(CliError::Config(format!(
                    "model file holds a {loaded_kind} estimator but --estimator says {kind}"
                )));
            }
            Box::new(model)
        }
    };
    Ok(Some(estimator))
}

/// Quality metrics of a prediction against ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub ari: f64,
    pub ami: f64,
    pub missed: MissedClusterReport,
}

/// Outcome of one `run` invocation; everything except `wall_time_ms` is
/// seed-deterministic and lands in the report file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub n: usize,
    pub dim: usize,
    pub effective_p: Option<f64>,
    pub report: RunReport,
    pub num_clusters: u32,
    pub noise_ratio: f64,
    pub quality: Option<QualityReport>,
    pub wall_time_ms: f64,
}

impl RunSummary {
    /// Deterministic key=value rows for the persisted report.
    pub fn report_lines(&self, config: &RunConfig) -> Vec<String> {
        let mut lines = vec![
            format!("algorithm={}", self.algorithm),
            format!("metric={}", config.metric),
            format!("eps={}", config.eps),
            format!("tau={}", config.tau),
            format!("alpha={}", config.alpha),
            format!("seed={}", config.seed),
            format!(
                "estimator={}",
                config
                    .estimator
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "none".into())
            ),
            format!("n={}", self.n),
            format!("dim={}", self.dim),
        ];
        if let Some(p) = self.effective_p {
            lines.push(format!("sampling_p={p}"));
        }
        lines.extend([
            format!("executed_queries={}", self.report.executed_queries),
            format!("skipped_queries={}", self.report.skipped_queries),
            format!("estimator_calls={}", self.report.estimator_calls),
            format!("merges_performed={}", self.report.merges_performed),
            format!("num_clusters={}", self.num_clusters),
            format!("noise_ratio={}", self.noise_ratio),
        ]);
        if let Some(q) = &self.quality {
            lines.extend([
                format!("ari={}", q.ari),
                format!("ami={}", q.ami),
                format!("missed_clusters={}", q.missed.mc),
                format!("truth_clusters={}", q.missed.tc),
                format!("missed_points={}", q.missed.mp),
                format!("truth_clustered_points={}", q.missed.tpc),
                format!("avg_missed_cluster_size={}", q.missed.asmc),
            ]);
        }
        lines
    }
}

/// Executes one clustering run end to end: load, cluster, write labels and
/// report files.
pub fn run(config: &RunConfig) -> Result<RunSummary, CliError> {
    config.validate()?;
    let dataset = Arc::new(io::load_dataset(&config.input, config.format, config.normalize)?);
    let (assignment, summary) = execute(config, &dataset)?;

    io::write_labels(&config.output, &assignment)?;
    if let Some(report_path) = &config.report {
        let lines = summary.report_lines(config);
        io::write_atomic(report_path, |w| {
            for line in &lines {
                use std::io::Write;
                writeln!(w, "{line}")?;
            }
            Ok(())
        })?;
    }
    Ok(summary)
}

/// Runs the configured algorithm on an already-loaded dataset.
pub fn execute(
    config: &RunConfig,
    dataset: &Arc<Dataset>,
) -> Result<(ClusterAssignment, RunSummary), CliError> {
    config.validate()?;
    let params = ClusterParams {
        eps: config.eps,
        tau: config.tau,
        alpha: config.alpha,
        metric: config.metric,
    };
    let engine = RangeQueryEngine::new(dataset, config.metric);
    let estimator = build_estimator(config, dataset)?;

    let mut effective_p = None;
    let sampling = if config.needs_sampling() {
        let mut s = SamplingParams::new(config.sampling_p.unwrap_or(1.0), config.seed);
        s.unbounded_assignment = config.unbounded_assignment;
        if config.auto_p {
            let est = estimator.as_deref().expect("validated");
            let r_c = predicted_core_ratio(&engine, &params, est)?;
            s.delta = config.delta;
            s.auto_p = true;
            let p = s.effective_p(r_c);
            s.p = p;
            s.auto_p = false;
        }
        effective_p = Some(s.p);
        Some(s)
    } else {
        None
    };

    let started = Instant::now();
    let (assignment, report) = match config.algorithm {
        Algorithm::Dbscan => {
            let assignment = dbscan(&engine, &params)?;
            let report = RunReport {
                executed_queries: engine.query_count(),
                ..RunReport::default()
            };
            (assignment, report)
        }
        Algorithm::LafDbscan => {
            let est = estimator.as_deref().expect("validated");
            laf_dbscan(&engine, &params, est)?
        }
        Algorithm::DbscanPp => dbscan_pp(&engine, &params, &sampling.expect("validated"))?,
        Algorithm::LafDbscanPp => {
            let est = estimator.as_deref().expect("validated");
            laf_dbscan_pp(&engine, &params, &sampling.expect("validated"), est)?
        }
    };
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    let quality = match &config.truth {
        Some(path) => {
            let truth = io::read_labels(path)?;
            Some(quality_against(&truth, &assignment)?)
        }
        None => None,
    };

    let summary = RunSummary {
        algorithm: config.algorithm,
        n: dataset.len(),
        dim: dataset.dim(),
        effective_p,
        num_clusters: assignment.num_clusters(),
        noise_ratio: noise_ratio(&assignment),
        report,
        quality,
        wall_time_ms,
    };
    Ok((assignment, summary))
}

fn quality_against(
    truth: &ClusterAssignment,
    pred: &ClusterAssignment,
) -> Result<QualityReport, CliError> {
    Ok(QualityReport {
        ari: adjusted_rand_index(truth, pred, NoiseHandling::SharedCluster)?,
        ami: adjusted_mutual_information(truth, pred, NoiseHandling::SharedCluster)?,
        missed: missed_cluster_report(truth, pred)?,
    })
}

/// Configuration for `train-estimator`.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub normalize: bool,
    pub metric: DistanceMetric,
    pub kind: EstimatorKind,
    pub thresholds: Vec<f64>,
    pub per_point_cap: Option<usize>,
    /// Fraction of points whose pairs train the model; the rest are held
    /// out for the q-error summary.
    pub split_ratio: f64,
    pub estimator: EstimatorConfig,
    pub model_out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub pairs_total: usize,
    pub pairs_train: usize,
    pub pairs_eval: usize,
    pub final_loss: f64,
    pub model_q_error: f64,
    pub baseline_q_error: f64,
}

/// Builds training pairs, trains the configured estimator, and serializes
/// the model.
///
/// Points are split `split_ratio : 1 - split_ratio` (seeded); pairs from the
/// held-out points feed the q-error summary. Counts are always measured
/// against the full dataset so the estimator sees clustering-time scales.
pub fn train_estimator(config: &TrainConfig) -> Result<TrainSummary, CliError> {
    if !(config.split_ratio > 0.0 && config.split_ratio <= 1.0) {
        return Err(CliError::Config(format!(
            "split ratio must be in (0, 1], got {}",
            config.split_ratio
        )));
    }
    if !matches!(config.kind, EstimatorKind::Mlp | EstimatorKind::Rmi) {
        return Err(CliError::Config(format!(
            "only learned estimators can be trained, got {}",
            config.kind
        )));
    }
    let dataset = io::load_dataset(&config.input, config.format, config.normalize)?;

    let all_pairs = build_training_set(
        &dataset,
        config.metric,
        &config.thresholds,
        config.per_point_cap,
        config.estimator.seed,
    )?;
    let (train_pairs, eval_pairs) =
        split_pairs(&all_pairs, config.thresholds.len(), config.split_ratio, config.estimator.seed);

    let mut estimator_config = config.estimator.clone();
    estimator_config.kind = config.kind;
    let model = train(&estimator_config, &train_pairs)?;
    let final_loss = training_loss(&model, &train_pairs)?;

    let eval_for_summary: &[TrainingPair] = if eval_pairs.is_empty() {
        &train_pairs
    } else {
        &eval_pairs
    };
    let model_q_error = mean_q_error(&model, eval_for_summary)?;
    let baseline_q_error = constant_mean_baseline_q_error(&train_pairs, eval_for_summary);

    model.save(&config.model_out)?;
    Ok(TrainSummary {
        pairs_total: all_pairs.len(),
        pairs_train: train_pairs.len(),
        pairs_eval: eval_pairs.len(),
        final_loss,
        model_q_error,
        baseline_q_error,
    })
}

/// Splits pairs by point: consecutive runs of `per_point` pairs belong to
/// one point, and a seeded shuffle of the points decides the side.
fn split_pairs(
    pairs: &[TrainingPair],
    per_point: usize,
    split_ratio: f64,
    seed: u64,
) -> (Vec<TrainingPair>, Vec<TrainingPair>) {
    use rand::SeedableRng;
    let n_points = pairs.len() / per_point.max(1);
    if n_points <= 1 || split_ratio >= 1.0 {
        return (pairs.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..n_points).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x53504C4954u64);
    use rand::Rng;
    for i in (1..n_points).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n_points as f64 * split_ratio).round() as usize).clamp(1, n_points - 1);
    let train_set: std::collections::HashSet<usize> = order[..n_train].iter().copied().collect();
    let mut train_pairs = Vec::new();
    let mut eval_pairs = Vec::new();
    for (point_idx, chunk) in pairs.chunks(per_point).enumerate() {
        if train_set.contains(&point_idx) {
            train_pairs.extend_from_slice(chunk);
        } else {
            eval_pairs.extend_from_slice(chunk);
        }
    }
    (train_pairs, eval_pairs)
}

/// Mean squared error on the log-scaled target, mirroring the training
/// objective.
fn training_loss(model: &LearnedModel, pairs: &[TrainingPair]) -> Result<f64, CliError> {
    let mut total = 0.0f64;
    for pair in pairs {
        let pred = model.predict(&pair.point, pair.eps)?;
        let err = (pred + 1.0).ln() - (pair.true_count as f64 + 1.0).ln();
        total += err * err;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Which knob a trade-off sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepKnob {
    Alpha(Vec<f64>),
    Delta(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub knob: f64,
    pub wall_time_ms: f64,
    pub executed_queries: u64,
    pub skipped_queries: u64,
    pub merges_performed: u64,
    pub ari: f64,
    pub ami: f64,
}

/// One clustering run per knob value, scored against ground truth.
///
/// Ground truth comes from `config.truth` when given, otherwise from one
/// reference DBSCAN pass. Alpha sweeps apply to the gated algorithms; delta
/// sweeps drive the auto-p rule of the sampling variants.
pub fn tradeoff_sweep(config: &RunConfig, knob: &SweepKnob) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    match knob {
        SweepKnob::Alpha(_) if !config.needs_gate() => {
            return Err(CliError::Config(
                "alpha sweeps require laf-dbscan or laf-dbscan++".into(),
            ));
        }
        SweepKnob::Delta(_) if !config.needs_sampling() => {
            return Err(CliError::Config(
                "delta sweeps require dbscan++ or laf-dbscan++".into(),
            ));
        }
        SweepKnob::Delta(_) if config.estimator.is_none() => {
            return Err(CliError::Config(
                "delta sweeps derive p = delta + R_c; pass --estimator".into(),
            ));
        }
        _ => {}
    }

    let dataset = Arc::new(io::load_dataset(&config.input, config.format, config.normalize)?);
    let truth = match &config.truth {
        Some(path) => io::read_labels(path)?,
        None => {
            let engine = RangeQueryEngine::new(&dataset, config.metric);
            let params = ClusterParams {
                eps: config.eps,
                tau: config.tau,
                alpha: config.alpha,
                metric: config.metric,
            };
            dbscan(&engine, &params)?
        }
    };

    let values: &[f64] = match knob {
        SweepKnob::Alpha(v) | SweepKnob::Delta(v) => v,
    };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut point = config.clone();
        point.truth = None;
        match knob {
            SweepKnob::Alpha(_) => point.alpha = value,
            SweepKnob::Delta(_) => {
                point.auto_p = true;
                point.delta = value;
            }
        }
        let (assignment, summary) = execute(&point, &dataset)?;
        rows.push(SweepRow {
            knob: value,
            wall_time_ms: summary.wall_time_ms,
            executed_queries: summary.report.executed_queries,
            skipped_queries: summary.report.skipped_queries,
            merges_performed: summary.report.merges_performed,
            ari: adjusted_rand_index(&truth, &assignment, NoiseHandling::SharedCluster)?,
            ami: adjusted_mutual_information(&truth, &assignment, NoiseHandling::SharedCluster)?,
        });
    }
    Ok(rows)
}

/// Deterministic CSV rows for a sweep (timings stay on stdout).
pub fn sweep_csv_lines(rows: &[SweepRow]) -> Vec<String> {
    let mut lines = vec!["knob,executed_queries,skipped_queries,merges_performed,ari,ami".into()];
    for r in rows {
        lines.push(format!(
            "{},{},{},{},{},{}",
            r.knob, r.executed_queries, r.skipped_queries, r.merges_performed, r.ari, r.ami
        ));
    }
    lines
}

/// Loads a dataset and evaluates the reference algorithm over an
/// `(eps, tau)` grid.
pub fn grid_search(
    input: &PathBuf,
    format: InputFormat,
    normalize: bool,
    metric: DistanceMetric,
    eps_grid: &[f64],
    tau_grid: &[usize],
    thresholds: GridThresholds,
) -> Result<Vec<GridSearchCell>, CliError> {
    let dataset = io::load_dataset(input, format, normalize)?;
    Ok(parameter_grid_search(
        &dataset, metric, eps_grid, tau_grid, thresholds,
    )?)
}

/// Deterministic CSV rows for a grid search.
pub fn grid_csv_lines(cells: &[GridSearchCell]) -> Vec<String> {
    let mut lines = vec!["eps,tau,noise_ratio,cluster_count,qualifies".into()];
    for c in cells {
        lines.push(format!(
            "{},{},{},{},{}",
            c.eps, c.tau, c.noise_ratio, c.cluster_count, c.qualifies
        ));
    }
    lines
}
