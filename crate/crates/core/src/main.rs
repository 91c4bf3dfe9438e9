//! Benchmark CLI: cluster vector datasets, train cardinality estimators,
//! sweep the speed-quality knobs, and search the parameter grid.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error. Internal
//! parallelism (grid search) honors `RAYON_NUM_THREADS`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use laf_dbscan::cardest::{default_thresholds, EstimatorConfig, EstimatorKind};
use laf_dbscan::cli::{
    self, grid_csv_lines, grid_search, io::InputFormat, run, sweep_csv_lines, tradeoff_sweep,
    train_estimator, Algorithm, CliError, RunConfig, SweepKnob, TrainConfig,
};
use laf_dbscan::metrics::GridThresholds;
use laf_dbscan::vecspace::DistanceMetric;

#[derive(Parser)]
#[command(
    name = "laf-dbscan",
    about = "Density-based clustering of unit vectors under angular distance, \
             with an estimator gate that skips range queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a dataset and write the label assignment plus a report.
    Run(RunArgs),
    /// Build exact-count training pairs and train a learned estimator.
    TrainEstimator(TrainArgs),
    /// Run one clustering per knob value and tabulate speed vs. quality.
    TradeoffSweep(SweepArgs),
    /// Evaluate reference DBSCAN over an (eps, tau) grid.
    GridSearch(GridArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Input vector file.
    #[arg(long)]
    input: PathBuf,
    /// Input format: csv or fvecs.
    #[arg(long, default_value = "csv")]
    format: InputFormat,
    /// L2-normalize vectors at load time.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    /// Distance metric: cosine or euclidean-equivalent.
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    metric: DistanceMetric,
}

fn parse_metric(s: &str) -> Result<DistanceMetric, String> {
    match s {
        "cosine" => Ok(DistanceMetric::Cosine),
        "euclidean-equivalent" => Ok(DistanceMetric::EuclideanEquivalent),
        other => Err(format!("unknown metric: {other}")),
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Algorithm: dbscan, laf-dbscan, dbscan++, or laf-dbscan++.
    #[arg(long)]
    algorithm: Algorithm,
    /// Distance threshold epsilon.
    #[arg(long)]
    eps: f64,
    /// Minimum neighbor count tau (counting the point itself).
    #[arg(long)]
    tau: usize,
    /// Error factor multiplying tau in the estimator gate.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Estimator kind: oracle, sample, mlp, or rmi.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Trained model file for the learned estimators.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Inclusion probability of the sample estimator.
    #[arg(long, default_value_t = 0.1)]
    sample_rate: f64,
    /// Sample fraction for the dbscan++ variants.
    #[arg(long)]
    p: Option<f64>,
    /// Offset added to the predicted core ratio when --auto-p is set.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Derive the sample fraction as min(1, delta + predicted core ratio).
    #[arg(long, default_value_t = false)]
    auto_p: bool,
    /// Assign leftover points to the closest core even beyond eps.
    #[arg(long, default_value_t = false)]
    unbounded_assignment: bool,
    /// Seed for all randomness in the run.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Labels output file (index,label rows; noise = -1).
    #[arg(long)]
    output: PathBuf,
    /// Report output file (deterministic key=value rows).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth labels file enabling the quality metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            algorithm: self.algorithm,
            input: self.input.input,
            format: self.input.format,
            normalize: self.input.normalize,
            metric: self.input.metric,
            eps: self.eps,
            tau: self.tau,
            alpha: self.alpha,
            estimator: self.estimator,
            model_path: self.model,
            sample_rate: self.sample_rate,
            sampling_p: self.p,
            delta: self.delta,
            auto_p: self.auto_p,
            unbounded_assignment: self.unbounded_assignment,
            seed: self.seed,
            output: self.output,
            report: self.report,
            truth: self.truth,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Learned estimator kind: mlp or rmi.
    #[arg(long, default_value = "mlp")]
    kind: EstimatorKind,
    /// Comma-separated distance thresholds (default 0.1..0.9 step 0.1).
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// File with one threshold per line, overriding --thresholds.
    #[arg(long)]
    thresholds_file: Option<PathBuf>,
    /// Cap on the number of training points (seeded subsample).
    #[arg(long)]
    per_point_cap: Option<usize>,
    /// Fraction of points whose pairs train the model; the rest are held
    /// out for the q-error summary.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden_widths: Option<Vec<usize>>,
    /// Comma-separated per-stage model counts for the rmi kind.
    #[arg(long, value_delimiter = ',')]
    stage_fanout: Option<Vec<usize>>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated alpha values to sweep (gated algorithms).
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated delta values to sweep (sampling variants).
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Deterministic CSV output for the sweep table.
    #[arg(long)]
    sweep_output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated eps values.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Vec<f64>,
    /// Comma-separated tau values.
    #[arg(long, value_delimiter = ',')]
    tau_grid: Vec<usize>,
    /// Cells qualify when their noise ratio stays below this bound.
    #[arg(long, default_value_t = 0.6)]
    max_noise_ratio: f64,
    /// Cells qualify when they produce more clusters than this bound.
    #[arg(long, default_value_t = 20)]
    min_clusters: usize,
    /// Deterministic CSV output for the grid table.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config();
            let summary = run(&config)?;
            for line in summary.report_lines(&config) {
                println!("{line}");
            }
            println!("wall_time_ms={:.3}", summary.wall_time_ms);
            println!("labels written to {}", config.output.display());
            Ok(())
        }
        Command::TrainEstimator(args) => {
            let thresholds = match (&args.thresholds_file, args.thresholds) {
                (Some(path), _) => cli::io::read_thresholds_file(path)?,
                (None, Some(values)) => values,
                (None, None) => default_thresholds(),
            };
            let mut estimator = EstimatorConfig::desk_scale();
            if let Some(widths) = args.hidden_widths {
                estimator.hidden_widths = widths;
            }
            if let Some(fanout) = args.stage_fanout {
                estimator.stage_fanout = fanout;
            }
            estimator.epochs = args.epochs;
            estimator.batch_size = args.batch_size;
            estimator.learning_rate = args.learning_rate;
            estimator.seed = args.seed;
            let config = TrainConfig {
                input: args.input.input,
                format: args.input.format,
                normalize: args.input.normalize,
                metric: args.input.metric,
                kind: args.kind,
                thresholds,
                per_point_cap: args.per_point_cap,
                split_ratio: args.split_ratio,
                estimator,
                model_out: args.model_out.clone(),
            };
            let summary = train_estimator(&config)?;
            println!("pairs_total={}", summary.pairs_total);
            println!("pairs_train={}", summary.pairs_train);
            println!("pairs_eval={}", summary.pairs_eval);
            println!("final_loss={}", summary.final_loss);
            println!("held_out_mean_q_error={}", summary.model_q_error);
            println!("constant_baseline_q_error={}", summary.baseline_q_error);
            println!("model written to {}", args.model_out.display());
            Ok(())
        }
        Command::TradeoffSweep(args) => {
            let knob = match (args.alphas, args.deltas) {
                (Some(alphas), None) => SweepKnob::Alpha(alphas),
                (None, Some(deltas)) => SweepKnob::Delta(deltas),
                _ => {
                    return Err(CliError::Config(
                        "pass exactly one of --alphas or --deltas".into(),
                    ))
                }
            };
            let config = args.run.into_config();
            let rows = tradeoff_sweep(&config, &knob)?;
            println!("knob,wall_time_ms,executed_queries,skipped_queries,merges_performed,ari,ami");
            for r in &rows {
                println!(
                    "{},{:.3},{},{},{},{},{}",
                    r.knob,
                    r.wall_time_ms,
                    r.executed_queries,
                    r.skipped_queries,
                    r.merges_performed,
                    r.ari,
                    r.ami
                );
            }
            if let Some(path) = args.sweep_output {
                let lines = sweep_csv_lines(&rows);
                cli::io::write_atomic(&path, |w| {
                    use std::io::Write;
                    for line in &lines {
                        writeln!(w, "{line}")?;
                    }
                    Ok(())
                })?;
            }
            Ok(())
        }
        Command::GridSearch(args) => {
            let cells = grid_search(
                &args.input.input,
                args.input.format,
                args.input.normalize,
                args.input.metric,
                &args.eps_grid,
                &args.tau_grid,
                GridThresholds {
                    max_noise_ratio: args.max_noise_ratio,
                    min_clusters: args.min_clusters,
                },
            )?;
            for line in grid_csv_lines(&cells) {
                println!("{line}");
            }
            if let Some(path) = args.output {
                let lines = grid_csv_lines(&cells);
                cli::io::write_atomic(&path, |w| {
                    use std::io::Write;
                    for line in &lines {
                        writeln!(w, "{line}")?;
                    }
                    Ok(())
                })?;
            }
            Ok(())
        }
    }
}
