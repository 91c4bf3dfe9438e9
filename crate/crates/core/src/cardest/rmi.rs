//! Staged recursive model index: each stage's model routes the input to one
//! model of the next stage, and the leaf emits the regression value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{train_mlp, Mlp};
use super::{EstimatorConfig, EstimatorError};

#[derive(Debug, Clone, PartialEq)]
pub struct RmiModel {
    pub(crate) stages: Vec<Vec<Mlp>>,
    /// Largest training target; routing normalizes model outputs by it.
    pub(crate) target_scale: f32,
    pub(crate) input_dim: usize,
}

impl RmiModel {
    pub(crate) fn from_parts(stages: Vec<Vec<Mlp>>, target_scale: f32, input_dim: usize) -> Self {
        RmiModel {
            stages,
            target_scale,
            input_dim,
        }
    }

    pub fn stage_fanout(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.len()).collect()
    }

    /// Routes `input` down the stages and returns the leaf model's output.
    pub fn forward(&self, input: &[f32]) -> f32 {
        let mut model = &self.stages[0][0];
        for next_stage in &self.stages[1..] {
            let out = model.forward(input);
            model = &next_stage[self.route(out, next_stage.len())];
        }
        model.forward(input)
    }

    /// Scales a model output into `[0, fanout)` and floors it to pick the
    /// child; clamping keeps routing total for any output value.
    fn route(&self, output: f32, fanout: usize) -> usize {
        let normalized = (f64::from(output) / f64::from(self.target_scale)).clamp(0.0, 1.0);
        ((normalized * fanout as f64) as usize).min(fanout - 1)
    }

    pub(crate) fn train(
        config: &EstimatorConfig,
        input_dim: usize,
        inputs: &[Vec<f32>],
        targets: &[f32],
    ) -> Result<Self, EstimatorError> {
        let target_scale = targets.iter().copied().fold(f32::MIN, f32::max).max(1e-6);

        let mut stages: Vec<Vec<Mlp>> = Vec::with_capacity(config.stage_fanout.len());
        // Which stage model each training row is currently routed to.
        let mut routed: Vec<usize> = vec![0; inputs.len()];

        for (stage_idx, &fanout) in config.stage_fanout.iter().enumerate() {
            let mut stage = Vec::with_capacity(fanout);
            for model_idx in 0..fanout {
                let model_seed = config
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((stage_idx as u64) << 32 | model_idx as u64);
                let mut init_rng = ChaCha8Rng::seed_from_u64(model_seed);
                let mut net = Mlp::new(input_dim, &config.hidden_widths, &mut init_rng);

                let rows: Vec<usize> = (0..inputs.len())
                    .filter(|&r| routed[r] == model_idx)
                    .collect();
                // A bucket no training row routes to keeps its initial
                // weights; nothing routes there at prediction time either
                // unless the data distribution shifts.
                if !rows.is_empty() {
                    let sub_inputs: Vec<Vec<f32>> =
                        rows.iter().map(|&r| inputs[r].clone()).collect();
                    let sub_targets: Vec<f32> = rows.iter().map(|&r| targets[r]).collect();
                    let mut train_rng = ChaCha8Rng::seed_from_u64(model_seed.wrapping_add(1));
                    train_mlp(
                        &mut net,
                        &sub_inputs,
                        &sub_targets,
                        config.epochs,
                        config.batch_size,
                        config.learning_rate,
                        &mut train_rng,
                    )?;
                }
                stage.push(net);
            }

            // Re-route every row through the freshly trained stage to pick
            // its model in the next stage.
            if stage_idx + 1 < config.stage_fanout.len() {
                let next_fanout = config.stage_fanout[stage_idx + 1];
                let partial = RmiModel::from_parts(vec![], target_scale, input_dim);
                for (row, slot) in routed.iter_mut().enumerate() {
                    let out = stage[*slot].forward(&inputs[row]);
                    *slot = partial.route(out, next_fanout);
                }
            }
            stages.push(stage);
        }

        Ok(RmiModel::from_parts(stages, target_scale, input_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardest::{
        build_training_set, model_input, target_from_count, train, CardinalityEstimator,
        EstimatorKind, LearnedModel,
    };
    use crate::vecspace::{Dataset, DistanceMetric};

    fn ring_dataset(n: usize) -> Dataset {
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|i| {
                let r = (i as f64 * 360.0 / n as f64).to_radians();
                vec![r.cos() as f32, r.sin() as f32]
            })
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn routing_is_total_over_random_inputs() {
        let ds = ring_dataset(24);
        let pairs =
            build_training_set(&ds, DistanceMetric::Cosine, &[0.1, 0.5, 0.9], None, 0).unwrap();
        let mut config = EstimatorConfig::desk_scale();
        config.kind = EstimatorKind::Rmi;
        config.stage_fanout = vec![1, 2, 4];
        config.epochs = 30;
        config.batch_size = 16;
        let model = train(&config, &pairs).unwrap();

        // Any input, including far-out-of-distribution ones, must reach
        // exactly one leaf and produce a finite non-negative count.
        let extremes = [
            vec![1.0f32, 0.0],
            vec![-1.0, 0.0],
            vec![100.0, -100.0],
            vec![0.0, 0.0],
        ];
        for point in &extremes {
            for eps in [1e-6, 0.5, 1.9, 100.0] {
                let pred = model.predict(point, eps).unwrap();
                assert!(pred.is_finite() && pred >= 0.0);
            }
        }
    }

    #[test]
    fn leaf_output_matches_manual_routing() {
        let ds = ring_dataset(16);
        let pairs = build_training_set(&ds, DistanceMetric::Cosine, &[0.2, 0.6], None, 0).unwrap();
        let mut config = EstimatorConfig::desk_scale();
        config.kind = EstimatorKind::Rmi;
        config.stage_fanout = vec![1, 2];
        config.epochs = 20;
        config.batch_size = 8;
        let LearnedModel::Rmi { index, .. } = train(&config, &pairs).unwrap() else {
            panic!("expected an rmi model");
        };

        for pair in &pairs {
            let input = model_input(&pair.point, pair.eps);
            let root_out = index.stages[0][0].forward(&input);
            let leaf = index.route(root_out, index.stages[1].len());
            assert_eq!(
                index.forward(&input).to_bits(),
                index.stages[1][leaf].forward(&input).to_bits()
            );
        }
        let _ = target_from_count(0);
    }
}
