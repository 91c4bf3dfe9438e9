//! A small fully-connected regressor trained with seeded mini-batch SGD.
//!
//! Weights live in 32-bit floats (the on-disk format) while dot products and
//! gradient accumulation run in 64-bit. Everything is deterministic given the
//! seed: initialization, shuffling, and batch order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::EstimatorError;

/// One dense layer, row-major `rows x cols` weights plus a bias per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    fn new(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        // Xavier-uniform initialization.
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit) as f32)
            .collect();
        DenseLayer {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    fn forward_into(&self, input: &[f32], out: &mut Vec<f32>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = f64::from(self.bias[r]);
            for (w, x) in row.iter().zip(input) {
                acc += f64::from(*w) * f64::from(*x);
            }
            out.push(acc as f32);
        }
    }
}

/// Multilayer perceptron with rectified-linear hidden units and a single
/// identity output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden_widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden_widths.len() + 1);
        let mut prev = input_dim;
        for &w in hidden_widths {
            layers.push(DenseLayer::new(w, prev, rng));
            prev = w;
        }
        layers.push(DenseLayer::new(1, prev, rng));
        Mlp { input_dim, layers }
    }

    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Self {
        Mlp { input_dim, layers }
    }

    /// Network output for one input row.
    pub fn forward(&self, input: &[f32]) -> f32 {
        debug_assert_eq!(input.len(), self.input_dim);
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Pre-activation values of every layer for one input row.
    fn forward_trace(&self, input: &[f32]) -> Vec<Vec<f32>> {
        let mut pre: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward_into(&cur, &mut z);
            pre.push(z.clone());
            if i != last {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = z;
        }
        pre
    }
}

/// Per-layer gradient accumulators in 64-bit.
struct GradBuffer {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl GradBuffer {
    fn new(mlp: &Mlp) -> Self {
        GradBuffer {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for g in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Trains `mlp` in place by mini-batch SGD on squared error and returns the
/// final epoch's mean loss. Fails if the loss leaves the finite range.
pub fn train_mlp(
    mlp: &mut Mlp,
    inputs: &[Vec<f32>],
    targets: &[f32],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EstimatorError> {
    assert_eq!(inputs.len(), targets.len());
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = GradBuffer::new(mlp);
    let mut final_loss = 0.0;

    for epoch in 0..epochs {
        // Fisher-Yates with the shared stream keeps epochs reproducible.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(batch_size) {
            grads.reset();
            for &idx in batch {
                epoch_loss += backprop(mlp, &inputs[idx], f64::from(targets[idx]), &mut grads);
            }
            let scale = learning_rate / batch.len() as f64;
            for (layer, (gw, gb)) in mlp
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.bias))
            {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w = (f64::from(*w) - scale * g) as f32;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b = (f64::from(*b) - scale * g) as f32;
                }
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(EstimatorError::NonFiniteLoss { epoch });
        }
        final_loss = mean_loss;
    }
    Ok(final_loss)
}

/// Accumulates one sample's gradients and returns its squared error.
fn backprop(mlp: &Mlp, input: &[f32], target: f64, grads: &mut GradBuffer) -> f64 {
    let pre = mlp.forward_trace(input);
    let last = mlp.layers.len() - 1;
    let out = f64::from(pre[last][0]);
    let err = out - target;

    // delta starts at dL/dz for the output layer (identity activation).
    let mut delta = vec![2.0 * err];
    for l in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[l];
        // Post-activation outputs of the previous layer feed this one.
        let prev_act: Vec<f64> = if l == 0 {
            input.iter().map(|&x| f64::from(x)).collect()
        } else {
            pre[l - 1].iter().map(|&z| f64::from(z).max(0.0)).collect()
        };
        for r in 0..layer.rows {
            let d = delta[r];
            grads.bias[l][r] += d;
            let row = &mut grads.weights[l][r * layer.cols..(r + 1) * layer.cols];
            for (g, a) in row.iter_mut().zip(&prev_act) {
                *g += d * a;
            }
        }
        if l > 0 {
            let mut next_delta = vec![0.0f64; layer.cols];
            for r in 0..layer.rows {
                let d = delta[r];
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (nd, w) in next_delta.iter_mut().zip(row) {
                    *nd += d * f64::from(*w);
                }
            }
            // ReLU derivative of the previous layer's pre-activations.
            for (nd, &z) in next_delta.iter_mut().zip(&pre[l - 1]) {
                if z <= 0.0 {
                    *nd = 0.0;
                }
            }
            delta = next_delta;
        }
    }
    err * err
}
