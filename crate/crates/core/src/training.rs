//! SGD-with-momentum trainer for the softmax classifiers, plus accuracy
//! evaluation. Training is batched: each step assembles a batch matrix and
//! runs dense forward/backward products, so the heavy lifting stays in the
//! matrix kernels. Results are bitwise deterministic for a fixed seed.

use crate::dataio::Dataset;
use crate::linalg::{Matrix, Vector};
use crate::network::{softmax_raw, ActivationKind, LinearLayer, Network, NetworkError};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("image dim {got} does not match network input dim {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} output classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training requires a softmax classifier")]
    NotAClassifier,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Optimizer hyperparameters. The reference setup is lr 0.001, momentum
/// 0.9, 20 epochs, batch 32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, momentum: 0.9, epochs: 20, batch_size: 32, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig { reason: "learning_rate must be > 0" });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig { reason: "momentum must be in [0, 1)" });
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig { reason: "epochs must be >= 1" });
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig { reason: "batch_size must be >= 1" });
        }
        Ok(())
    }
}

/// Builds a feed-forward classifier with the given layer dimensions, every
/// layer followed by `activation`, weights and biases drawn uniformly from
/// +-1/sqrt(fan_in).
pub fn init_mlp(dims: &[usize], activation: ActivationKind, seed: u64) -> Result<Network, NetworkError> {
    assert!(dims.len() >= 2, "need at least input and output dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
        let bias: Vector = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        layers.push(LinearLayer::new(weight, bias, activation)?);
    }
    Network::new(layers, true)
}

/// Layer dimensions used by the reference experiments: 784 in, 10 out,
/// hidden width 128.
pub fn mlp_dims(n_layers: usize) -> Vec<usize> {
    assert!(n_layers >= 1);
    let mut dims = vec![784];
    dims.extend(std::iter::repeat(128).take(n_layers - 1));
    dims.push(10);
    dims
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if data.image_dim() != net.input_dim() {
        return Err(TrainError::InputDimMismatch { expected: net.input_dim(), got: data.image_dim() });
    }
    let classes = net.output_dim();
    for &label in data.labels() {
        if label >= classes {
            return Err(TrainError::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

/// Row-wise `X W^T + b`.
fn layer_forward_batch(layer: &LinearLayer, input: &Matrix) -> Matrix {
    let mut z = input.matmul_nt(layer.weight());
    for i in 0..z.rows() {
        let row = z.row_mut(i);
        for (v, b) in row.iter_mut().zip(layer.bias()) {
            *v += b;
        }
    }
    z
}

fn apply_batch(activation: ActivationKind, z: &Matrix) -> Matrix {
    let mut a = z.clone();
    for v in a.data_mut() {
        *v = activation.apply_scalar(*v);
    }
    a
}

/// Cross-entropy gradients for one batch. Returns per-layer weight and
/// bias gradients plus the mean batch loss.
fn batch_gradients(
    net: &Network,
    batch: &Matrix,
    labels: &[usize],
) -> (Vec<Matrix>, Vec<Vector>, f64) {
    let n_layers = net.layers().len();
    let b = batch.rows();

    // Forward, keeping pre-activations and activations per layer.
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::with_capacity(n_layers);
    for (i, layer) in net.layers().iter().enumerate() {
        let input = if i == 0 { batch } else { &post[i - 1] };
        let z = layer_forward_batch(layer, input);
        let a = apply_batch(layer.activation(), &z);
        pre.push(z);
        post.push(a);
    }

    // Softmax rows and cross-entropy loss.
    let logits = &post[n_layers - 1];
    let classes = logits.cols();
    let mut probs = Matrix::zeros(b, classes);
    let mut loss = 0.0;
    for i in 0..b {
        let p = softmax_raw(logits.row(i));
        loss -= p[labels[i]].max(1e-300).ln();
        probs.row_mut(i).copy_from_slice(&p);
    }
    loss /= b as f64;

    // Backward: start from d(loss)/d(logits) = (P - Y)/B.
    let mut upstream = probs;
    for i in 0..b {
        let v = upstream.get(i, labels[i]) - 1.0;
        upstream.set(i, labels[i], v);
    }
    for v in upstream.data_mut() {
        *v /= b as f64;
    }

    let mut d_weights = vec![Matrix::zeros(0, 0); n_layers];
    let mut d_biases = vec![Vector::new(); n_layers];
    for i in (0..n_layers).rev() {
        let layer = &net.layers()[i];
        // Through the activation.
        let z = &pre[i];
        let mut dz = upstream;
        for (v, zv) in dz.data_mut().iter_mut().zip(z.data()) {
            *v *= layer.activation().derivative_scalar(*zv);
        }
        let input = if i == 0 { batch } else { &post[i - 1] };
        d_weights[i] = dz.matmul_tn(input);
        let mut db = vec![0.0; dz.cols()];
        for r in 0..dz.rows() {
            for (acc, v) in db.iter_mut().zip(dz.row(r)) {
                *acc += v;
            }
        }
        d_biases[i] = db;
        upstream = if i > 0 { dz.matmul(layer.weight()) } else { dz };
    }

    (d_weights, d_biases, loss)
}

/// Trains with SGD + momentum, returning the trained network and the mean
/// cross-entropy per epoch. Deterministic for a fixed seed: the epoch
/// shuffle and every reduction use a fixed order.
pub fn train_traced(
    net: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<f64>), TrainError> {
    cfg.validate()?;
    check_compatible(net, data)?;
    if !net.has_softmax() {
        return Err(TrainError::NotAClassifier);
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let dim = data.image_dim();

    let mut vel_w: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|l| Matrix::zeros(l.weight().rows(), l.weight().cols()))
        .collect();
    let mut vel_b: Vec<Vector> = net.layers().iter().map(|l| vec![0.0; l.bias().len()]).collect();

    let mut indices: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Matrix::zeros(bs, dim);
    let mut labels = vec![0usize; bs];

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut start = 0;
        while start + bs <= n {
            for (slot, &idx) in indices[start..start + bs].iter().enumerate() {
                batch.row_mut(slot).copy_from_slice(&data.images()[idx]);
                labels[slot] = data.labels()[idx];
            }
            let (dw, db, loss) = batch_gradients(&net, &batch, &labels);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            loss_sum += loss;
            batches += 1;

            for (i, layer) in net.layers_mut().iter_mut().enumerate() {
                let vw = vel_w[i].data_mut();
                for ((v, g), w) in vw.iter_mut().zip(dw[i].data()).zip(layer.weight_mut().data_mut())
                {
                    *v = cfg.momentum * *v + g;
                    *w -= cfg.learning_rate * *v;
                }
                for ((v, g), b) in vel_b[i].iter_mut().zip(&db[i]).zip(layer.bias_mut()) {
                    *v = cfg.momentum * *v + g;
                    *b -= cfg.learning_rate * *v;
                }
            }
            start += bs;
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
    }

    Ok((net, epoch_losses))
}

/// Trains with SGD + momentum; see [`train_traced`] for the loss history.
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network, TrainError> {
    train_traced(net, data, cfg).map(|(net, _)| net)
}

/// Fraction of samples whose argmax output matches the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64, TrainError> {
    check_compatible(net, data)?;

    let chunk = 512;
    let pairs: Vec<(usize, usize)> = (0..data.len()).step_by(chunk).map(|s| (s, (s + chunk).min(data.len()))).collect();
    let correct: usize = pairs
        .par_iter()
        .map(|&(start, end)| {
            let rows = end - start;
            let mut block = Matrix::zeros(rows, data.image_dim());
            for (slot, idx) in (start..end).enumerate() {
                block.row_mut(slot).copy_from_slice(&data.images()[idx]);
            }
            let mut a = block;
            for layer in net.layers() {
                let z = layer_forward_batch(layer, &a);
                a = apply_batch(layer.activation(), &z);
            }
            // Softmax is monotone per row; argmax on the logits suffices.
            let mut hits = 0usize;
            for (slot, idx) in (start..end).enumerate() {
                let row = a.row(slot);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if best == data.labels()[idx] {
                    hits += 1;
                }
            }
            hits
        })
        .sum();

    Ok(correct as f64 / data.len() as f64)
}

/// Batched probability outputs for a full dataset; used by the baselines
/// to score every training image.
pub(crate) fn forward_dataset(net: &Network, data: &Dataset) -> Vec<Vector> {
    let chunk = 512;
    let pairs: Vec<(usize, usize)> = (0..data.len()).step_by(chunk).map(|s| (s, (s + chunk).min(data.len()))).collect();
    let blocks: Vec<Vec<Vector>> = pairs
        .par_iter()
        .map(|&(start, end)| {
            let rows = end - start;
            let mut block = Matrix::zeros(rows, data.image_dim());
            for (slot, idx) in (start..end).enumerate() {
                block.row_mut(slot).copy_from_slice(&data.images()[idx]);
            }
            let mut a = block;
            for layer in net.layers() {
                let z = layer_forward_batch(layer, &a);
                a = apply_batch(layer.activation(), &z);
            }
            (0..rows)
                .map(|r| if net.has_softmax() { softmax_raw(a.row(r)) } else { a.row(r).to_vec() })
                .collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}
