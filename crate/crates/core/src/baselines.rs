//! Prior-art comparison methods: scan the training set for the image with
//! the highest target-class probability, average the closest quartile of
//! the dataset in output space, or gradient-train an input image against
//! an MSE objective. Also the distance-to-training-set metric used to
//! quantify how far synthesized images stray from the data.

use crate::dataio::Dataset;
use crate::linalg::Vector;
use crate::network::{loss_grad_wrt_input, loss_mse, squared_distance, ClassDistribution, Network, NetworkError};
use crate::training::forward_dataset;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class index {class_index} out of range for {classes} classes")]
    ClassOutOfRange { class_index: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("gradient training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineSource {
    DatasetSearch,
    PercentileAverage,
    GradientTrained,
}

/// An image produced by one of the prior-art methods.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub image: Vector,
    pub source: BaselineSource,
    pub achieved: ClassDistribution,
    /// Euclidean distance to the nearest training image. Filled by the
    /// methods that receive the dataset; [`gradient_trained_input`] has no
    /// dataset in scope and leaves NaN for the caller to replace via
    /// [`min_train_distance`].
    pub min_train_distance: f64,
}

fn check_class(net: &Network, class_k: usize) -> Result<(), BaselineError> {
    if class_k >= net.output_dim() {
        return Err(BaselineError::ClassOutOfRange { class_index: class_k, classes: net.output_dim() });
    }
    Ok(())
}

/// The training image whose forward output puts the most probability on
/// `class_k`. Ties resolve to the lowest index, matching an exhaustive
/// scan with strict improvement.
pub fn dataset_search(net: &Network, data: &Dataset, class_k: usize) -> Result<BaselineResult, BaselineError> {
    if data.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    check_class(net, class_k)?;

    let outputs = forward_dataset(net, data);
    let mut best = 0;
    for i in 1..outputs.len() {
        if outputs[i][class_k] > outputs[best][class_k] {
            best = i;
        }
    }
    let image = data.images()[best].clone();
    let achieved = ClassDistribution::from_softmax_output(outputs[best].clone());
    let dist = min_train_distance(&image, data)?;
    Ok(BaselineResult { image, source: BaselineSource::DatasetSearch, achieved, min_train_distance: dist })
}

/// Averages every training image whose output distribution falls in the
/// lowest quartile of Euclidean distances to `target`. Ranks are taken
/// over the sorted distances with ties included, so the selection does not
/// depend on dataset ordering.
pub fn percentile_average(
    net: &Network,
    data: &Dataset,
    target: &ClassDistribution,
) -> Result<BaselineResult, BaselineError> {
    if data.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    if target.len() != net.output_dim() {
        return Err(BaselineError::DimMismatch { expected: net.output_dim(), got: target.len() });
    }

    let outputs = forward_dataset(net, data);
    let distances: Vec<f64> = outputs
        .iter()
        .map(|p| squared_distance(p, target.probs()).sqrt())
        .collect();

    let mut sorted = distances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let quartile = data.len().div_ceil(4);
    let threshold = sorted[quartile - 1];

    let dim = data.image_dim();
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for (image, &d) in data.images().iter().zip(&distances) {
        if d <= threshold {
            for (m, v) in mean.iter_mut().zip(image) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }

    let achieved = ClassDistribution::from_softmax_output(net.forward(&mean)?);
    let dist = min_train_distance(&mean, data)?;
    Ok(BaselineResult {
        image: mean,
        source: BaselineSource::PercentileAverage,
        achieved,
        min_train_distance: dist,
    })
}

fn gradient_descent(
    net: &Network,
    target: &ClassDistribution,
    init: &[f64],
    steps: usize,
    lr: f64,
) -> Result<(Vector, Vec<f64>), BaselineError> {
    let mut x = init.to_vec();
    let mut losses = Vec::with_capacity(steps + 1);
    losses.push(loss_mse(&net.forward(&x)?, target.probs())?);
    for step in 0..steps {
        let grad = loss_grad_wrt_input(net, &x, target.probs())?;
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= lr * g;
        }
        let loss = loss_mse(&net.forward(&x)?, target.probs())?;
        if !loss.is_finite() {
            return Err(BaselineError::Divergence { step });
        }
        losses.push(loss);
    }
    Ok((x, losses))
}

/// Gradient descent on `loss_mse(forward(net, x), target)` with respect to
/// the image itself, starting from `init` (conventionally the
/// dataset-search result).
pub fn gradient_trained_input(
    net: &Network,
    target: &ClassDistribution,
    init: &[f64],
    steps: usize,
    lr: f64,
) -> Result<BaselineResult, BaselineError> {
    if init.len() != net.input_dim() {
        return Err(BaselineError::DimMismatch { expected: net.input_dim(), got: init.len() });
    }
    if target.len() != net.output_dim() {
        return Err(BaselineError::DimMismatch { expected: net.output_dim(), got: target.len() });
    }
    let (image, _losses) = gradient_descent(net, target, init, steps, lr)?;
    let achieved = ClassDistribution::from_softmax_output(net.forward(&image)?);
    Ok(BaselineResult {
        image,
        source: BaselineSource::GradientTrained,
        achieved,
        min_train_distance: f64::NAN,
    })
}

/// Minimum Euclidean distance from `x` to any training image.
pub fn min_train_distance(x: &[f64], data: &Dataset) -> Result<f64, BaselineError> {
    if data.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    if x.len() != data.image_dim() {
        return Err(BaselineError::DimMismatch { expected: data.image_dim(), got: x.len() });
    }
    let min_sq = data
        .images()
        .par_iter()
        .map(|image| squared_distance(x, image))
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min_sq.sqrt())
}
