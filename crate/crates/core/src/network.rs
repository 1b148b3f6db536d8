//! The classification network under study: linear layers with invertible
//! elementwise activations and a terminal softmax, together with the
//! primitives the inversion engines need — traced evaluation, the analytic
//! input Jacobian, and closed-form activation/softmax inverses.

use crate::linalg::{Matrix, Vector};
use thiserror::Error;

/// Scale constant of the SELU activation.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// Negative-branch constant of the SELU activation.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Inverted components above this magnitude are reported as unbounded
/// growth: far beyond anything a trained layer produces, well inside
/// double range.
pub const GROWTH_LIMIT: f64 = 1e6;

/// SELU inputs within this distance of the -lambda*alpha asymptote are
/// rejected as non-invertible; the log blows up and the inverse is
/// hopelessly ill-conditioned there.
const SELU_ASYMPTOTE_GUARD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("network must contain at least one layer")]
    EmptyNetwork,
    #[error("bias length {bias} does not match weight rows {rows}")]
    BiasMismatch { bias: usize, rows: usize },
    #[error("layer {index} expects input dim {expected}, previous layer outputs {got}")]
    LayerChainMismatch { index: usize, expected: usize, got: usize },
    #[error("softmax needs at least 2 classes, got {got}")]
    TooFewClasses { got: usize },
    #[error("leaky-relu slope must be positive, got {slope}")]
    InvalidSlope { slope: f64 },
    #[error("probability {value} at index {index} is outside (0, 1)")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("value {value} at index {index} is outside the invertible domain of the activation")]
    NonInvertibleValue { index: usize, value: f64 },
    #[error("inverted value {value} at index {index} exceeds the growth limit")]
    UnboundedInversion { index: usize, value: f64 },
}

/// Elementwise activation with a closed-form inverse on its range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Identity,
    LeakyRelu { slope: f64 },
    Selu,
}

impl ActivationKind {
    /// Conventional leaky-relu slope when none is specified.
    pub fn leaky_relu_default() -> Self {
        ActivationKind::LeakyRelu { slope: 0.01 }
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if let ActivationKind::LeakyRelu { slope } = *self {
            if !(slope > 0.0) || !slope.is_finite() {
                return Err(NetworkError::InvalidSlope { slope });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply_scalar(&self, v: f64) -> f64 {
        match *self {
            ActivationKind::Identity => v,
            ActivationKind::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            ActivationKind::Selu => {
                if v > 0.0 {
                    SELU_LAMBDA * v
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
                }
            }
        }
    }

    #[inline]
    pub fn derivative_scalar(&self, v: f64) -> f64 {
        match *self {
            ActivationKind::Identity => 1.0,
            ActivationKind::LeakyRelu { slope } => {
                if v > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Selu => {
                if v > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * v.exp()
                }
            }
        }
    }

    fn inverse_scalar(&self, v: f64, index: usize) -> Result<f64, NetworkError> {
        let inv = match *self {
            ActivationKind::Identity => v,
            ActivationKind::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    v / slope
                }
            }
            ActivationKind::Selu => {
                if v > 0.0 {
                    v / SELU_LAMBDA
                } else {
                    let floor = -SELU_LAMBDA * SELU_ALPHA;
                    if v <= floor + SELU_ASYMPTOTE_GUARD {
                        return Err(NetworkError::NonInvertibleValue { index, value: v });
                    }
                    (v / (SELU_LAMBDA * SELU_ALPHA) + 1.0).ln()
                }
            }
        };
        if !inv.is_finite() || inv.abs() > GROWTH_LIMIT {
            return Err(NetworkError::UnboundedInversion { index, value: inv });
        }
        Ok(inv)
    }

    /// Applies the activation elementwise.
    pub fn apply(&self, v: &[f64]) -> Vector {
        v.iter().map(|&x| self.apply_scalar(x)).collect()
    }

    /// Inverts the activation elementwise. Fails on components outside the
    /// activation's open range or whose inverse grows unbounded.
    pub fn inverse(&self, v: &[f64]) -> Result<Vector, NetworkError> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| self.inverse_scalar(x, i))
            .collect()
    }
}

/// One dense layer: `phi(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weight: Matrix,
    bias: Vector,
    activation: ActivationKind,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vector, activation: ActivationKind) -> Result<Self, NetworkError> {
        if bias.len() != weight.rows() {
            return Err(NetworkError::BiasMismatch { bias: bias.len(), rows: weight.rows() });
        }
        if !bias.iter().all(|x| x.is_finite()) {
            return Err(NetworkError::NonFinite);
        }
        activation.validate()?;
        Ok(Self { weight, bias, activation })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Ordered stack of linear layers, optionally capped by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LinearLayer>,
    has_softmax: bool,
}

impl Network {
    pub fn new(layers: Vec<LinearLayer>, has_softmax: bool) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::EmptyNetwork);
        }
        for i in 1..layers.len() {
            if layers[i].input_dim() != layers[i - 1].output_dim() {
                return Err(NetworkError::LayerChainMismatch {
                    index: i,
                    expected: layers[i].input_dim(),
                    got: layers[i - 1].output_dim(),
                });
            }
        }
        let out = layers.last().unwrap().output_dim();
        if has_softmax && out < 2 {
            return Err(NetworkError::TooFewClasses { got: out });
        }
        Ok(Self { layers, has_softmax })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn has_softmax(&self) -> bool {
        self.has_softmax
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(NetworkError::NonFinite);
        }
        Ok(())
    }

    /// Evaluates the network. With softmax the output is a probability
    /// vector summing to 1.
    pub fn forward(&self, x: &[f64]) -> Result<Vector, NetworkError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            a = layer.activation.apply(&z);
        }
        if self.has_softmax {
            a = softmax_raw(&a);
        }
        Ok(a)
    }

    /// Evaluates the network recording every pre- and post-activation.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NetworkError> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            a = layer.activation.apply(&z);
            pre.push(z);
            post.push(a.clone());
        }
        let output = if self.has_softmax { softmax_raw(&a) } else { a };
        Ok(ForwardTrace { pre_activations: pre, post_activations: post, output })
    }

    /// Analytic Jacobian of the network output with respect to the input,
    /// accumulated in reverse from the output side. Row i holds the
    /// gradient of output component i; with softmax every row sums to zero
    /// because the outputs sum to a constant.
    pub fn jacobian_wrt_input(&self, x: &[f64]) -> Result<Matrix, NetworkError> {
        let trace = self.forward_trace(x)?;
        let c = self.output_dim();

        let mut m = if self.has_softmax {
            let p = &trace.output;
            Matrix::from_fn(c, c, |i, j| {
                if i == j {
                    p[i] * (1.0 - p[i])
                } else {
                    -p[i] * p[j]
                }
            })
        } else {
            Matrix::identity(c)
        };

        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[idx];
            // Column-scale by the activation derivative, then push through W.
            for row in 0..m.rows() {
                let r = m.row_mut(row);
                for (j, val) in r.iter_mut().enumerate() {
                    *val *= layer.activation.derivative_scalar(z[j]);
                }
            }
            m = m.matmul(&layer.weight);
        }
        Ok(m)
    }
}

/// Per-layer evaluation record: pre-activations, post-activations, and the
/// final output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pre_activations: Vec<Vector>,
    post_activations: Vec<Vector>,
    output: Vector,
}

impl ForwardTrace {
    pub fn pre_activations(&self) -> &[Vector] {
        &self.pre_activations
    }

    pub fn post_activations(&self) -> &[Vector] {
        &self.post_activations
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre_activations.is_empty()
    }
}

/// Strictly positive probability vector summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vector,
}

impl ClassDistribution {
    /// Validates every entry lies strictly in (0, 1) and the total is 1
    /// within 1e-9.
    pub fn new(probs: Vector) -> Result<Self, NetworkError> {
        if probs.len() < 2 {
            return Err(NetworkError::TooFewClasses { got: probs.len() });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                return Err(NetworkError::InvalidProbability { index: i, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NetworkError::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    /// Wraps a softmax output without re-validation. Softmax guarantees a
    /// unit sum, but extreme logits can underflow single entries to exact
    /// zero, which `new` would reject.
    pub(crate) fn from_softmax_output(probs: Vector) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-subtracted softmax on a raw slice; no validation.
pub(crate) fn softmax_raw(z: &[f64]) -> Vector {
    let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vector = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<ClassDistribution, NetworkError> {
    if z.len() < 2 {
        return Err(NetworkError::TooFewClasses { got: z.len() });
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(NetworkError::NonFinite);
    }
    Ok(ClassDistribution::from_softmax_output(softmax_raw(z)))
}

/// Inverts softmax up to its additive constant, fixing the constant so the
/// returned logits have zero mean: `z_i = log(y_i) - mean(log(y))`.
pub fn softmax_inverse(y: &ClassDistribution) -> Result<Vector, NetworkError> {
    let probs = y.probs();
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0) {
            return Err(NetworkError::InvalidProbability { index: i, value: p });
        }
    }
    let logs: Vector = probs.iter().map(|&p| p.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.iter().map(|&l| l - mean).collect())
}

/// Mean squared error between two equal-length vectors.
pub fn loss_mse(y_hat: &[f64], y: &[f64]) -> Result<f64, NetworkError> {
    if y_hat.len() != y.len() {
        return Err(NetworkError::ShapeMismatch { expected: y.len(), got: y_hat.len() });
    }
    let n = y.len().max(1);
    let sum: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / n as f64)
}

/// Gradient of `loss_mse(forward(net, x), y)` with respect to `x`:
/// `(2/c) * J^T (y_hat - y)`.
pub fn loss_grad_wrt_input(net: &Network, x: &[f64], y: &[f64]) -> Result<Vector, NetworkError> {
    if y.len() != net.output_dim() {
        return Err(NetworkError::ShapeMismatch { expected: net.output_dim(), got: y.len() });
    }
    let y_hat = net.forward(x)?;
    let j = net.jacobian_wrt_input(x)?;
    let c = y.len() as f64;
    let resid: Vector = y_hat.iter().zip(y).map(|(a, b)| (a - b) * 2.0 / c).collect();
    Ok(j.matvec_transposed(&resid))
}

/// Squared Euclidean distance helper used across modules.
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_near(a: f64, b: f64, tol: f64, msg: &str) {
        assert!((a - b).abs() <= tol, "{msg}: {a} vs {b} (diff {})", (a - b).abs());
    }

    fn identity_softmax_net(n: usize) -> Network {
        let layer = LinearLayer::new(Matrix::identity(n), vec![0.0; n], ActivationKind::Identity).unwrap();
        Network::new(vec![layer], true).unwrap()
    }

    fn random_net(dims: &[usize], activation: ActivationKind, rng: &mut ChaCha8Rng) -> Network {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (input, output) = (w[0], w[1]);
                let weight = Matrix::from_fn(output, input, |_, _| rng.gen_range(-0.5..0.5));
                let bias: Vector = (0..output).map(|_| rng.gen_range(-0.5..0.5)).collect();
                LinearLayer::new(weight, bias, activation).unwrap()
            })
            .collect();
        Network::new(layers, true).unwrap()
    }

    #[test]
    fn forward_symmetric_input() {
        let net = identity_softmax_net(2);
        let out = net.forward(&[0.0, 0.0]).unwrap();
        assert_near(out[0], 0.5, 1e-15, "p0");
        assert_near(out[1], 0.5, 1e-15, "p1");
    }

    #[test]
    fn forward_ln3_input() {
        let net = identity_softmax_net(2);
        let out = net.forward(&[3.0f64.ln(), 0.0]).unwrap();
        assert_near(out[0], 0.75, 1e-12, "p0 = e^{ln3}/(3+1)");
        assert_near(out[1], 0.25, 1e-12, "p1");
    }

    #[test]
    fn forward_output_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = random_net(&[5, 8, 4], ActivationKind::Selu, &mut rng);
        for _ in 0..20 {
            let x: Vector = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let out = net.forward(&x).unwrap();
            let sum: f64 = out.iter().sum();
            assert_near(sum, 1.0, 1e-12, "softmax normalization");
        }
    }

    #[test]
    fn forward_rejects_bad_shape() {
        let net = identity_softmax_net(2);
        assert!(matches!(net.forward(&[1.0]), Err(NetworkError::ShapeMismatch { .. })));
        assert!(matches!(net.forward(&[1.0, f64::NAN]), Err(NetworkError::NonFinite)));
    }

    #[test]
    fn trace_matches_forward_and_recomputes() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = random_net(&[6, 10, 10, 10, 10, 10, 4], ActivationKind::Selu, &mut rng);
        assert_eq!(net.layers().len(), 6);
        let x: Vector = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let trace = net.forward_trace(&x).unwrap();
        assert_eq!(trace.len(), 6);
        let fwd = net.forward(&x).unwrap();
        assert_eq!(trace.output(), fwd.as_slice());

        // pre_activation[i] must equal W_i * post_activation[i-1] + b_i.
        for (i, layer) in net.layers().iter().enumerate() {
            let prev: &[f64] = if i == 0 { &x } else { &trace.post_activations()[i - 1] };
            let mut z = layer.weight().matvec(prev);
            for (zi, bi) in z.iter_mut().zip(layer.bias()) {
                *zi += bi;
            }
            for (a, b) in z.iter().zip(&trace.pre_activations()[i]) {
                assert_near(*a, *b, 1e-12, "per-layer recompute");
            }
        }
    }

    #[test]
    fn single_layer_trace_length() {
        let net = identity_softmax_net(3);
        let trace = net.forward_trace(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn softmax_uniform() {
        let d = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for &p in d.probs() {
            assert_near(p, 1.0 / 3.0, 1e-15, "uniform");
        }
    }

    #[test]
    fn softmax_large_inputs_no_overflow() {
        let d = softmax(&[1000.0, 1000.0]).unwrap();
        assert_near(d.probs()[0], 0.5, 1e-15, "p0");
        assert_near(d.probs()[1], 0.5, 1e-15, "p1");
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let a = softmax(&z).unwrap();
        let shifted: Vector = z.iter().map(|v| v + 17.5).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert_near(*x, *y, 1e-12, "shift invariance");
        }
    }

    #[test]
    fn softmax_inverse_uniform_is_zero() {
        let y = ClassDistribution::new(vec![0.25; 4]).unwrap();
        let z = softmax_inverse(&y).unwrap();
        for v in z {
            assert_near(v, 0.0, 1e-15, "uniform logits");
        }
    }

    #[test]
    fn softmax_inverse_frozen_example() {
        // logs: ln 0.9, ln 0.05, ln 0.05; subtract their mean.
        let y = ClassDistribution::new(vec![0.9, 0.05, 0.05]).unwrap();
        let z = softmax_inverse(&y).unwrap();
        let logs = [0.9f64.ln(), 0.05f64.ln(), 0.05f64.ln()];
        let mean = logs.iter().sum::<f64>() / 3.0;
        assert_near(z[0], logs[0] - mean, 1e-12, "z0");
        assert_near(z[0], 1.92691, 1e-5, "z0 value");
        assert_near(z[1], -0.96346, 1e-5, "z1 value");
        assert_near(z[2], z[1], 1e-12, "symmetry");

        let round = softmax(&z).unwrap();
        for (a, b) in round.probs().iter().zip(y.probs()) {
            assert_near(*a, *b, 1e-10, "round trip");
        }
    }

    #[test]
    fn softmax_inverse_zero_mean_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let raw: Vector = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let y = ClassDistribution::new(raw.iter().map(|v| v / sum).collect()).unwrap();
            let z = softmax_inverse(&y).unwrap();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            assert_near(mean, 0.0, 1e-12, "zero mean");
            let round = softmax(&z).unwrap();
            for (a, b) in round.probs().iter().zip(y.probs()) {
                assert_near(*a, *b, 1e-10, "round trip");
            }
        }
    }

    #[test]
    fn selu_values() {
        let selu = ActivationKind::Selu;
        assert_near(selu.apply_scalar(0.0), 0.0, 0.0, "selu(0)");
        assert_near(selu.apply_scalar(1.0), SELU_LAMBDA, 0.0, "selu(1)");
        // Far negative saturates toward -lambda*alpha.
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-50.0f64).exp() - 1.0);
        assert_near(selu.apply_scalar(-50.0), expected, 0.0, "selu(-50)");
        assert_near(expected, -SELU_LAMBDA * SELU_ALPHA, 1e-12, "asymptote");
    }

    #[test]
    fn selu_inverse_values() {
        let selu = ActivationKind::Selu;
        assert_near(selu.inverse(&[0.0]).unwrap()[0], 0.0, 0.0, "inv(0)");
        assert_near(selu.inverse(&[SELU_LAMBDA]).unwrap()[0], 1.0, 1e-15, "inv(lambda)");
    }

    #[test]
    fn selu_inverse_rejects_asymptote_region() {
        let selu = ActivationKind::Selu;
        // -1.7581 sits below -lambda*alpha ~ -1.75810: outside the range.
        let err = selu.inverse(&[-1.7581]).unwrap_err();
        assert!(matches!(err, NetworkError::NonInvertibleValue { .. }), "{err:?}");
        let below = -SELU_LAMBDA * SELU_ALPHA - 0.1;
        assert!(selu.inverse(&[below]).is_err());
    }

    #[test]
    fn activation_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for kind in [
            ActivationKind::Selu,
            ActivationKind::leaky_relu_default(),
            ActivationKind::Identity,
        ] {
            for _ in 0..200 {
                let v = rng.gen_range(-1.5..5.0);
                let w = kind.apply_scalar(v);
                let back = kind.inverse(&[w]).unwrap()[0];
                assert_near(back, v, 1e-9, "round trip");
            }
        }
    }

    #[test]
    fn jacobian_identity_softmax_frozen() {
        let net = identity_softmax_net(2);
        let j = net.jacobian_wrt_input(&[0.0, 0.0]).unwrap();
        assert_near(j.get(0, 0), 0.25, 1e-12, "j00");
        assert_near(j.get(0, 1), -0.25, 1e-12, "j01");
        assert_near(j.get(1, 0), -0.25, 1e-12, "j10");
        assert_near(j.get(1, 1), 0.25, 1e-12, "j11");
    }

    #[test]
    fn jacobian_output_sums_are_constant() {
        // The outputs sum to the constant 1, so differentiating along any
        // input coordinate sums to zero across outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let net = random_net(&[7, 12, 5], ActivationKind::Selu, &mut rng);
        let x: Vector = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let j = net.jacobian_wrt_input(&x).unwrap();
        for col in 0..j.cols() {
            let sum: f64 = (0..j.rows()).map(|i| j.get(i, col)).sum();
            assert_near(sum, 0.0, 1e-12, "column sum over outputs");
        }
    }

    /// Central finite-difference Jacobian oracle.
    fn finite_diff_jacobian(net: &Network, x: &[f64], h: f64) -> Matrix {
        let c = net.output_dim();
        let d = x.len();
        Matrix::from_fn(c, d, |i, j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = net.forward(&xp).unwrap();
            let fm = net.forward(&xm).unwrap();
            (fp[i] - fm[i]) / (2.0 * h)
        })
    }

    /// Draws inputs whose pre-activations stay clear of the SELU kink so the
    /// finite-difference window never straddles the derivative jump.
    fn draw_clear_of_kinks(net: &Network, rng: &mut ChaCha8Rng) -> Vector {
        'outer: for _ in 0..200 {
            let x: Vector = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let trace = net.forward_trace(&x).unwrap();
            for z in trace.pre_activations() {
                if z.iter().any(|v| v.abs() < 1e-3) {
                    continue 'outer;
                }
            }
            return x;
        }
        panic!("could not find kink-free input");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let configs: &[(&[usize], ActivationKind)] = &[
            (&[4, 3], ActivationKind::Identity),
            (&[6, 16, 5], ActivationKind::Selu),
            (&[5, 12, 12, 4], ActivationKind::leaky_relu_default()),
            (&[8, 32, 64, 32, 16, 8, 4], ActivationKind::Selu),
        ];
        for (dims, act) in configs {
            let net = random_net(dims, *act, &mut rng);
            let x = draw_clear_of_kinks(&net, &mut rng);
            let analytic = net.jacobian_wrt_input(&x).unwrap();
            let numeric = finite_diff_jacobian(&net, &x, 1e-5);
            for i in 0..analytic.rows() {
                for j in 0..analytic.cols() {
                    let a = analytic.get(i, j);
                    let n = numeric.get(i, j);
                    let tol = (1e-4 * a.abs()).max(1e-7);
                    assert!(
                        (a - n).abs() <= tol,
                        "jacobian mismatch at ({i},{j}) for {dims:?}: {a} vs {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn mse_examples() {
        assert_near(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0, 0.0, "identical");
        assert_near(loss_mse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0, 0.0, "unit");
        assert!(matches!(loss_mse(&[1.0], &[1.0, 2.0]), Err(NetworkError::ShapeMismatch { .. })));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = random_net(&[5, 10, 3], ActivationKind::Selu, &mut rng);
        let x = draw_clear_of_kinks(&net, &mut rng);
        let y: Vector = {
            let raw: Vector = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let grad = loss_grad_wrt_input(&net, &x, &y).unwrap();
        let h = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let lp = loss_mse(&net.forward(&xp).unwrap(), &y).unwrap();
            let lm = loss_mse(&net.forward(&xm).unwrap(), &y).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            assert_near(grad[j], numeric, 1e-5, "mse gradient");
        }
    }

    #[test]
    fn class_distribution_validation() {
        assert!(ClassDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            ClassDistribution::new(vec![1.0, 0.0]),
            Err(NetworkError::InvalidProbability { .. })
        ));
        assert!(matches!(
            ClassDistribution::new(vec![0.6, 0.6]),
            Err(NetworkError::NotNormalized { .. })
        ));
        assert!(matches!(
            ClassDistribution::new(vec![0.9]),
            Err(NetworkError::TooFewClasses { .. })
        ));
    }

    #[test]
    fn network_validation() {
        let l1 = LinearLayer::new(Matrix::identity(3), vec![0.0; 3], ActivationKind::Identity).unwrap();
        let l2 = LinearLayer::new(Matrix::zeros(2, 4), vec![0.0; 2], ActivationKind::Identity).unwrap();
        assert!(matches!(
            Network::new(vec![l1, l2], true),
            Err(NetworkError::LayerChainMismatch { .. })
        ));
        assert!(matches!(Network::new(vec![], true), Err(NetworkError::EmptyNetwork)));
        assert!(matches!(
            LinearLayer::new(Matrix::identity(3), vec![0.0; 2], ActivationKind::Identity),
            Err(NetworkError::BiasMismatch { .. })
        ));
        assert!(matches!(
            LinearLayer::new(Matrix::identity(2), vec![0.0; 2], ActivationKind::LeakyRelu { slope: 0.0 }),
            Err(NetworkError::InvalidSlope { .. })
        ));
    }
}
