//! The two inversion engines.
//!
//! The forward-pass engine treats inversion as root finding on the softmax
//! output: starting from a random guess it runs Levenberg-Marquardt steps
//! using the analytic input Jacobian, accepting a step only when the
//! residual shrinks. It places no structural restriction on the network.
//!
//! The backward-pass engine walks a softmax classifier top-down: invert the
//! softmax up to its constant, invert each activation in closed form, and
//! undo each linear layer with a condition-capped pseudoinverse. At every
//! linear layer it adds a random vector from the layer's null space —
//! directions the layer maps to zero — so repeated runs generate distinct
//! preimages with identical outputs. Singular directions dropped by the
//! condition cap are sampled too; they are unusable for reconstruction
//! either way.
//!
//! Both engines finish by re-evaluating the network on the synthesized
//! input and reporting whether it reproduces the requested distribution.

use crate::linalg::{
    cap_truncated_directions, norm2, null_space_basis, pseudoinverse_capped, solve_normal_damped,
    svd, LinalgError, Matrix, Vector,
};
use crate::network::{softmax_inverse, ClassDistribution, Network, NetworkError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

/// Infinity-norm tolerance for exact-mode verification.
pub const EXACT_TOLERANCE: f64 = 1e-3;
/// Class-threshold verification: required probability on the target class.
pub const CLASS_TARGET_MIN: f64 = 0.9;
/// Class-threshold verification: allowed probability on every other class.
pub const CLASS_OTHER_MAX: f64 = 0.1;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("target has {got} classes, network outputs {expected}")]
    TargetDimMismatch { expected: usize, got: usize },
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error("backward inversion requires a softmax classifier")]
    RequiresSoftmax,
    #[error("layer {layer}: value outside the invertible domain: {source}")]
    NonInvertibleActivation { layer: usize, source: NetworkError },
    #[error("layer {layer}: inversion grew unbounded (|{value}| exceeds the growth limit)")]
    UnboundedGrowth { layer: usize, value: f64 },
    #[error("non-finite value during iteration")]
    NumericFailure,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// How synthesized inputs are checked against the requested distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifyMode {
    /// `||forward(net, x) - target||_inf <= 1e-3`.
    Exact,
    /// Probability of the target class >= 0.9 and every other <= 0.1.
    #[default]
    ClassThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Forward,
    Backward,
}

/// Outcome of one inversion run.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub input: Vector,
    pub achieved: ClassDistribution,
    pub verified: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub method: Method,
}

/// Levenberg-Marquardt settings for the forward-pass engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardInvConfig {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub mu_init: f64,
    pub mu_up: f64,
    pub mu_down: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Fresh random restarts allowed after a failed attempt.
    pub restarts: usize,
    pub verify_mode: VerifyMode,
}

impl Default for ForwardInvConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            residual_tolerance: 1e-6,
            mu_init: 1e-3,
            mu_up: 10.0,
            mu_down: 0.1,
            seed: 0,
            init_scale: 0.5,
            restarts: 5,
            verify_mode: VerifyMode::ClassThreshold,
        }
    }
}

impl ForwardInvConfig {
    fn validate(&self) -> Result<(), InversionError> {
        if self.max_iterations < 1 {
            return Err(InversionError::InvalidConfig { reason: "max_iterations must be >= 1" });
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(InversionError::InvalidConfig { reason: "residual_tolerance must be > 0" });
        }
        if !(self.mu_init > 0.0) {
            return Err(InversionError::InvalidConfig { reason: "mu_init must be > 0" });
        }
        if !(self.mu_up > 1.0) {
            return Err(InversionError::InvalidConfig { reason: "mu_up must be > 1" });
        }
        if !(self.mu_down > 0.0 && self.mu_down < 1.0) {
            return Err(InversionError::InvalidConfig { reason: "mu_down must be in (0, 1)" });
        }
        Ok(())
    }
}

/// Settings for the backward-pass engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackInvConfig {
    /// Null-space sampling scale, relative to the pseudoinverse solution.
    pub std: f64,
    /// Condition cap applied when inverting each weight matrix.
    pub cond_cap: f64,
    /// Magnitude at which an inverted value counts as unbounded.
    pub growth_limit: f64,
    pub seed: u64,
    pub verify_mode: VerifyMode,
}

impl Default for BackInvConfig {
    fn default() -> Self {
        Self {
            std: 0.1,
            cond_cap: 100.0,
            growth_limit: 1e6,
            seed: 0,
            verify_mode: VerifyMode::ClassThreshold,
        }
    }
}

impl BackInvConfig {
    fn validate(&self) -> Result<(), InversionError> {
        if !(self.std >= 0.0) {
            return Err(InversionError::InvalidConfig { reason: "std must be >= 0" });
        }
        if !(self.cond_cap >= 1.0) {
            return Err(InversionError::InvalidConfig { reason: "cond_cap must be >= 1" });
        }
        if !(self.growth_limit > 0.0) {
            return Err(InversionError::InvalidConfig { reason: "growth_limit must be > 0" });
        }
        Ok(())
    }
}

/// Re-evaluates the network on `x` and checks the output against `target`.
pub fn verify(net: &Network, x: &[f64], target: &ClassDistribution, mode: VerifyMode) -> bool {
    let Ok(out) = net.forward(x) else {
        return false;
    };
    if out.len() != target.len() {
        return false;
    }
    match mode {
        VerifyMode::Exact => out
            .iter()
            .zip(target.probs())
            .all(|(a, b)| (a - b).abs() <= EXACT_TOLERANCE),
        VerifyMode::ClassThreshold => {
            let k = target.argmax();
            out.iter()
                .enumerate()
                .all(|(i, &p)| if i == k { p >= CLASS_TARGET_MIN } else { p <= CLASS_OTHER_MAX })
        }
    }
}

fn residual(net: &Network, x: &[f64], target: &ClassDistribution) -> Result<(Vector, f64), InversionError> {
    let out = net.forward(x)?;
    let r: Vector = out.iter().zip(target.probs()).map(|(a, b)| a - b).collect();
    let rn = norm2(&r);
    if !rn.is_finite() {
        return Err(InversionError::NumericFailure);
    }
    Ok((r, rn))
}

struct LmAttempt {
    x: Vector,
    iterations: usize,
    residual_norm: f64,
    #[allow(dead_code)] // inspected by the descent test
    accepted_residuals: Vec<f64>,
}

fn lm_attempt(
    net: &Network,
    target: &ClassDistribution,
    cfg: &ForwardInvConfig,
    seed: u64,
) -> Result<LmAttempt, InversionError> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vector = (0..net.input_dim())
        .map(|_| normal.sample(&mut rng) * cfg.init_scale)
        .collect();

    let (mut r, mut rn) = residual(net, &x, target)?;
    let mut accepted = vec![rn];
    let mut mu = cfg.mu_init;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && rn > cfg.residual_tolerance {
        iterations += 1;
        let jac = net.jacobian_wrt_input(&x)?;
        let delta = solve_normal_damped(&jac, &r, mu)?;
        let candidate: Vector = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        if !candidate.iter().all(|v| v.is_finite()) {
            return Err(InversionError::NumericFailure);
        }
        let (r_new, rn_new) = residual(net, &candidate, target)?;
        if rn_new < rn {
            x = candidate;
            r = r_new;
            rn = rn_new;
            accepted.push(rn);
            mu = (mu * cfg.mu_down).max(1e-15);
        } else {
            mu *= cfg.mu_up;
        }
    }

    Ok(LmAttempt { x, iterations, residual_norm: rn, accepted_residuals: accepted })
}

/// Forward-pass inversion: Levenberg-Marquardt root finding on
/// `forward(net, x) - target` from a seeded random initial guess, with
/// fresh restarts on failure. Non-convergence is not an error; the best
/// attempt comes back with `verified == false`.
pub fn forward_pass_inv(
    net: &Network,
    target: &ClassDistribution,
    cfg: &ForwardInvConfig,
) -> Result<InversionResult, InversionError> {
    cfg.validate()?;
    if target.len() != net.output_dim() {
        return Err(InversionError::TargetDimMismatch {
            expected: net.output_dim(),
            got: target.len(),
        });
    }

    let mut best: Option<LmAttempt> = None;
    for attempt in 0..=cfg.restarts {
        let run = lm_attempt(net, target, cfg, cfg.seed.wrapping_add(attempt as u64))?;
        let converged = run.residual_norm <= cfg.residual_tolerance
            || verify(net, &run.x, target, cfg.verify_mode);
        let better = best
            .as_ref()
            .map_or(true, |b| run.residual_norm < b.residual_norm);
        if better {
            best = Some(run);
        }
        if converged {
            break;
        }
    }

    let best = best.expect("at least one attempt runs");
    finish(net, target, best.x, best.iterations, Method::Forward, cfg.verify_mode, cfg.residual_tolerance)
}

fn finish(
    net: &Network,
    target: &ClassDistribution,
    x: Vector,
    iterations: usize,
    method: Method,
    mode: VerifyMode,
    residual_tolerance: f64,
) -> Result<InversionResult, InversionError> {
    let out = net.forward(&x)?;
    let rn = norm2(
        &out.iter()
            .zip(target.probs())
            .map(|(a, b)| a - b)
            .collect::<Vector>(),
    );
    let verified = rn <= residual_tolerance || verify(net, &x, target, mode);
    Ok(InversionResult {
        input: x,
        achieved: ClassDistribution::from_softmax_output(out),
        verified,
        iterations,
        residual_norm: rn,
        method,
    })
}

/// Per-layer inversion operators, computed once per network and reused
/// across draws.
pub struct BackwardPlan {
    pinv: Vec<Matrix>,
    sampling_basis: Vec<Matrix>,
}

impl BackwardPlan {
    /// Factors every weight matrix and precomputes the capped pseudoinverse
    /// and the sampling basis (null space plus cap-truncated directions).
    pub fn new(net: &Network, cond_cap: f64) -> Result<Self, InversionError> {
        let mut pinv = Vec::with_capacity(net.layers().len());
        let mut sampling_basis = Vec::with_capacity(net.layers().len());
        for layer in net.layers() {
            let f = svd(layer.weight())?;
            pinv.push(pseudoinverse_capped(&f, cond_cap)?);
            let null = null_space_basis(&f);
            let truncated = cap_truncated_directions(&f, cond_cap);
            sampling_basis.push(hcat(&null, &truncated));
        }
        Ok(Self { pinv, sampling_basis })
    }
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    Matrix::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
        if j < a.cols() {
            a.get(i, j)
        } else {
            b.get(i, j - a.cols())
        }
    })
}

fn check_bounded(values: &[f64], layer: usize, limit: f64) -> Result<(), InversionError> {
    for &v in values {
        if !v.is_finite() || v.abs() > limit {
            return Err(InversionError::UnboundedGrowth { layer, value: v });
        }
    }
    Ok(())
}

fn back_pass_with_plan(
    net: &Network,
    plan: &BackwardPlan,
    target: &ClassDistribution,
    cfg: &BackInvConfig,
    seed: u64,
) -> Result<InversionResult, InversionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.std.max(f64::MIN_POSITIVE)).expect("normal");

    // Invert the softmax up to its constant; the zero-mean logits map back
    // to the target exactly.
    let mut x = softmax_inverse(target)?;

    for (i, layer) in net.layers().iter().enumerate().rev() {
        let pre = layer
            .activation()
            .inverse(&x)
            .map_err(|source| match source {
                NetworkError::UnboundedInversion { value, .. } => {
                    InversionError::UnboundedGrowth { layer: i, value }
                }
                other => InversionError::NonInvertibleActivation { layer: i, source: other },
            })?;
        check_bounded(&pre, i, cfg.growth_limit)?;

        let shifted: Vector = pre.iter().zip(layer.bias()).map(|(v, b)| v - b).collect();
        let mut prev = plan.pinv[i].matvec(&shifted);

        let basis = &plan.sampling_basis[i];
        if cfg.std > 0.0 && basis.cols() > 0 {
            let coeffs: Vector = (0..basis.cols()).map(|_| normal.sample(&mut rng)).collect();
            let mut noise = basis.matvec(&coeffs);
            let noise_norm = norm2(&noise);
            // Normalize against the pseudoinverse solution so the noise is
            // a fixed fraction of the reconstructed signal.
            let wanted = cfg.std * norm2(&prev);
            if noise_norm > 0.0 && wanted > 0.0 {
                let scale = wanted / noise_norm;
                for v in &mut noise {
                    *v *= scale;
                }
                for (p, n) in prev.iter_mut().zip(&noise) {
                    *p += n;
                }
            }
        }
        check_bounded(&prev, i, cfg.growth_limit)?;
        x = prev;
    }

    finish(net, target, x, net.layers().len(), Method::Backward, cfg.verify_mode, EXACT_TOLERANCE)
}

/// Backward-pass inversion: softmax inverse, then per layer activation
/// inverse, capped pseudoinverse, and null-space sampling. With `std == 0`
/// the result is the deterministic minimum-norm preimage chain.
pub fn back_pass_inv(
    net: &Network,
    target: &ClassDistribution,
    cfg: &BackInvConfig,
) -> Result<InversionResult, InversionError> {
    cfg.validate()?;
    if !net.has_softmax() {
        return Err(InversionError::RequiresSoftmax);
    }
    if target.len() != net.output_dim() {
        return Err(InversionError::TargetDimMismatch {
            expected: net.output_dim(),
            got: target.len(),
        });
    }
    let plan = BackwardPlan::new(net, cfg.cond_cap)?;
    back_pass_with_plan(net, &plan, target, cfg, cfg.seed)
}

/// A batch of backward-pass draws with per-draw outcomes.
#[derive(Debug)]
pub struct SampleBatch {
    pub draws: Vec<Result<InversionResult, InversionError>>,
}

impl SampleBatch {
    /// Fraction of draws that produced a verified result.
    pub fn success_fraction(&self) -> f64 {
        if self.draws.is_empty() {
            return 0.0;
        }
        let ok = self
            .draws
            .iter()
            .filter(|d| matches!(d, Ok(r) if r.verified))
            .count();
        ok as f64 / self.draws.len() as f64
    }
}

/// Runs `n` independent backward-pass draws with per-draw seeds
/// `cfg.seed + index`. Per-draw failures are recorded in the batch, not
/// raised. The factorization plan is shared across draws.
pub fn sample_batch(
    net: &Network,
    target: &ClassDistribution,
    cfg: &BackInvConfig,
    n: usize,
) -> Result<SampleBatch, InversionError> {
    cfg.validate()?;
    if n < 1 {
        return Err(InversionError::InvalidConfig { reason: "n must be >= 1" });
    }
    if !net.has_softmax() {
        return Err(InversionError::RequiresSoftmax);
    }
    if target.len() != net.output_dim() {
        return Err(InversionError::TargetDimMismatch {
            expected: net.output_dim(),
            got: target.len(),
        });
    }
    let plan = BackwardPlan::new(net, cfg.cond_cap)?;
    let draws: Vec<Result<InversionResult, InversionError>> = (0..n)
        .into_par_iter()
        .map(|i| back_pass_with_plan(net, &plan, target, cfg, cfg.seed.wrapping_add(i as u64)))
        .collect();
    Ok(SampleBatch { draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::network::{ActivationKind, LinearLayer};
    use rand::Rng;

    fn assert_near(a: f64, b: f64, tol: f64, msg: &str) {
        assert!((a - b).abs() <= tol, "{msg}: {a} vs {b} (diff {})", (a - b).abs());
    }

    /// softmax(W x) with W = [[1], [0]]: a scalar logistic toy.
    fn logistic_toy() -> Network {
        let w = Matrix::from_rows(&[vec![1.0], vec![0.0]]);
        let layer = LinearLayer::new(w, vec![0.0, 0.0], ActivationKind::Identity).unwrap();
        Network::new(vec![layer], true).unwrap()
    }

    /// Near-identity square net: softmax(selu(W2 selu(W1 x + b1) + b2)).
    fn near_identity_net(n: usize, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |_: usize| {
            let w = Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0 + rng.gen_range(-0.05..0.05)
                } else {
                    rng.gen_range(-0.05..0.05)
                }
            });
            let b: Vector = (0..n).map(|_| rng.gen_range(-0.02..0.02)).collect();
            LinearLayer::new(w, b, ActivationKind::Selu).unwrap()
        };
        let layers = vec![make(0), make(1)];
        Network::new(layers, true).unwrap()
    }

    #[test]
    fn forward_inv_logistic_closed_form() {
        let net = logistic_toy();
        let target = ClassDistribution::new(vec![0.75, 0.25]).unwrap();
        let cfg = ForwardInvConfig { seed: 5, ..ForwardInvConfig::default() };
        let result = forward_pass_inv(&net, &target, &cfg).unwrap();
        assert!(result.verified, "converged: residual {}", result.residual_norm);
        assert_near(result.input[0], 3.0f64.ln(), 1e-6, "x = ln 3");
        assert!(result.iterations <= 30);
    }

    #[test]
    fn forward_inv_reaches_constructed_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w1 = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-0.6..0.6));
        let b1: Vector = (0..6).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let w2 = Matrix::from_fn(3, 6, |_, _| rng.gen_range(-0.6..0.6));
        let b2: Vector = (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let net = Network::new(
            vec![
                LinearLayer::new(w1, b1, ActivationKind::Selu).unwrap(),
                LinearLayer::new(w2, b2, ActivationKind::Selu).unwrap(),
            ],
            true,
        )
        .unwrap();

        let x_star: Vector = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let target = ClassDistribution::new(net.forward(&x_star).unwrap()).unwrap();
        let cfg = ForwardInvConfig { seed: 3, verify_mode: VerifyMode::Exact, ..Default::default() };
        let result = forward_pass_inv(&net, &target, &cfg).unwrap();
        assert!(
            result.residual_norm <= cfg.residual_tolerance || result.verified,
            "residual {}",
            result.residual_norm
        );
        // A root exists by construction; the achieved output must match.
        for (a, b) in result.achieved.probs().iter().zip(target.probs()) {
            assert_near(*a, *b, 1e-3, "achieved distribution");
        }
    }

    #[test]
    fn forward_inv_accepted_steps_strictly_decrease() {
        let net = logistic_toy();
        let target = ClassDistribution::new(vec![0.9, 0.1]).unwrap();
        let cfg = ForwardInvConfig::default();
        let run = lm_attempt(&net, &target, &cfg, 42).unwrap();
        for pair in run.accepted_residuals.windows(2) {
            assert!(pair[1] < pair[0], "accepted residuals must strictly decrease");
        }
    }

    #[test]
    fn forward_inv_rejects_dim_mismatch() {
        let net = logistic_toy();
        let target = ClassDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert!(matches!(
            forward_pass_inv(&net, &target, &ForwardInvConfig::default()),
            Err(InversionError::TargetDimMismatch { .. })
        ));
    }

    #[test]
    fn back_inv_square_net_is_algebraically_exact() {
        let net = near_identity_net(4, 9);
        let target = crate::dataio::make_target(1, 4, 0.7).unwrap();
        let cfg = BackInvConfig { std: 0.0, seed: 0, verify_mode: VerifyMode::Exact, ..Default::default() };
        let result = back_pass_inv(&net, &target, &cfg).unwrap();
        assert!(result.verified);
        let out = net.forward(&result.input).unwrap();
        for (a, b) in out.iter().zip(target.probs()) {
            assert_near(*a, *b, 1e-8, "exact algebraic inversion");
        }
    }

    #[test]
    fn back_inv_deterministic_for_fixed_seed() {
        let net = near_identity_net(5, 13);
        let target = crate::dataio::make_target(2, 5, 0.6).unwrap();
        let cfg = BackInvConfig { std: 0.1, seed: 77, ..Default::default() };
        let a = back_pass_inv(&net, &target, &cfg).unwrap();
        let b = back_pass_inv(&net, &target, &cfg).unwrap();
        assert_eq!(a.input.len(), b.input.len());
        for (x, y) in a.input.iter().zip(&b.input) {
            assert_eq!(x.to_bits(), y.to_bits(), "bitwise identical");
        }
    }

    #[test]
    fn back_inv_std_zero_is_minimum_norm_chain() {
        // With std = 0 repeated calls agree even across different seeds.
        let net = near_identity_net(4, 21);
        let target = crate::dataio::make_target(0, 4, 0.7).unwrap();
        let a = back_pass_inv(&net, &target, &BackInvConfig { std: 0.0, seed: 1, ..Default::default() })
            .unwrap();
        let b = back_pass_inv(&net, &target, &BackInvConfig { std: 0.0, seed: 2, ..Default::default() })
            .unwrap();
        for (x, y) in a.input.iter().zip(&b.input) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn null_space_noise_leaves_layer_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Matrix::from_fn(6, 20, |_, _| rng.gen_range(-1.0..1.0));
        let f = svd(&w).unwrap();
        let basis = null_space_basis(&f);
        assert_eq!(basis.cols(), 14);
        let x: Vector = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = w.matvec(&x);
        for _ in 0..50 {
            let coeffs: Vector = (0..basis.cols()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let noise = basis.matvec(&coeffs);
            let shifted: Vector = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let out = w.matvec(&shifted);
            for (a, b) in base.iter().zip(&out) {
                assert_near(*a, *b, 1e-8, "null-space invariance");
            }
        }
    }

    #[test]
    fn back_inv_wide_layer_verifies_and_samples_differ() {
        // 3 outputs from 12 inputs: a 9-dimensional null space to sample.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Matrix::from_fn(3, 12, |_, _| rng.gen_range(-0.5..0.5));
        let b: Vector = (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let net = Network::new(vec![LinearLayer::new(w, b, ActivationKind::Selu).unwrap()], true).unwrap();
        let target = crate::dataio::make_target(1, 3, 0.8).unwrap();

        let cfg = BackInvConfig { std: 0.1, seed: 10, verify_mode: VerifyMode::Exact, ..Default::default() };
        let a = back_pass_inv(&net, &target, &cfg).unwrap();
        assert!(a.verified, "residual {}", a.residual_norm);

        let cfg_b = BackInvConfig { seed: 11, ..cfg };
        let b = back_pass_inv(&net, &target, &cfg_b).unwrap();
        assert!(b.verified);

        // Different seeds explore different null-space offsets, but both
        // reproduce the target.
        let dist: f64 = a
            .input
            .iter()
            .zip(&b.input)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 1e-6, "distinct preimages, got distance {dist}");
    }

    #[test]
    fn back_inv_unbounded_guard_fires() {
        // A tiny singular value under a huge cap forces a gigantic
        // pseudoinverse entry, tripping the growth limit.
        let w = Matrix::from_rows(&[vec![1e-7, 0.0], vec![0.0, 1.0]]);
        let layer = LinearLayer::new(w, vec![0.0, 0.0], ActivationKind::Identity).unwrap();
        let net = Network::new(vec![layer], true).unwrap();
        let target = crate::dataio::make_target(0, 2, 0.9).unwrap();
        let cfg = BackInvConfig { cond_cap: 1e12, growth_limit: 1e6, std: 0.0, ..Default::default() };
        let err = back_pass_inv(&net, &target, &cfg).unwrap_err();
        assert!(matches!(err, InversionError::UnboundedGrowth { .. }), "{err:?}");
    }

    #[test]
    fn verify_threshold_rule() {
        // Identity-softmax net lets us dial in the achieved distribution.
        let n = 10;
        let layer = LinearLayer::new(Matrix::identity(n), vec![0.0; n], ActivationKind::Identity).unwrap();
        let net = Network::new(vec![layer], true).unwrap();
        let target = crate::dataio::make_target(0, n, 0.91).unwrap();

        let pass = 0.92;
        let rest = (1.0 - pass) / (n - 1) as f64;
        let mut logits: Vector = vec![rest.ln(); n];
        logits[0] = pass.ln();
        assert!(verify(&net, &logits, &target, VerifyMode::ClassThreshold));

        let fail = 0.89;
        let rest = (1.0 - fail) / (n - 1) as f64;
        let mut logits: Vector = vec![rest.ln(); n];
        logits[0] = fail.ln();
        assert!(!verify(&net, &logits, &target, VerifyMode::ClassThreshold));
    }

    #[test]
    fn verify_exact_mode() {
        let net = near_identity_net(4, 30);
        let target = crate::dataio::make_target(2, 4, 0.7).unwrap();
        let cfg = BackInvConfig { std: 0.0, verify_mode: VerifyMode::Exact, ..Default::default() };
        let result = back_pass_inv(&net, &target, &cfg).unwrap();
        assert!(verify(&net, &result.input, &target, VerifyMode::Exact));
    }

    #[test]
    fn sample_batch_single_draw_matches_back_pass() {
        let net = near_identity_net(4, 17);
        let target = crate::dataio::make_target(3, 4, 0.7).unwrap();
        let cfg = BackInvConfig { std: 0.0, seed: 40, ..Default::default() };
        let single = back_pass_inv(&net, &target, &cfg).unwrap();
        let batch = sample_batch(&net, &target, &cfg, 1).unwrap();
        let draw = batch.draws[0].as_ref().unwrap();
        for (x, y) in single.input.iter().zip(&draw.input) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_near(batch.success_fraction(), 1.0, 0.0, "success fraction");
    }

    #[test]
    fn sample_batch_seeds_differ_but_verify_alike() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let w = Matrix::from_fn(3, 10, |_, _| rng.gen_range(-0.5..0.5));
        let b: Vector = (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let net = Network::new(vec![LinearLayer::new(w, b, ActivationKind::Selu).unwrap()], true).unwrap();
        let target = crate::dataio::make_target(0, 3, 0.8).unwrap();

        let a = sample_batch(&net, &target, &BackInvConfig { seed: 1, verify_mode: VerifyMode::Exact, ..Default::default() }, 4).unwrap();
        let b = sample_batch(&net, &target, &BackInvConfig { seed: 2, verify_mode: VerifyMode::Exact, ..Default::default() }, 4).unwrap();
        assert_eq!(a.success_fraction(), b.success_fraction());
        let ia = &a.draws[0].as_ref().unwrap().input;
        let ib = &b.draws[0].as_ref().unwrap().input;
        let dist: f64 = ia.iter().zip(ib).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        assert!(dist > 0.0, "different top-level seeds must give different images");
    }
}
