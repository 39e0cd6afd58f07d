//! Node distribution families and their activation functions.
//!
//! Each layer of a layered chain graph holds random variables of one family.
//! The family fixes three things at once: the feature function `T` applied to
//! node values, the conditional density `f(T(x), e)` given the preactivation
//! `e`, and the closed-form mean `g(e) = E[T(X)]` that feed-forward
//! propagates. Three families are supported:
//!
//! * `Binary { alpha, beta }` — two-valued nodes; `g` is a scaled/shifted
//!   tanh, which specializes to the logistic sigmoid for `{0, 1}` and to
//!   tanh for `{-1, 1}`.
//! * `Multilabel { classes }` — one-of-`c` nodes with one-hot indicator
//!   features; `g` is the softmax over the `c`-dimensional preactivation.
//! * `RectifiedGaussian { leak, std }` — `X = max(leak * Y, Y)` with
//!   `Y ~ N(e, s^2)`; `g` approximates softplus (constant `s`), ReLU and
//!   leaky ReLU (tanh-modulated `s`), and is exactly the identity for
//!   `leak = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{normal_cdf, normal_pdf, real, sigmoid, Real};

/// Standard-deviation policy for rectified-Gaussian nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StdPolicy<F> {
    /// Fixed standard deviation `s > 0`.
    Constant { s: F },
    /// `s(e) = |tanh(e)|`, which pinches the noise at the rectification
    /// point and yields a ReLU-like mean.
    TanhModulated,
}

/// The per-layer random-variable family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NodeDistribution<F> {
    Binary { alpha: F, beta: F },
    Multilabel { classes: usize },
    RectifiedGaussian { leak: F, std: StdPolicy<F> },
}

/// A concrete node value: a real for scalar families, a label in `1..=c`
/// for multilabel nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeValue<F> {
    Real(F),
    Label(usize),
}

/// Sample mean and standard error of node features over repeated draws.
#[derive(Clone, Debug)]
pub struct McEstimate<F> {
    pub mean: Vec<F>,
    /// `None` when fewer than two samples were drawn.
    pub std_error: Option<Vec<F>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("value outside the support: {0}")]
    OutsideSupport(String),
    #[error("preactivation must be finite")]
    NonFinitePreactivation,
    #[error("preactivation has dimension {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("reparameterized sampling requires a rectified-Gaussian node")]
    UnsupportedDistribution,
}

/// Softplus constant: the fixed standard deviation that minimizes the
/// maximum pointwise error of the rectified-Gaussian mean against softplus.
pub const SOFTPLUS_STD: f64 = 1.776_091_849_725_427;

impl<F: Real> NodeDistribution<F> {
    /// Binary `{0, 1}` nodes: the sigmoid activation.
    pub fn sigmoid_binary() -> Self {
        NodeDistribution::Binary {
            alpha: F::zero(),
            beta: F::one(),
        }
    }

    /// Binary `{-1, 1}` nodes: the tanh activation.
    pub fn tanh_binary() -> Self {
        NodeDistribution::Binary {
            alpha: -F::one(),
            beta: F::one(),
        }
    }

    /// No leak, constant std tuned for softplus.
    pub fn softplus_rectified() -> Self {
        NodeDistribution::RectifiedGaussian {
            leak: F::zero(),
            std: StdPolicy::Constant {
                s: real(SOFTPLUS_STD),
            },
        }
    }

    /// No leak, tanh-modulated std: the ReLU approximation.
    pub fn relu_rectified() -> Self {
        NodeDistribution::RectifiedGaussian {
            leak: F::zero(),
            std: StdPolicy::TanhModulated,
        }
    }

    /// Leaky ReLU approximation with the given leak factor.
    pub fn leaky_relu_rectified(leak: F) -> Self {
        NodeDistribution::RectifiedGaussian {
            leak,
            std: StdPolicy::TanhModulated,
        }
    }

    /// Identity activation: full leak, so `X = Y ~ N(e, s^2)` exactly.
    pub fn identity_rectified(s: F) -> Self {
        NodeDistribution::RectifiedGaussian {
            leak: F::one(),
            std: StdPolicy::Constant { s },
        }
    }

    /// Checks the family's parameter invariants.
    pub fn validate(&self) -> Result<(), DistributionError> {
        match *self {
            NodeDistribution::Binary { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite()) {
                    return Err(DistributionError::InvalidParameters(
                        "binary values must be finite".into(),
                    ));
                }
                if alpha == beta {
                    return Err(DistributionError::InvalidParameters(
                        "binary values alpha and beta must differ".into(),
                    ));
                }
            }
            NodeDistribution::Multilabel { classes } => {
                if classes < 2 {
                    return Err(DistributionError::InvalidParameters(
                        "multilabel nodes need at least 2 classes".into(),
                    ));
                }
            }
            NodeDistribution::RectifiedGaussian { leak, std } => {
                if !(leak >= F::zero() && leak <= F::one()) {
                    return Err(DistributionError::InvalidParameters(
                        "leak must lie in [0, 1]".into(),
                    ));
                }
                if let StdPolicy::Constant { s } = std {
                    // The negated form also rejects NaN.
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(s > F::zero()) || !s.is_finite() {
                        return Err(DistributionError::InvalidParameters(
                            "constant std must be positive and finite".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dimension of the feature vector `T(x)`.
    pub fn feature_dim(&self) -> usize {
        match *self {
            NodeDistribution::Multilabel { classes } => classes,
            _ => 1,
        }
    }

    /// True for families whose samples admit a pathwise derivative.
    pub fn is_continuous(&self) -> bool {
        matches!(self, NodeDistribution::RectifiedGaussian { .. })
    }

    /// Feature function `T(x)`.
    pub fn features(&self, x: NodeValue<F>) -> Result<Vec<F>, DistributionError> {
        let mut out = vec![F::zero(); self.feature_dim()];
        self.features_into(x, &mut out)?;
        Ok(out)
    }

    pub(crate) fn features_into(
        &self,
        x: NodeValue<F>,
        out: &mut [F],
    ) -> Result<(), DistributionError> {
        debug_assert_eq!(out.len(), self.feature_dim());
        match (*self, x) {
            (NodeDistribution::Binary { alpha, beta }, NodeValue::Real(v)) => {
                if v != alpha && v != beta {
                    return Err(DistributionError::OutsideSupport(format!(
                        "binary node value {v} is neither {alpha} nor {beta}"
                    )));
                }
                out[0] = v;
            }
            (NodeDistribution::Multilabel { classes }, NodeValue::Label(j)) => {
                if j == 0 || j > classes {
                    return Err(DistributionError::OutsideSupport(format!(
                        "label {j} outside 1..={classes}"
                    )));
                }
                for o in out.iter_mut() {
                    *o = F::zero();
                }
                out[j - 1] = F::one();
            }
            (NodeDistribution::RectifiedGaussian { leak, .. }, NodeValue::Real(v)) => {
                if !v.is_finite() {
                    return Err(DistributionError::OutsideSupport(
                        "rectified-Gaussian value must be finite".into(),
                    ));
                }
                if leak == F::zero() && v < F::zero() {
                    return Err(DistributionError::OutsideSupport(format!(
                        "value {v} negative but leak is zero"
                    )));
                }
                out[0] = v;
            }
            _ => {
                return Err(DistributionError::OutsideSupport(
                    "value kind does not match the distribution family".into(),
                ))
            }
        }
        Ok(())
    }

    /// Closed-form expected features `g(e)`.
    pub fn activation_mean(&self, e: &[F]) -> Result<Vec<F>, DistributionError> {
        self.check_preactivation(e)?;
        let mut out = vec![F::zero(); self.feature_dim()];
        self.activation_mean_into(e, &mut out);
        Ok(out)
    }

    /// `g(e)` without allocation or input validation (hot path).
    pub(crate) fn activation_mean_into(&self, e: &[F], out: &mut [F]) {
        match *self {
            NodeDistribution::Binary { alpha, beta } => out[0] = binary_mean(alpha, beta, e[0]),
            NodeDistribution::Multilabel { .. } => softmax_into(e, out),
            NodeDistribution::RectifiedGaussian { leak, std } => {
                out[0] = rectified_mean(leak, std, e[0])
            }
        }
    }

    /// Jacobian `dg/de` as a row-major `feature_dim x feature_dim` matrix.
    pub fn activation_jacobian(&self, e: &[F]) -> Result<Vec<F>, DistributionError> {
        self.check_preactivation(e)?;
        match *self {
            NodeDistribution::Binary { alpha, beta } => {
                Ok(vec![binary_mean_derivative(alpha, beta, e[0])])
            }
            NodeDistribution::Multilabel { classes } => {
                let mut q = vec![F::zero(); classes];
                softmax_into(e, &mut q);
                let mut jac = vec![F::zero(); classes * classes];
                for a in 0..classes {
                    for b in 0..classes {
                        let delta = if a == b { F::one() } else { F::zero() };
                        jac[a * classes + b] = q[a] * (delta - q[b]);
                    }
                }
                Ok(jac)
            }
            NodeDistribution::RectifiedGaussian { leak, std } => {
                Ok(vec![rectified_mean_derivative(leak, std, e[0])])
            }
        }
    }

    /// Scalar `dg/de` for one-dimensional families (hot path).
    pub(crate) fn mean_derivative_scalar(&self, e: F) -> F {
        match *self {
            NodeDistribution::Binary { alpha, beta } => binary_mean_derivative(alpha, beta, e),
            NodeDistribution::RectifiedGaussian { leak, std } => {
                rectified_mean_derivative(leak, std, e)
            }
            NodeDistribution::Multilabel { .. } => {
                unreachable!("multilabel nodes use the softmax jacobian")
            }
        }
    }

    /// One draw from the conditional `f(T(x), e)`.
    pub fn sample<R: Rng + ?Sized>(&self, e: &[F], rng: &mut R) -> NodeValue<F> {
        match *self {
            NodeDistribution::Binary { alpha, beta } => {
                let p_beta = sigmoid((beta - alpha) * e[0]);
                if F::unit_uniform(rng) < p_beta {
                    NodeValue::Real(beta)
                } else {
                    NodeValue::Real(alpha)
                }
            }
            NodeDistribution::Multilabel { classes } => {
                let mut probs = vec![F::zero(); classes];
                softmax_into(e, &mut probs);
                let u = F::unit_uniform(rng);
                let mut acc = F::zero();
                for (j, &p) in probs.iter().enumerate() {
                    acc = acc + p;
                    if u < acc {
                        return NodeValue::Label(j + 1);
                    }
                }
                NodeValue::Label(classes)
            }
            NodeDistribution::RectifiedGaussian { leak, std } => {
                let z = F::std_normal(rng);
                let s = std_value(std, e[0]);
                let y = e[0] + s * z;
                NodeValue::Real((leak * y).max(y))
            }
        }
    }

    /// Reparameterized draw for rectified-Gaussian nodes: given exogenous
    /// standard-normal noise `z`, returns the sample `x` and the pathwise
    /// derivative `dx/de`. Deterministic in `(e, z)`.
    pub fn sample_reparam(&self, e: F, z: F) -> Result<(F, F), DistributionError> {
        match *self {
            NodeDistribution::RectifiedGaussian { leak, std } => {
                let s = std_value(std, e);
                let y = e + s * z;
                let x = (leak * y).max(y);
                Ok((x, reparam_derivative(leak, std, e, z)))
            }
            _ => Err(DistributionError::UnsupportedDistribution),
        }
    }

    /// `dx/de` of the reparameterized sample, recomputed from the recorded
    /// noise. The subgradient at the rectification point `y = 0` uses the
    /// non-leak branch (slope 1).
    pub(crate) fn reparam_derivative_scalar(&self, e: F, z: F) -> F {
        match *self {
            NodeDistribution::RectifiedGaussian { leak, std } => {
                reparam_derivative(leak, std, e, z)
            }
            _ => unreachable!("pathwise derivatives exist only for continuous nodes"),
        }
    }

    /// Sample mean and standard error of the features over `n` draws.
    pub fn mc_activation_estimate<R: Rng + ?Sized>(
        &self,
        e: &[F],
        n: usize,
        rng: &mut R,
    ) -> Result<McEstimate<F>, DistributionError> {
        self.check_preactivation(e)?;
        if n == 0 {
            return Err(DistributionError::InvalidParameters(
                "sample count must be at least 1".into(),
            ));
        }
        let dim = self.feature_dim();
        let mut sum = vec![F::zero(); dim];
        let mut sum_sq = vec![F::zero(); dim];
        let mut feat = vec![F::zero(); dim];
        for _ in 0..n {
            let x = self.sample(e, rng);
            self.features_into(x, &mut feat)
                .expect("samples lie in the support");
            for ((s, sq), &f) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(feat.iter()) {
                *s = *s + f;
                *sq = *sq + f * f;
            }
        }
        let count = real::<F>(n as f64);
        let mean: Vec<F> = sum.iter().map(|&s| s / count).collect();
        let std_error = if n >= 2 {
            let denom = real::<F>((n - 1) as f64);
            Some(
                sum_sq
                    .iter()
                    .zip(mean.iter())
                    .map(|(&sq, &m)| {
                        let var = ((sq - count * m * m) / denom).max(F::zero());
                        (var / count).sqrt()
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(McEstimate { mean, std_error })
    }

    fn check_preactivation(&self, e: &[F]) -> Result<(), DistributionError> {
        if e.len() != self.feature_dim() {
            return Err(DistributionError::DimensionMismatch {
                got: e.len(),
                expected: self.feature_dim(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(DistributionError::NonFinitePreactivation);
        }
        Ok(())
    }
}

fn binary_mean<F: Real>(alpha: F, beta: F, e: F) -> F {
    let half = real::<F>(0.5);
    let h = (beta - alpha) * half;
    h * (h * e).tanh() + (alpha + beta) * half
}

fn binary_mean_derivative<F: Real>(alpha: F, beta: F, e: F) -> F {
    let half = real::<F>(0.5);
    let h = (beta - alpha) * half;
    let t = (h * e).tanh();
    h * h * (F::one() - t * t)
}

/// Softmax with max subtraction.
pub(crate) fn softmax_into<F: Real>(e: &[F], out: &mut [F]) {
    debug_assert_eq!(e.len(), out.len());
    let max = e.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &v) in out.iter_mut().zip(e.iter()) {
        let x = (v - max).exp();
        *o = x;
        total = total + x;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Backward map of the softmax: `de = q .* dq - q * (q . dq)`.
pub(crate) fn softmax_backward<F: Real>(q: &[F], dq: &[F], de: &mut [F]) {
    let inner = crate::linalg::dot(q, dq);
    for ((d, &qi), &dqi) in de.iter_mut().zip(q.iter()).zip(dq.iter()) {
        *d = qi * (dqi - inner);
    }
}

#[inline]
fn std_value<F: Real>(std: StdPolicy<F>, e: F) -> F {
    match std {
        StdPolicy::Constant { s } => s,
        StdPolicy::TanhModulated => e.tanh().abs(),
    }
}

/// Mean of `max(leak * Y, Y)` for `Y ~ N(e, s^2)`:
/// `leak * e + (1 - leak) * (e * Phi(e/s) + s * phi(e/s))`,
/// extended by continuity to `max(leak * e, e)` at `s = 0`.
fn rectified_mean<F: Real>(leak: F, std: StdPolicy<F>, e: F) -> F {
    let s = std_value(std, e);
    if s == F::zero() {
        return (leak * e).max(e);
    }
    let u = e / s;
    leak * e + (F::one() - leak) * (e * normal_cdf(u) + s * normal_pdf(u))
}

fn rectified_mean_derivative<F: Real>(leak: F, std: StdPolicy<F>, e: F) -> F {
    match std {
        StdPolicy::Constant { s } => {
            leak + (F::one() - leak) * normal_cdf(e / s)
        }
        StdPolicy::TanhModulated => {
            // s(e) = |tanh e| has derivative sign(e) * sech^2(e); the sign at
            // e = 0 is taken positive, matching the right-hand limit.
            let t = e.tanh();
            let s = t.abs();
            let sign = if e < F::zero() { -F::one() } else { F::one() };
            let s_prime = sign * (F::one() - t * t);
            let u = if s == F::zero() { sign } else { e / s };
            leak + (F::one() - leak) * (normal_cdf(u) + s_prime * normal_pdf(u))
        }
    }
}

fn reparam_derivative<F: Real>(leak: F, std: StdPolicy<F>, e: F, z: F) -> F {
    let s = std_value(std, e);
    let y = e + s * z;
    let s_prime = match std {
        StdPolicy::Constant { .. } => F::zero(),
        StdPolicy::TanhModulated => {
            let t = e.tanh();
            let sign = if e < F::zero() { -F::one() } else { F::one() };
            sign * (F::one() - t * t)
        }
    };
    let branch = if y < F::zero() { leak } else { F::one() };
    branch * (F::one() + s_prime * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::derive_rng;

    fn softplus(e: f64) -> f64 {
        e.max(0.0) + (-e.abs()).exp().ln_1p()
    }

    #[test]
    fn feature_dims() {
        let b = NodeDistribution::Binary {
            alpha: 0.0,
            beta: 1.0,
        };
        assert_eq!(b.feature_dim(), 1);
        let m = NodeDistribution::<f64>::Multilabel { classes: 10 };
        assert_eq!(m.feature_dim(), 10);
        let r = NodeDistribution::RectifiedGaussian {
            leak: 0.0,
            std: StdPolicy::Constant { s: 1.0 },
        };
        assert_eq!(r.feature_dim(), 1);
    }

    #[test]
    fn features_match_family() {
        let b = NodeDistribution::Binary {
            alpha: -1.0,
            beta: 1.0,
        };
        assert_eq!(b.features(NodeValue::Real(1.0)).unwrap(), vec![1.0]);
        assert!(b.features(NodeValue::Real(0.5)).is_err());

        let m = NodeDistribution::<f64>::Multilabel { classes: 3 };
        assert_eq!(
            m.features(NodeValue::Label(2)).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert!(m.features(NodeValue::Label(4)).is_err());
        assert!(m.features(NodeValue::Label(0)).is_err());

        let r = NodeDistribution::RectifiedGaussian {
            leak: 0.5,
            std: StdPolicy::Constant { s: 1.0 },
        };
        assert_eq!(r.features(NodeValue::Real(2.5)).unwrap(), vec![2.5]);
    }

    #[test]
    fn binary_mean_is_sigmoid_and_tanh() {
        let sig = NodeDistribution::<f64>::sigmoid_binary();
        assert!((sig.activation_mean(&[0.0]).unwrap()[0] - 0.5).abs() < 1e-15);
        // sigma(ln 3) = 3/4 analytically.
        let ln3 = 3.0_f64.ln();
        assert!((sig.activation_mean(&[ln3]).unwrap()[0] - 0.75).abs() < 1e-15);

        let tanh = NodeDistribution::<f64>::tanh_binary();
        for e in [-3.0, -0.7, 0.0, 0.2, 5.0] {
            assert!((tanh.activation_mean(&[e]).unwrap()[0] - e.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn binary_alpha_beta_interchangeable() {
        let a = NodeDistribution::Binary {
            alpha: 0.3,
            beta: -1.7,
        };
        let b = NodeDistribution::Binary {
            alpha: -1.7,
            beta: 0.3,
        };
        let mut e = -6.0_f64;
        while e <= 6.0 {
            let ga = a.activation_mean(&[e]).unwrap()[0];
            let gb = b.activation_mean(&[e]).unwrap()[0];
            assert!((ga - gb).abs() <= 1e-12, "e={e}: {ga} vs {gb}");
            e += 0.01;
        }
    }

    #[test]
    fn binary_output_stays_strictly_inside_range() {
        let d = NodeDistribution::Binary {
            alpha: 0.0,
            beta: 1.0,
        };
        for e in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let g = d.activation_mean(&[e]).unwrap()[0];
            assert!(g > 0.0 && g < 1.0, "e={e} gave {g}");
        }
    }

    #[test]
    fn softmax_uniform_at_zero() {
        let m = NodeDistribution::<f64>::Multilabel { classes: 4 };
        let q = m.activation_mean(&[0.0; 4]).unwrap();
        for v in q {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_normalized_and_shift_invariant() {
        let m = NodeDistribution::<f64>::Multilabel { classes: 5 };
        let e = [1.2, -0.4, 3.3, 0.0, -2.1];
        let q = m.activation_mean(&e).unwrap();
        let total: f64 = q.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|&v| v > 0.0));

        let shifted: Vec<f64> = e.iter().map(|v| v + 7.5).collect();
        let q2 = m.activation_mean(&shifted).unwrap();
        for (a, b) in q.iter().zip(q2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_preactivations() {
        let m = NodeDistribution::<f64>::Multilabel { classes: 3 };
        let q = m.activation_mean(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!(q.iter().all(|v| v.is_finite()));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectified_mean_known_value_at_zero() {
        // g(0) = s * phi(0) = s / sqrt(2 pi) for leak 0, constant s.
        let d = NodeDistribution::<f64>::softplus_rectified();
        let g = d.activation_mean(&[0.0]).unwrap()[0];
        let expected = SOFTPLUS_STD * 0.398_942_280_401_432_7;
        assert!((g - expected).abs() < 1e-12);
        assert!((g - 0.7086).abs() < 1e-4);
    }

    #[test]
    fn rectified_tanh_modulated_is_zero_at_zero() {
        let d = NodeDistribution::<f64>::relu_rectified();
        assert_eq!(d.activation_mean(&[0.0]).unwrap()[0], 0.0);
        let leaky = NodeDistribution::<f64>::leaky_relu_rectified(1.0 / 3.0);
        assert_eq!(leaky.activation_mean(&[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn identity_leak_passes_preactivation_through() {
        let d = NodeDistribution::<f64>::identity_rectified(0.7);
        for e in [-4.0, -0.3, 0.0, 2.2] {
            assert!((d.activation_mean(&[e]).unwrap()[0] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn softplus_approximation_error_bound() {
        let d = NodeDistribution::<f64>::softplus_rectified();
        let mut max_err: f64 = 0.0;
        let mut e = -6.0;
        while e <= 6.0 {
            let g = d.activation_mean(&[e]).unwrap()[0];
            max_err = max_err.max((g - softplus(e)).abs());
            e += 0.01;
        }
        assert!(max_err <= 0.05, "max softplus error {max_err}");
    }

    #[test]
    fn relu_approximation_error_bound() {
        let d = NodeDistribution::<f64>::relu_rectified();
        assert_eq!(d.activation_mean(&[0.0]).unwrap()[0], 0.0);
        let mut max_err: f64 = 0.0;
        let mut e = 1.0;
        while e <= 6.0 {
            for v in [e, -e] {
                let g = d.activation_mean(&[v]).unwrap()[0];
                max_err = max_err.max((g - v.max(0.0)).abs());
            }
            e += 0.01;
        }
        assert!(max_err <= 0.05, "max ReLU error {max_err}");
    }

    #[test]
    fn scalar_activations_monotone_on_grid() {
        // Binary and constant-std rectified families have nonnegative slope;
        // the tanh-modulated variant is deliberately non-monotone near its
        // kink, so it is not checked here.
        let dists = [
            NodeDistribution::<f64>::sigmoid_binary(),
            NodeDistribution::<f64>::tanh_binary(),
            NodeDistribution::<f64>::softplus_rectified(),
            NodeDistribution::RectifiedGaussian {
                leak: 0.2,
                std: StdPolicy::Constant { s: 0.5 },
            },
        ];
        for d in dists {
            let mut prev = d.activation_mean(&[-6.0]).unwrap()[0];
            let mut e = -6.0 + 0.01;
            while e <= 6.0 {
                let g = d.activation_mean(&[e]).unwrap()[0];
                assert!(g - prev >= -1e-9, "{d:?} not monotone at e={e}");
                prev = g;
                e += 0.01;
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let dists = [
            NodeDistribution::<f64>::sigmoid_binary(),
            NodeDistribution::<f64>::tanh_binary(),
            NodeDistribution::Binary {
                alpha: 0.5,
                beta: 2.5,
            },
            NodeDistribution::<f64>::softplus_rectified(),
            NodeDistribution::<f64>::relu_rectified(),
            NodeDistribution::<f64>::leaky_relu_rectified(1.0 / 3.0),
            NodeDistribution::RectifiedGaussian {
                leak: 0.3,
                std: StdPolicy::Constant { s: 0.8 },
            },
            NodeDistribution::<f64>::Multilabel { classes: 4 },
        ];
        // h = 1e-4 balances truncation against cancellation in the
        // saturated regions; points within h of the tanh-modulated kink are
        // skipped because the derivative jumps there.
        let h = 1e-4;
        let mut rng = derive_rng(&[41]);
        for d in dists {
            let dim = d.feature_dim();
            let kinked = matches!(
                d,
                NodeDistribution::RectifiedGaussian {
                    std: StdPolicy::TanhModulated,
                    ..
                }
            );
            for _ in 0..20 {
                let e: Vec<f64> = (0..dim)
                    .map(|_| 8.0 * f64::unit_uniform(&mut rng) - 4.0)
                    .collect();
                if kinked && e.iter().any(|v| v.abs() < 0.01) {
                    continue;
                }
                let jac = d.activation_jacobian(&e).unwrap();
                for k in 0..dim {
                    let mut ep = e.clone();
                    let mut em = e.clone();
                    ep[k] += h;
                    em[k] -= h;
                    let gp = d.activation_mean(&ep).unwrap();
                    let gm = d.activation_mean(&em).unwrap();
                    for a in 0..dim {
                        let fd = (gp[a] - gm[a]) / (2.0 * h);
                        let an = jac[a * dim + k];
                        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                        assert!(
                            rel <= 1e-6,
                            "{d:?} jacobian[{a},{k}] at e={e:?}: analytic {an}, fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_known_values() {
        let sig = NodeDistribution::<f64>::sigmoid_binary();
        assert!((sig.activation_jacobian(&[0.0]).unwrap()[0] - 0.25).abs() < 1e-15);
        let tanh = NodeDistribution::<f64>::tanh_binary();
        assert!((tanh.activation_jacobian(&[0.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        let m = NodeDistribution::<f64>::Multilabel { classes: 2 };
        let jac = m.activation_jacobian(&[0.0, 0.0]).unwrap();
        let expected = [0.25, -0.25, -0.25, 0.25];
        for (a, b) in jac.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_saturated_binary() {
        let d = NodeDistribution::<f64>::sigmoid_binary();
        let mut rng = derive_rng(&[7]);
        for _ in 0..1000 {
            assert_eq!(d.sample(&[20.0], &mut rng), NodeValue::Real(1.0));
        }
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        // Empirical feature means over 10^6 draws agree with g(e) within
        // 4 standard errors, for every family at moderate preactivations.
        let dists: Vec<NodeDistribution<f64>> = vec![
            NodeDistribution::sigmoid_binary(),
            NodeDistribution::tanh_binary(),
            NodeDistribution::Multilabel { classes: 3 },
            NodeDistribution::softplus_rectified(),
            NodeDistribution::relu_rectified(),
            NodeDistribution::leaky_relu_rectified(1.0 / 3.0),
            NodeDistribution::identity_rectified(0.9),
        ];
        let n = 1_000_000;
        for (k, d) in dists.iter().enumerate() {
            let dim = d.feature_dim();
            let e: Vec<f64> = (0..dim).map(|i| 0.8 * (i as f64) - 0.5).collect();
            let mut rng = derive_rng(&[100, k as u64]);
            let est = d.mc_activation_estimate(&e, n, &mut rng).unwrap();
            let g = d.activation_mean(&e).unwrap();
            let se = est.std_error.unwrap();
            for i in 0..dim {
                // Saturated coordinates can have zero sample variance; allow
                // a floor of the true binomial scale at p ~ 1e-6.
                let band = 4.0 * se[i] + 1e-5;
                assert!(
                    (est.mean[i] - g[i]).abs() <= band,
                    "{d:?} coord {i}: mc {} vs g {} (se {})",
                    est.mean[i],
                    g[i],
                    se[i]
                );
            }
        }
    }

    #[test]
    fn identity_sampler_mean_matches_preactivation() {
        let d = NodeDistribution::<f64>::identity_rectified(1.3);
        let mut rng = derive_rng(&[17]);
        let e = 0.4;
        let est = d.mc_activation_estimate(&[e], 1_000_000, &mut rng).unwrap();
        let se = est.std_error.unwrap()[0];
        assert!((est.mean[0] - e).abs() <= 4.0 * se);
    }

    #[test]
    fn mc_estimate_single_sample_has_no_se() {
        let d = NodeDistribution::<f64>::sigmoid_binary();
        let mut rng = derive_rng(&[3]);
        let est = d.mc_activation_estimate(&[0.3], 1, &mut rng).unwrap();
        assert!(est.std_error.is_none());
        assert!(est.mean[0] == 0.0 || est.mean[0] == 1.0);
    }

    #[test]
    fn reparam_identity_leak() {
        let d = NodeDistribution::RectifiedGaussian {
            leak: 1.0,
            std: StdPolicy::Constant { s: 0.6 },
        };
        let (x, dx) = d.sample_reparam(0.2_f64, 1.5).unwrap();
        assert!((x - (0.2 + 0.6 * 1.5)).abs() < 1e-15);
        assert_eq!(dx, 1.0);
    }

    #[test]
    fn reparam_noise_free_rectification() {
        let d = NodeDistribution::RectifiedGaussian {
            leak: 0.0,
            std: StdPolicy::Constant { s: 1.0 },
        };
        for e in [-2.0_f64, -0.1, 0.0, 0.1, 3.0] {
            let (x, _) = d.sample_reparam(e, 0.0).unwrap();
            assert_eq!(x, e.max(0.0));
        }
    }

    #[test]
    fn reparam_rejects_discrete_families() {
        let d = NodeDistribution::<f64>::sigmoid_binary();
        assert_eq!(
            d.sample_reparam(0.0, 0.0).unwrap_err(),
            DistributionError::UnsupportedDistribution
        );
    }

    #[test]
    fn reparam_derivative_matches_finite_differences() {
        let dists = [
            NodeDistribution::RectifiedGaussian {
                leak: 0.0,
                std: StdPolicy::Constant { s: 1.2 },
            },
            NodeDistribution::<f64>::relu_rectified(),
            NodeDistribution::<f64>::leaky_relu_rectified(1.0 / 3.0),
            NodeDistribution::<f64>::identity_rectified(0.5),
        ];
        let h = 1e-6;
        let mut rng = derive_rng(&[55]);
        for d in dists {
            for _ in 0..40 {
                let e = 3.0 * f64::std_normal(&mut rng);
                let z = f64::std_normal(&mut rng);
                let (_, dx) = d.sample_reparam(e, z).unwrap();
                let (xp, _) = d.sample_reparam(e + h, z).unwrap();
                let (xm, _) = d.sample_reparam(e - h, z).unwrap();
                let fd = (xp - xm) / (2.0 * h);
                // Skip draws that straddle the rectification kink, where the
                // two-sided difference is not informative.
                if (xp > 0.0) != (xm > 0.0) {
                    continue;
                }
                let rel = (dx - fd).abs() / dx.abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-6, "{d:?} at e={e}, z={z}: {dx} vs fd {fd}");
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(NodeDistribution::Binary {
            alpha: 0.5,
            beta: 0.5
        }
        .validate()
        .is_err());
        assert!(NodeDistribution::<f64>::Multilabel { classes: 1 }
            .validate()
            .is_err());
        assert!(NodeDistribution::RectifiedGaussian {
            leak: 1.5,
            std: StdPolicy::Constant { s: 1.0 }
        }
        .validate()
        .is_err());
        assert!(NodeDistribution::RectifiedGaussian {
            leak: 0.0,
            std: StdPolicy::Constant { s: 0.0 }
        }
        .validate()
        .is_err());
    }

    #[test]
    fn non_finite_preactivation_is_an_error() {
        let d = NodeDistribution::<f64>::sigmoid_binary();
        assert_eq!(
            d.activation_mean(&[f64::NAN]).unwrap_err(),
            DistributionError::NonFinitePreactivation
        );
        assert!(matches!(
            d.activation_mean(&[0.0, 1.0]).unwrap_err(),
            DistributionError::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn generic_scalar_f32_agrees_with_f64() {
        let d32 = NodeDistribution::<f32>::softplus_rectified();
        let d64 = NodeDistribution::<f64>::softplus_rectified();
        for e in [-2.0, 0.0, 1.5] {
            let a = d32.activation_mean(&[e as f32]).unwrap()[0] as f64;
            let b = d64.activation_mean(&[e]).unwrap()[0];
            assert!((a - b).abs() < 1e-5);
        }
    }
}
