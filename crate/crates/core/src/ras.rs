//! Reliability-adaptive scaling: a smooth trust weight per group.
//!
//! `w = 1 + alpha * (2 * sigmoid(k * delta) - 1)`, evaluated through the identity
//! `2 * sigmoid(x) - 1 = tanh(x / 2)`, which keeps `w(delta) + w(-delta) = 2` exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower bound applied to weights when `alpha >= 1` would otherwise let them
/// reach zero or flip sign.
pub const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasParams<F> {
    pub alpha: F,
    pub k: F,
}

impl<F: Scalar> RasParams<F> {
    pub fn new(alpha: F, k: F) -> Result<Self> {
        if !(alpha >= F::zero() && alpha.is_finite()) {
            return Err(Error::Config(format!("RAS alpha must be finite and >= 0, got {alpha}")));
        }
        if !(k > F::zero() && k.is_finite()) {
            return Err(Error::Config(format!("RAS k must be finite and > 0, got {k}")));
        }
        Ok(Self { alpha, k })
    }

    /// `alpha = 0`: every group keeps weight one.
    pub fn neutral() -> Self {
        Self {
            alpha: F::zero(),
            k: F::one(),
        }
    }
}

pub fn trust_weight<F: Scalar>(group_delta: F, params: &RasParams<F>) -> F {
    let half = F::lit(0.5);
    let w = F::one() + params.alpha * (half * params.k * group_delta).tanh();
    if params.alpha >= F::one() {
        w.max(F::lit(WEIGHT_FLOOR))
    } else {
        w
    }
}

pub fn ras_weighted_loss<F: Scalar>(base_loss: F, weight: F) -> Result<F> {
    if !(weight > F::zero()) {
        return Err(Error::InvalidWeight { value: weight.as_f64() });
    }
    Ok(weight * base_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(alpha: f64, k: f64) -> RasParams<f64> {
        RasParams::new(alpha, k).unwrap()
    }

    // Logistic form evaluated directly, independent of the tanh route.
    fn oracle(delta: f64, alpha: f64, k: f64) -> f64 {
        1.0 + alpha * (2.0 / (1.0 + (-k * delta).exp()) - 1.0)
    }

    #[test]
    fn zero_delta_is_neutral() {
        for (a, k) in [(0.0, 1.0), (0.5, 3.0), (0.9, 0.1), (2.0, 10.0)] {
            assert_eq!(trust_weight(0.0, &p(a, k)), 1.0);
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn unit_delta_value() {
        // sigmoid(1) = 0.7310585786300049
        let w = trust_weight(1.0, &p(0.5, 1.0));
        assert!((w - 1.231_058_578_630_004_9).abs() < 1e-12);
        assert!((w - oracle(1.0, 0.5, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn limits() {
        let params = p(0.5, 1.0);
        assert!((trust_weight(1e6, &params) - 1.5).abs() < 1e-15);
        assert!((trust_weight(-1e6, &params) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn floor_for_large_alpha() {
        let w = trust_weight(-1e3, &p(1.5, 1.0));
        assert_eq!(w, WEIGHT_FLOOR);
    }

    #[test]
    fn weighted_loss() {
        assert_eq!(ras_weighted_loss(-0.4, 1.0).unwrap(), -0.4);
        assert!((ras_weighted_loss(2.0_f64, 1.2311).unwrap() - 2.4622).abs() < 1e-15);
        assert_eq!(ras_weighted_loss(0.0, 0.7).unwrap(), 0.0);
        assert!(matches!(ras_weighted_loss(1.0, 0.0), Err(Error::InvalidWeight { .. })));
        assert!(ras_weighted_loss(1.0, -0.2).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(RasParams::new(-0.1, 1.0).is_err());
        assert!(RasParams::new(0.5, 0.0).is_err());
        assert!(RasParams::new(0.5_f32, 2.0).is_ok());
    }

    proptest! {
        #[test]
        fn point_symmetry(delta in -50.0f64..50.0, alpha in 0.0f64..0.99, k in 0.01f64..10.0) {
            let params = p(alpha, k);
            let s = trust_weight(delta, &params) + trust_weight(-delta, &params);
            prop_assert!((s - 2.0).abs() < 1e-12);
        }

        #[test]
        fn monotone_and_bounded(d1 in -10.0f64..10.0, gap in 1e-3f64..5.0, alpha in 0.01f64..0.99, k in 0.1f64..3.0) {
            let params = p(alpha, k);
            let w1 = trust_weight(d1, &params);
            let w2 = trust_weight(d1 + gap, &params);
            prop_assert!(w1 < w2);
            prop_assert!(w1 > 1.0 - alpha && w1 < 1.0 + alpha);
            prop_assert!((w1 - oracle(d1, alpha, k)).abs() < 1e-12);
        }

        #[test]
        fn amplify_above_damp_below(delta in 1e-6f64..20.0, alpha in 0.01f64..0.99) {
            let params = p(alpha, 1.0);
            prop_assert!(trust_weight(delta, &params) > 1.0);
            prop_assert!(trust_weight(-delta, &params) < 1.0);
        }

        #[test]
        fn alpha_zero_is_identity(delta in -100.0f64..100.0, loss in -10.0f64..10.0) {
            let w = trust_weight(delta, &RasParams::neutral());
            prop_assert_eq!(w, 1.0);
            prop_assert_eq!(ras_weighted_loss(loss, w).unwrap(), loss);
        }
    }
}
