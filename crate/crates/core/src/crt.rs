//! Contrastive reward transformation around the prior.
//!
//! `R~ = [lambda * (R - R_prior) + 1{R > R_prior}] * exp(R)`, with `R` clamped
//! before the exponential. The map jumps by `exp(R_prior)` at the prior and is
//! non-monotone below `R_prior - 1`, where its slope `lambda * e^R * (1 + R - R_prior)`
//! turns negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{compute_advantages, grpo_group_loss, grpo_group_loss_and_gradient, TrajectoryGroup};
use crate::policy::Policy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrtParams<F> {
    pub lambda: F,
    pub clamp_lo: F,
    pub clamp_hi: F,
}

impl<F: Scalar> CrtParams<F> {
    pub fn new(lambda: F, clamp_lo: F, clamp_hi: F) -> Result<Self> {
        if !(lambda > F::zero() && lambda.is_finite()) {
            return Err(Error::Config(format!("CRT lambda must be finite and > 0, got {lambda}")));
        }
        if !(clamp_lo < clamp_hi) {
            return Err(Error::Config(format!(
                "CRT reward clamp needs lo < hi, got ({clamp_lo}, {clamp_hi})"
            )));
        }
        Ok(Self {
            lambda,
            clamp_lo,
            clamp_hi,
        })
    }
}

impl<F: Scalar> Default for CrtParams<F> {
    fn default() -> Self {
        Self {
            lambda: F::one(),
            clamp_lo: F::lit(-10.0),
            clamp_hi: F::lit(10.0),
        }
    }
}

pub fn transform_reward<F: Scalar>(reward: F, prior: F, params: &CrtParams<F>) -> F {
    let r = reward.max(params.clamp_lo).min(params.clamp_hi);
    let indicator = if r > prior { F::one() } else { F::zero() };
    (params.lambda * (r - prior) + indicator) * r.exp()
}

pub fn transform_group<F: Scalar>(rewards: &[F], prior: F, params: &CrtParams<F>) -> Result<Vec<F>> {
    if !prior.is_finite() {
        return Err(Error::InvalidReward { value: prior.as_f64() });
    }
    rewards
        .iter()
        .map(|&r| {
            if r.is_finite() {
                Ok(transform_reward(r, prior, params))
            } else {
                Err(Error::InvalidReward { value: r.as_f64() })
            }
        })
        .collect()
}

/// GRPO loss of the same trajectories scored with transformed rewards.
pub fn crt_group_loss<F: Scalar, P: Policy<F> + ?Sized>(
    group: &TrajectoryGroup<F>,
    prior: F,
    params: &CrtParams<F>,
    policy: &P,
    epsilon: F,
) -> Result<F> {
    let transformed = transform_group(group.rewards(), prior, params)?;
    let adv = compute_advantages(&transformed)?;
    grpo_group_loss(group, &adv, policy, epsilon)
}

pub fn crt_group_loss_and_gradient<F: Scalar, P: Policy<F> + ?Sized>(
    group: &TrajectoryGroup<F>,
    prior: F,
    params: &CrtParams<F>,
    policy: &P,
    epsilon: F,
) -> Result<(F, Vec<F>)> {
    let transformed = transform_group(group.rewards(), prior, params)?;
    let adv = compute_advantages(&transformed)?;
    grpo_group_loss_and_gradient(group, &adv, policy, epsilon)
}
