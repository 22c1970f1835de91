//! Semantic prior estimation and deviations from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::TrajectoryGroup;
use crate::policy::PromptId;
use crate::scalar::{mean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorStrategy {
    /// A constant supplied by configuration.
    Fixed,
    /// Mean reward of a frozen reference policy's rollouts for the prompt.
    ReferenceRollout,
    /// A baseline scalar supplied by the environment for the prompt.
    FirstObservation,
    /// Exponential moving average of observed group means.
    RunningMean,
}

impl PriorStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PriorStrategy::Fixed => "fixed",
            PriorStrategy::ReferenceRollout => "reference_rollout",
            PriorStrategy::FirstObservation => "first_observation",
            PriorStrategy::RunningMean => "running_mean",
        }
    }
}

/// Whether running-mean state is shared by all prompts or kept per prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScope {
    #[default]
    Global,
    PerPrompt,
}

/// Evidence available when a prior is queried.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorContext<'a, F> {
    /// Mean reward of the group being scored; used only as the running-mean
    /// cold-start value.
    pub group_mean: Option<F>,
    pub reference_rewards: Option<&'a [F]>,
    pub baseline_reward: Option<F>,
}

/// Source of `R_prior`. Within a training step `prior_for` is always called
/// for a group before `update` receives that group's mean.
pub trait Prior<F: Scalar> {
    fn prior_for(&self, prompt: PromptId, ctx: &PriorContext<'_, F>) -> Result<F>;

    fn update(&mut self, prompt: PromptId, group_mean: F) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimator<F> {
    strategy: PriorStrategy,
    fixed_value: F,
    decay: F,
    scope: PriorScope,
    global: Option<F>,
    per_prompt: BTreeMap<PromptId, F>,
}

impl<F: Scalar> PriorEstimator<F> {
    pub fn fixed(value: F) -> Self {
        Self::build(PriorStrategy::Fixed, value, F::lit(0.9), PriorScope::Global)
    }

    pub fn reference_rollout() -> Self {
        Self::build(PriorStrategy::ReferenceRollout, F::zero(), F::lit(0.9), PriorScope::PerPrompt)
    }

    pub fn first_observation() -> Self {
        Self::build(PriorStrategy::FirstObservation, F::zero(), F::lit(0.9), PriorScope::PerPrompt)
    }

    pub fn running_mean(decay: F, scope: PriorScope) -> Result<Self> {
        if !(decay > F::zero() && decay < F::one()) {
            return Err(Error::Config(format!("running-mean decay must lie in (0, 1), got {decay}")));
        }
        Ok(Self::build(PriorStrategy::RunningMean, F::zero(), decay, scope))
    }

    fn build(strategy: PriorStrategy, fixed_value: F, decay: F, scope: PriorScope) -> Self {
        Self {
            strategy,
            fixed_value,
            decay,
            scope,
            global: None,
            per_prompt: BTreeMap::new(),
        }
    }

    pub fn strategy(&self) -> PriorStrategy {
        self.strategy
    }

    /// Current running-mean value, if initialized.
    pub fn running_value(&self, prompt: PromptId) -> Option<F> {
        match self.scope {
            PriorScope::Global => self.global,
            PriorScope::PerPrompt => self.per_prompt.get(&prompt).copied(),
        }
    }
}

impl<F: Scalar> Prior<F> for PriorEstimator<F> {
    fn prior_for(&self, prompt: PromptId, ctx: &PriorContext<'_, F>) -> Result<F> {
        let missing = |what| Error::MissingPriorContext {
            strategy: self.strategy.name(),
            missing: what,
        };
        match self.strategy {
            PriorStrategy::Fixed => Ok(self.fixed_value),
            PriorStrategy::ReferenceRollout => ctx
                .reference_rewards
                .and_then(mean)
                .ok_or_else(|| missing("reference rollout rewards")),
            PriorStrategy::FirstObservation => ctx.baseline_reward.ok_or_else(|| missing("a baseline reward")),
            PriorStrategy::RunningMean => self
                .running_value(prompt)
                .or(ctx.group_mean)
                .ok_or_else(|| missing("a group mean for cold start")),
        }
    }

    fn update(&mut self, prompt: PromptId, group_mean: F) -> Result<()> {
        if !group_mean.is_finite() {
            return Err(Error::InvalidReward {
                value: group_mean.as_f64(),
            });
        }
        if self.strategy != PriorStrategy::RunningMean {
            return Ok(());
        }
        let next = match self.running_value(prompt) {
            None => group_mean,
            Some(prev) => self.decay * prev + (F::one() - self.decay) * group_mean,
        };
        match self.scope {
            PriorScope::Global => self.global = Some(next),
            PriorScope::PerPrompt => {
                self.per_prompt.insert(prompt, next);
            }
        }
        Ok(())
    }
}

/// Group- and sample-level deviations from the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation<F> {
    pub group_delta: F,
    pub sample_deltas: Vec<F>,
}

pub fn deviation<F: Scalar>(group: &TrajectoryGroup<F>, prior: F) -> Result<Deviation<F>> {
    if !prior.is_finite() {
        return Err(Error::InvalidReward { value: prior.as_f64() });
    }
    Ok(Deviation {
        group_delta: group.mean_reward() - prior,
        sample_deltas: group.rewards().iter().map(|&r| r - prior).collect(),
    })
}
