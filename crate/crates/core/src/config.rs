//! Trainer hyper-parameters. Values are kept as `f64` and converted to the
//! training scalar type when a trainer is built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{PriorScope, PriorStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub strategy: PriorStrategy,
    /// Used by the `fixed` strategy.
    pub fixed_value: f64,
    /// EMA decay of the `running_mean` strategy.
    pub decay: f64,
    /// Rollouts per prompt for the `reference_rollout` strategy.
    pub reference_samples: usize,
    pub scope: PriorScope,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            strategy: PriorStrategy::RunningMean,
            fixed_value: 0.0,
            decay: 0.9,
            reference_samples: 4,
            scope: PriorScope::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpgoConfig {
    /// Trajectories sampled per prompt (G).
    pub group_size: usize,
    /// Prompts per step; `None` uses every prompt each step.
    pub batch_prompts: Option<usize>,
    pub steps: usize,
    pub clip_epsilon: f64,
    pub alpha: f64,
    pub k: f64,
    pub lambda: f64,
    pub reward_clamp: [f64; 2],
    /// Weight of the contrastive auxiliary loss.
    pub beta: f64,
    pub enable_ras: bool,
    pub enable_crt: bool,
    /// Optimizer updates per rollout batch.
    pub inner_epochs: usize,
    pub seed: u64,
    /// Run per-prompt rollouts and loss evaluation on the rayon pool.
    pub parallel: bool,
    pub prior: PriorConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for BpgoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            batch_prompts: None,
            steps: 200,
            clip_epsilon: 0.2,
            alpha: 0.5,
            k: 1.0,
            lambda: 1.0,
            reward_clamp: [-10.0, 10.0],
            beta: 0.3,
            enable_ras: true,
            enable_crt: true,
            inner_epochs: 1,
            seed: 0,
            parallel: false,
            prior: PriorConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl BpgoConfig {
    /// Plain group-relative optimization: both prior-guided terms disabled.
    pub fn grpo() -> Self {
        Self {
            enable_ras: false,
            enable_crt: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return fail(format!("trainer.group_size must be >= 2, got {}", self.group_size));
        }
        if self.batch_prompts == Some(0) {
            return fail("trainer.batch_prompts must be positive".into());
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail(format!("trainer.clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("trainer.alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return fail(format!("trainer.k must be > 0, got {}", self.k));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("trainer.lambda must be > 0, got {}", self.lambda));
        }
        if !(self.reward_clamp[0] < self.reward_clamp[1]) {
            return fail(format!("trainer.reward_clamp needs lo < hi, got {:?}", self.reward_clamp));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("trainer.beta must be >= 0, got {}", self.beta));
        }
        if self.inner_epochs == 0 {
            return fail("trainer.inner_epochs must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return fail(format!("trainer.optimizer.learning_rate must be > 0, got {}", o.learning_rate));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return fail("trainer.optimizer moments must lie in [0, 1) with epsilon > 0".into());
        }
        let p = &self.prior;
        if p.strategy == PriorStrategy::RunningMean && !(p.decay > 0.0 && p.decay < 1.0) {
            return fail(format!("trainer.prior.decay must lie in (0, 1), got {}", p.decay));
        }
        if p.strategy == PriorStrategy::ReferenceRollout && p.reference_samples == 0 {
            return fail("trainer.prior.reference_samples must be >= 1".into());
        }
        if !p.fixed_value.is_finite() {
            return fail("trainer.prior.fixed_value must be finite".into());
        }
        Ok(())
    }
}
