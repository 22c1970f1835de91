//! Prior-guided group-relative policy optimization.
//!
//! Group-relative advantages and the clipped surrogate loss ([`grpo`]) are
//! wrapped by two prior-anchored adjustments: a per-group trust weight
//! ([`ras`]) and a contrastive reward transformation with its auxiliary loss
//! ([`crt`]). [`trainer`] combines them into a training loop over the
//! synthetic ambiguous-reward environments of [`env`], and [`harness`] drives
//! experiments from JSON configuration files.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crt;
pub mod env;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod prior;
pub mod ras;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use config::{BpgoConfig, OptimizerConfig, OptimizerKind, PriorConfig};
pub use crt::{crt_group_loss, transform_group, transform_reward, CrtParams};
pub use env::{AmbiguousEnv, ClassAssignment, EnvSpec, PromptSpec};
pub use error::{Error, Result};
pub use grpo::{
    clipped_surrogate, compute_advantages, grpo_group_loss, grpo_group_loss_gradient, Advantages,
    SampledGroup, TrajectoryGroup,
};
pub use policy::{Policy, PromptId, StepState, TabularPolicy, Trajectory};
pub use prior::{deviation, Deviation, Prior, PriorContext, PriorEstimator, PriorScope, PriorStrategy};
pub use ras::{ras_weighted_loss, trust_weight, RasParams};
pub use rng::{StreamKind, Substreams};
pub use scalar::Scalar;
pub use trainer::{train, StepReport, Trainer};

pub type TabularPolicy64 = TabularPolicy<f64>;
pub type TabularPolicy32 = TabularPolicy<f32>;
pub type AmbiguousEnv64 = AmbiguousEnv<f64>;
pub type AmbiguousEnv32 = AmbiguousEnv<f32>;
pub type TrajectoryGroup64 = TrajectoryGroup<f64>;
pub type TrajectoryGroup32 = TrajectoryGroup<f32>;
pub type PriorEstimator64 = PriorEstimator<f64>;
pub type PriorEstimator32 = PriorEstimator<f32>;
pub type RasParams64 = RasParams<f64>;
pub type CrtParams64 = CrtParams<f64>;
pub type Trainer64 = Trainer<f64>;
pub type Trainer32 = Trainer<f32>;
pub type StepReport64 = StepReport<f64>;
