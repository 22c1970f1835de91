//! The prior-guided training loop.
//!
//! Per step and per prompt in the batch: sample a group, score it, query the
//! prior, build the base advantages, the trust weight and the contrastive
//! advantages. The update minimizes
//!
//! ```text
//! J = (1/N) sum_i [ w_i * L_i + beta * L_crt_i ]
//! ```
//!
//! with `w_i` held constant. Priors for the whole batch are read before any of
//! the step's group means are fed back.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::BpgoConfig;
use crate::crt::{transform_group, CrtParams};
use crate::env::AmbiguousEnv;
use crate::error::{Error, Result};
use crate::grpo::{compute_advantages, grpo_group_loss_and_gradient, TrajectoryGroup};
use crate::optim::Optimizer;
use crate::policy::{Policy, PromptId, TabularPolicy};
use crate::prior::{deviation, Prior, PriorContext, PriorEstimator, PriorStrategy};
use crate::ras::{trust_weight, RasParams};
use crate::rng::{StreamKind, Substreams};
use crate::scalar::{mean, Scalar};

/// Per-prompt slice of a [`StepReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptReport<F> {
    pub prompt_id: PromptId,
    pub raw_rewards: Vec<F>,
    /// Empty when the contrastive term is disabled.
    pub transformed_rewards: Vec<F>,
    pub true_qualities: Vec<F>,
    pub r_prior: F,
    pub delta: F,
    pub weight: F,
    pub loss_base: F,
    pub loss_crt: F,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport<F> {
    pub step: usize,
    pub prompts: Vec<PromptReport<F>>,
    /// `(1/N) sum_i w_i L_i`
    pub loss_ras: F,
    /// `(1/N) sum_i L_crt_i`
    pub loss_crt: F,
    pub loss_bpgo: F,
    /// Objective value before each inner update; the first entry is `loss_bpgo`.
    pub update_losses: Vec<F>,
    pub mean_raw_reward: F,
    pub mean_true_quality: F,
    /// Exact expected true quality of the pre-update policy averaged over all
    /// prompts; absent when the sequence space is too large to enumerate.
    pub expected_true_quality: Option<F>,
    pub grad_norm: F,
}

/// A scored group with everything the objective needs, frozen for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup<F> {
    pub group: TrajectoryGroup<F>,
    pub r_prior: F,
    pub delta: F,
    pub weight: F,
    pub advantages: Vec<F>,
    pub transformed_rewards: Option<Vec<F>>,
    pub crt_advantages: Option<Vec<F>>,
}

/// Builds base advantages, trust weight and (optionally) contrastive advantages.
/// `ras = None` pins the weight to one; `crt = None` drops the auxiliary term.
pub fn prepare_group<F: Scalar>(
    group: TrajectoryGroup<F>,
    r_prior: F,
    ras: Option<&RasParams<F>>,
    crt: Option<&CrtParams<F>>,
) -> Result<PreparedGroup<F>> {
    let dev = deviation(&group, r_prior)?;
    let weight = ras.map_or(F::one(), |p| trust_weight(dev.group_delta, p));
    let advantages = compute_advantages(group.rewards())?.into_inner();
    let (transformed_rewards, crt_advantages) = match crt {
        Some(p) => {
            let t = transform_group(group.rewards(), r_prior, p)?;
            let a = compute_advantages(&t)?.into_inner();
            (Some(t), Some(a))
        }
        None => (None, None),
    };
    Ok(PreparedGroup {
        group,
        r_prior,
        delta: dev.group_delta,
        weight,
        advantages,
        transformed_rewards,
        crt_advantages,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTerms<F> {
    pub loss_base: F,
    pub loss_crt: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective<F> {
    pub terms: Vec<GroupTerms<F>>,
    pub loss: F,
    pub gradient: Vec<F>,
}

struct GroupEval<F> {
    loss_base: F,
    grad_base: Vec<F>,
    loss_crt: F,
    grad_crt: Option<Vec<F>>,
}

fn eval_group<F: Scalar, P: Policy<F> + ?Sized>(g: &PreparedGroup<F>, policy: &P, eps: F) -> Result<GroupEval<F>> {
    let (loss_base, grad_base) = grpo_group_loss_and_gradient(&g.group, &g.advantages, policy, eps)?;
    let (loss_crt, grad_crt) = match &g.crt_advantages {
        Some(a) => {
            let (l, gr) = grpo_group_loss_and_gradient(&g.group, a, policy, eps)?;
            (l, Some(gr))
        }
        None => (F::zero(), None),
    };
    Ok(GroupEval {
        loss_base,
        grad_base,
        loss_crt,
        grad_crt,
    })
}

/// Combined objective and its gradient at `policy`, with weights frozen.
/// Reduction runs in slice order whether or not evaluation is parallel.
pub fn bpgo_objective<F: Scalar, P: Policy<F> + ?Sized>(
    groups: &[PreparedGroup<F>],
    policy: &P,
    beta: F,
    epsilon: F,
    parallel: bool,
) -> Result<Objective<F>> {
    if groups.is_empty() {
        return Err(Error::ShapeMismatch("objective over an empty batch".into()));
    }
    let evals: Vec<GroupEval<F>> = if parallel {
        groups.par_iter().map(|g| eval_group(g, policy, epsilon)).collect::<Result<_>>()?
    } else {
        groups.iter().map(|g| eval_group(g, policy, epsilon)).collect::<Result<_>>()?
    };
    let n = F::from_usize_lossy(groups.len());
    let mut gradient = vec![F::zero(); policy.num_params()];
    let mut total = F::zero();
    let mut terms = Vec::with_capacity(groups.len());
    for (g, e) in groups.iter().zip(evals) {
        total = total + g.weight * e.loss_base + beta * e.loss_crt;
        for (acc, &d) in gradient.iter_mut().zip(&e.grad_base) {
            *acc = *acc + g.weight * d / n;
        }
        if let Some(gc) = &e.grad_crt {
            for (acc, &d) in gradient.iter_mut().zip(gc) {
                *acc = *acc + beta * d / n;
            }
        }
        terms.push(GroupTerms {
            loss_base: e.loss_base,
            loss_crt: e.loss_crt,
        });
    }
    Ok(Objective {
        terms,
        loss: total / n,
        gradient,
    })
}

/// Report plus the gradient applied at the first inner update.
#[derive(Debug, Clone)]
pub struct StepOutcome<F> {
    pub report: StepReport<F>,
    pub gradient: Vec<F>,
}

/// Builds the prior estimator named by the configuration.
pub fn prior_from_config<F: Scalar>(config: &BpgoConfig) -> Result<PriorEstimator<F>> {
    let p = &config.prior;
    Ok(match p.strategy {
        PriorStrategy::Fixed => PriorEstimator::fixed(F::lit(p.fixed_value)),
        PriorStrategy::ReferenceRollout => PriorEstimator::reference_rollout(),
        PriorStrategy::FirstObservation => PriorEstimator::first_observation(),
        PriorStrategy::RunningMean => PriorEstimator::running_mean(F::lit(p.decay), p.scope)?,
    })
}

pub struct Trainer<F: Scalar, P: Prior<F> = PriorEstimator<F>> {
    config: BpgoConfig,
    env: AmbiguousEnv<F>,
    policy: TabularPolicy<F>,
    prior: P,
    optimizer: Optimizer<F>,
    streams: Substreams,
    reference_rewards: Vec<Vec<F>>,
    ras: Option<RasParams<F>>,
    crt: Option<CrtParams<F>>,
    beta: F,
    epsilon: F,
    step: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(config: BpgoConfig, env: AmbiguousEnv<F>, policy: TabularPolicy<F>) -> Result<Self> {
        let prior = prior_from_config(&config)?;
        Self::with_prior(config, env, policy, prior)
    }
}

impl<F: Scalar, P: Prior<F>> Trainer<F, P> {
    pub fn with_prior(config: BpgoConfig, env: AmbiguousEnv<F>, policy: TabularPolicy<F>, prior: P) -> Result<Self> {
        config.validate()?;
        env.check_policy(&policy)?;
        if let Some(b) = config.batch_prompts {
            if b > env.num_prompts() {
                return Err(Error::Config(format!(
                    "trainer.batch_prompts {b} exceeds the {} available prompts",
                    env.num_prompts()
                )));
            }
        }
        let streams = Substreams::new(config.seed);
        let ras = config
            .enable_ras
            .then(|| RasParams::new(F::lit(config.alpha), F::lit(config.k)))
            .transpose()?;
        let crt = config
            .enable_crt
            .then(|| {
                CrtParams::new(
                    F::lit(config.lambda),
                    F::lit(config.reward_clamp[0]),
                    F::lit(config.reward_clamp[1]),
                )
            })
            .transpose()?;
        // The frozen initial policy plays the reference model.
        let reference_rewards = if config.prior.strategy == PriorStrategy::ReferenceRollout {
            (0..env.num_prompts())
                .map(|p| reference_rollouts(&env, &policy, PromptId(p), config.prior.reference_samples, &streams))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let optimizer = Optimizer::new(&config.optimizer, policy.num_params());
        Ok(Self {
            beta: if config.enable_crt { F::lit(config.beta) } else { F::zero() },
            epsilon: F::lit(config.clip_epsilon),
            config,
            env,
            policy,
            prior,
            optimizer,
            streams,
            reference_rewards,
            ras,
            crt,
            step: 0,
        })
    }

    pub fn policy(&self) -> &TabularPolicy<F> {
        &self.policy
    }

    pub fn into_policy(self) -> TabularPolicy<F> {
        self.policy
    }

    pub fn prior(&self) -> &P {
        &self.prior
    }

    pub fn env(&self) -> &AmbiguousEnv<F> {
        &self.env
    }

    pub fn config(&self) -> &BpgoConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Prompts of the current step's batch, ascending.
    pub fn batch(&self) -> Vec<PromptId> {
        let count = self.env.num_prompts();
        match self.config.batch_prompts {
            None => (0..count).map(PromptId).collect(),
            Some(b) => {
                let mut ids: Vec<PromptId> = (0..b).map(|i| PromptId((self.step * b + i) % count)).collect();
                ids.sort();
                ids
            }
        }
    }

    /// Mean exact expected true quality over all prompts under the current policy.
    pub fn expected_true_quality(&self) -> Result<Option<F>> {
        let mut values = Vec::with_capacity(self.env.num_prompts());
        for p in 0..self.env.num_prompts() {
            match self.env.expected_true_quality(&self.policy, PromptId(p))? {
                Some(v) => values.push(v),
                None => return Ok(None),
            }
        }
        Ok(mean(&values))
    }

    fn non_finite(&self, prompt: PromptId, what: &'static str) -> Error {
        Error::NonFiniteLoss {
            step: self.step,
            prompt: prompt.0,
            what,
        }
    }

    pub fn step(&mut self) -> Result<StepOutcome<F>> {
        let batch = self.batch();
        let expected_true_quality = self.expected_true_quality()?;

        let (env, policy, streams) = (&self.env, &self.policy, &self.streams);
        let (g, step) = (self.config.group_size, self.step as u64);
        let roll = |&p: &PromptId| rollout(env, policy, streams, g, step, p);
        let rollouts: Vec<(TrajectoryGroup<F>, Vec<F>)> = if self.config.parallel {
            batch.par_iter().map(roll).collect::<Result<_>>()?
        } else {
            batch.iter().map(roll).collect::<Result<_>>()?
        };

        let mut prepared = Vec::with_capacity(batch.len());
        let mut qualities = Vec::with_capacity(batch.len());
        for (group, q) in rollouts {
            let prompt = group.prompt_id();
            let baseline = self.env.baseline_reward(prompt)?;
            let ctx = PriorContext {
                group_mean: Some(group.mean_reward()),
                reference_rewards: self.reference_rewards.get(prompt.0).map(Vec::as_slice),
                baseline_reward: Some(baseline),
            };
            let r_prior = self.prior.prior_for(prompt, &ctx)?;
            if !r_prior.is_finite() {
                return Err(self.non_finite(prompt, "prior"));
            }
            prepared.push(prepare_group(group, r_prior, self.ras.as_ref(), self.crt.as_ref())?);
            qualities.push(q);
        }

        let mut update_losses = Vec::with_capacity(self.config.inner_epochs);
        let mut first: Option<Objective<F>> = None;
        for _ in 0..self.config.inner_epochs {
            let obj = bpgo_objective(&prepared, &self.policy, self.beta, self.epsilon, self.config.parallel)?;
            for (g, t) in prepared.iter().zip(&obj.terms) {
                if !(t.loss_base.is_finite() && t.loss_crt.is_finite()) {
                    return Err(self.non_finite(g.group.prompt_id(), "loss"));
                }
            }
            if let Some(i) = obj.gradient.iter().position(|d| !d.is_finite()) {
                let per_prompt = self.policy.horizon() * self.policy.vocab();
                return Err(self.non_finite(PromptId(i / per_prompt), "gradient"));
            }
            update_losses.push(obj.loss);
            self.optimizer.step(self.policy.params_mut(), &obj.gradient);
            if first.is_none() {
                first = Some(obj);
            }
        }
        let obj = first.expect("at least one inner epoch");

        for g in &prepared {
            self.prior.update(g.group.prompt_id(), g.group.mean_reward())?;
        }

        let n = F::from_usize_lossy(prepared.len());
        let prompts: Vec<PromptReport<F>> = prepared
            .into_iter()
            .zip(&obj.terms)
            .zip(qualities)
            .map(|((g, t), q)| PromptReport {
                prompt_id: g.group.prompt_id(),
                raw_rewards: g.group.rewards().to_vec(),
                transformed_rewards: g.transformed_rewards.unwrap_or_default(),
                true_qualities: q,
                r_prior: g.r_prior,
                delta: g.delta,
                weight: g.weight,
                loss_base: t.loss_base,
                loss_crt: t.loss_crt,
            })
            .collect();
        let loss_ras = prompts.iter().map(|p| p.weight * p.loss_base).sum::<F>() / n;
        let loss_crt = prompts.iter().map(|p| p.loss_crt).sum::<F>() / n;
        let all_rewards: Vec<F> = prompts.iter().flat_map(|p| p.raw_rewards.iter().copied()).collect();
        let all_quality: Vec<F> = prompts.iter().flat_map(|p| p.true_qualities.iter().copied()).collect();
        let grad_norm = obj.gradient.iter().map(|&d| d * d).sum::<F>().sqrt();

        let report = StepReport {
            step: self.step,
            prompts,
            loss_ras,
            loss_crt,
            loss_bpgo: obj.loss,
            update_losses,
            mean_raw_reward: mean(&all_rewards).expect("non-empty batch"),
            mean_true_quality: mean(&all_quality).expect("non-empty batch"),
            expected_true_quality,
            grad_norm,
        };
        self.step += 1;
        Ok(StepOutcome {
            report,
            gradient: obj.gradient,
        })
    }
}

/// Samples and scores one group; returns it with the true qualities.
fn rollout<F: Scalar>(
    env: &AmbiguousEnv<F>,
    policy: &TabularPolicy<F>,
    streams: &Substreams,
    group_size: usize,
    step: u64,
    prompt: PromptId,
) -> Result<(TrajectoryGroup<F>, Vec<F>)> {
    let sampled = env.sample_group(policy, prompt, group_size, streams, step)?;
    let rewards = env.score_group(&sampled, streams, StreamKind::RewardNoise, step)?;
    let qualities = sampled
        .trajectories
        .iter()
        .map(|t| env.true_quality(prompt, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((sampled.with_rewards(rewards)?, qualities))
}

/// Rewards of `count` rollouts of the reference policy for one prompt.
fn reference_rollouts<F: Scalar>(
    env: &AmbiguousEnv<F>,
    reference: &TabularPolicy<F>,
    prompt: PromptId,
    count: usize,
    streams: &Substreams,
) -> Result<Vec<F>> {
    let mut rewards = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = streams.rng(StreamKind::Reference, 0, prompt.0 as u64, k as u64);
        let traj = reference.sample_sequence(prompt, &mut rng)?;
        rewards.push(env.reward(prompt, &traj, &mut rng)?);
    }
    Ok(rewards)
}

/// Final state of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub policy: TabularPolicy<F>,
    pub reports: Vec<StepReport<F>>,
    pub final_expected_true_quality: Option<F>,
}

/// Runs `config.steps` steps, handing each report to `on_step` as it is produced.
pub fn train_with<F, P, C>(
    config: &BpgoConfig,
    env: &AmbiguousEnv<F>,
    policy: TabularPolicy<F>,
    prior: P,
    mut on_step: C,
) -> Result<(TabularPolicy<F>, Option<F>)>
where
    F: Scalar,
    P: Prior<F>,
    C: FnMut(&StepReport<F>) -> Result<()>,
{
    let mut trainer = Trainer::with_prior(config.clone(), env.clone(), policy, prior)?;
    for _ in 0..config.steps {
        let out = trainer.step()?;
        on_step(&out.report)?;
    }
    let final_q = trainer.expected_true_quality()?;
    Ok((trainer.into_policy(), final_q))
}

pub fn train<F: Scalar>(config: &BpgoConfig, env: &AmbiguousEnv<F>, policy: TabularPolicy<F>) -> Result<TrainOutcome<F>> {
    let mut reports = Vec::with_capacity(config.steps);
    let prior = prior_from_config(config)?;
    let (policy, final_expected_true_quality) = train_with(config, env, policy, prior, |r| {
        reports.push(r.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        policy,
        reports,
        final_expected_true_quality,
    })
}
