//! Group-relative advantages and the clipped surrogate loss.
//!
//! Index convention: `j` runs over the `G` members of one group, `t` over the
//! horizon. A group's loss is
//!
//! ```text
//! L = -(1/G) sum_j (1/T) sum_t min(r_jt * A_j, clip(r_jt, 1-eps, 1+eps) * A_j)
//! r_jt = exp(log pi_theta(a_jt) - log pi_old(a_jt))
//! ```
//!
//! with one trajectory-level advantage `A_j` broadcast over all steps.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Policy, PromptId, Trajectory};
use crate::scalar::{mean, population_std, Scalar};

/// Population std below this is treated as a zero-information group.
pub const DEGENERATE_STD: f64 = 1e-12;
pub const MIN_RATIO: f64 = 1e-8;
pub const MAX_RATIO: f64 = 1e8;

/// Trajectories sampled for one prompt, before they are scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledGroup<F> {
    pub prompt_id: PromptId,
    pub trajectories: Vec<Trajectory<F>>,
}

impl<F: Scalar> SampledGroup<F> {
    pub fn with_rewards(self, rewards: Vec<F>) -> Result<TrajectoryGroup<F>> {
        TrajectoryGroup::new(self.prompt_id, self.trajectories, rewards)
    }
}

/// `G >= 2` scored trajectories for one prompt, all of the same horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup<F> {
    prompt_id: PromptId,
    trajectories: Vec<Trajectory<F>>,
    rewards: Vec<F>,
}

impl<F: Scalar> TrajectoryGroup<F> {
    pub fn new(prompt_id: PromptId, trajectories: Vec<Trajectory<F>>, rewards: Vec<F>) -> Result<Self> {
        if trajectories.len() != rewards.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trajectories but {} rewards",
                trajectories.len(),
                rewards.len()
            )));
        }
        if trajectories.len() < 2 {
            return Err(Error::GroupTooSmall {
                len: trajectories.len(),
            });
        }
        let horizon = trajectories[0].len();
        if let Some(t) = trajectories.iter().find(|t| t.len() != horizon) {
            return Err(Error::ShapeMismatch(format!(
                "horizon mismatch inside group: {} vs {horizon}",
                t.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidReward { value: r.as_f64() });
        }
        Ok(Self {
            prompt_id,
            trajectories,
            rewards,
        })
    }

    pub fn prompt_id(&self) -> PromptId {
        self.prompt_id
    }

    pub fn trajectories(&self) -> &[Trajectory<F>] {
        &self.trajectories
    }

    pub fn rewards(&self) -> &[F] {
        &self.rewards
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn mean_reward(&self) -> F {
        mean(&self.rewards).expect("group is non-empty")
    }

    /// Same trajectories scored with a different reward set.
    pub fn with_rewards(&self, rewards: Vec<F>) -> Result<Self> {
        Self::new(self.prompt_id, self.trajectories.clone(), rewards)
    }
}

/// Standardized group advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Advantages<F>(Vec<F>);

impl<F> Advantages<F> {
    pub fn into_inner(self) -> Vec<F> {
        self.0
    }
}

impl<F> Deref for Advantages<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

/// `A_j = (R_j - mean(R)) / std_pop(R)`, or all zeros when the group carries no
/// ranking information (`std_pop(R) < 1e-12`).
pub fn compute_advantages<F: Scalar>(rewards: &[F]) -> Result<Advantages<F>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall { len: rewards.len() });
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidReward { value: r.as_f64() });
    }
    let m = mean(rewards).expect("non-empty");
    let std = population_std(rewards, m);
    if !(std >= F::lit(DEGENERATE_STD)) {
        return Ok(Advantages(vec![F::zero(); rewards.len()]));
    }
    Ok(Advantages(rewards.iter().map(|&r| (r - m) / std).collect()))
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate<F: Scalar>(ratio: F, advantage: F, epsilon: F) -> Result<F> {
    if !(ratio > F::zero()) {
        return Err(Error::InvalidRatio { value: ratio.as_f64() });
    }
    Ok(surrogate_and_slope(ratio, advantage, epsilon).0)
}

/// Surrogate value and its derivative in the ratio. Ties (including the clip
/// boundary itself) resolve to the unclipped branch.
fn surrogate_and_slope<F: Scalar>(ratio: F, advantage: F, epsilon: F) -> (F, F) {
    let clipped_ratio = ratio.max(F::one() - epsilon).min(F::one() + epsilon);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, F::zero())
    }
}

/// Importance ratio from log-probabilities, clamped to `[1e-8, 1e8]`.
/// The returned flag is true when the clamp was active.
pub fn importance_ratio<F: Scalar>(logp_new: F, logp_old: F) -> (F, bool) {
    let raw = (logp_new - logp_old).exp();
    let lo = F::lit(MIN_RATIO);
    let hi = F::lit(MAX_RATIO);
    if raw < lo {
        (lo, true)
    } else if raw > hi {
        (hi, true)
    } else {
        (raw, false)
    }
}

fn check_shapes<F: Scalar>(group: &TrajectoryGroup<F>, advantages: &[F], epsilon: F) -> Result<()> {
    if advantages.len() != group.size() {
        return Err(Error::ShapeMismatch(format!(
            "{} advantages for a group of {}",
            advantages.len(),
            group.size()
        )));
    }
    if !(epsilon > F::zero() && epsilon < F::one()) {
        return Err(Error::Config(format!("clip epsilon {epsilon} outside (0, 1)")));
    }
    Ok(())
}

pub fn grpo_group_loss<F: Scalar, P: Policy<F> + ?Sized>(
    group: &TrajectoryGroup<F>,
    advantages: &[F],
    policy: &P,
    epsilon: F,
) -> Result<F> {
    check_shapes(group, advantages, epsilon)?;
    let g = F::from_usize_lossy(group.size());
    let t = F::from_usize_lossy(group.horizon());
    let prompt = group.prompt_id();
    let mut total = F::zero();
    for (traj, &adv) in group.trajectories().iter().zip(advantages) {
        let mut per_traj = F::zero();
        for ((state, &action), &old) in traj.states.iter().zip(&traj.actions).zip(&traj.old_logprobs) {
            let (ratio, _) = importance_ratio(policy.log_prob(prompt, state, action)?, old);
            per_traj = per_traj + surrogate_and_slope(ratio, adv, epsilon).0;
        }
        total = total + per_traj / t;
    }
    Ok(-total / g)
}

/// Loss and its exact gradient with respect to the policy parameters.
pub fn grpo_group_loss_and_gradient<F: Scalar, P: Policy<F> + ?Sized>(
    group: &TrajectoryGroup<F>,
    advantages: &[F],
    policy: &P,
    epsilon: F,
) -> Result<(F, Vec<F>)> {
    check_shapes(group, advantages, epsilon)?;
    let g = F::from_usize_lossy(group.size());
    let t = F::from_usize_lossy(group.horizon());
    let norm = g * t;
    let prompt = group.prompt_id();
    let mut grad = vec![F::zero(); policy.num_params()];
    let mut total = F::zero();
    for (traj, &adv) in group.trajectories().iter().zip(advantages) {
        let mut per_traj = F::zero();
        for ((state, &action), &old) in traj.states.iter().zip(&traj.actions).zip(&traj.old_logprobs) {
            let (ratio, clamped) = importance_ratio(policy.log_prob(prompt, state, action)?, old);
            let (value, slope) = surrogate_and_slope(ratio, adv, epsilon);
            per_traj = per_traj + value;
            if !clamped && slope != F::zero() {
                // d ratio / d theta = ratio * d log pi / d theta
                policy.accumulate_log_prob_grad(prompt, state, action, -slope * ratio / norm, &mut grad)?;
            }
        }
        total = total + per_traj / t;
    }
    Ok((-total / g, grad))
}

pub fn grpo_group_loss_gradient<F: Scalar, P: Policy<F> + ?Sized>(
    group: &TrajectoryGroup<F>,
    advantages: &[F],
    policy: &P,
    epsilon: F,
) -> Result<Vec<F>> {
    grpo_group_loss_and_gradient(group, advantages, policy, epsilon).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{StepState, TabularPolicy};
    use crate::rng::Substreams;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Brute-force population mean/std oracle, written independently.
    fn oracle_standardize(r: &[f64]) -> Vec<f64> {
        let n = r.len() as f64;
        let mut m = 0.0;
        for x in r {
            m += x / n;
        }
        let mut v = 0.0;
        for x in r {
            v += (x - m) * (x - m) / n;
        }
        r.iter().map(|x| (x - m) / v.sqrt()).collect()
    }

    fn oracle_surrogate(ratio: f64, a: f64, eps: f64) -> f64 {
        let c = if ratio < 1.0 - eps {
            1.0 - eps
        } else if ratio > 1.0 + eps {
            1.0 + eps
        } else {
            ratio
        };
        let x = ratio * a;
        let y = c * a;
        if x < y {
            x
        } else {
            y
        }
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                p[i] = x[i] + h;
                let up = f(&p);
                p[i] = x[i] - h;
                let down = f(&p);
                p[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn traj(actions: &[usize], old: &[f64]) -> Trajectory<f64> {
        let states = (0..actions.len()).map(|position| StepState { position }).collect();
        Trajectory::new(actions.to_vec(), old.to_vec(), states).unwrap()
    }

    #[test]
    fn advantages_examples() {
        let a = compute_advantages(&[1.0_f64, 2.0, 3.0]).unwrap();
        let expected = oracle_standardize(&[1.0, 2.0, 3.0]);
        assert!((expected[0] + 1.224_744_871_391_589).abs() < 1e-12);
        for (x, y) in a.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(&*compute_advantages(&[5.0_f64; 4]).unwrap(), &[0.0; 4]);
        let a = compute_advantages(&[0.0_f64, 1.0]).unwrap();
        assert_eq!(&*a, &[-1.0, 1.0]);
    }

    #[test]
    fn advantages_errors() {
        assert!(matches!(compute_advantages(&[1.0_f64]), Err(Error::GroupTooSmall { len: 1 })));
        assert!(matches!(
            compute_advantages(&[1.0_f64, f64::NAN]),
            Err(Error::InvalidReward { .. })
        ));
        assert!(matches!(
            compute_advantages(&[1.0_f64, f64::INFINITY]),
            Err(Error::InvalidReward { .. })
        ));
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.5_f64, 2.0, 0.2).unwrap(), 1.2 * 2.0);
        for a in [-3.0_f64, -0.1, 0.0, 0.7, 5.0] {
            assert_eq!(clipped_surrogate(1.0, a, 0.3).unwrap(), a);
        }
        // min(0.5 * -1, 0.8 * -1) = -0.8: the pessimistic branch wins.
        let v = clipped_surrogate(0.5_f64, -1.0, 0.2).unwrap();
        assert_eq!(v, oracle_surrogate(0.5, -1.0, 0.2));
        assert!((v + 0.8).abs() < 1e-15);
        assert!(matches!(clipped_surrogate(0.0_f64, 1.0, 0.2), Err(Error::InvalidRatio { .. })));
        assert!(clipped_surrogate(-1.0_f64, 1.0, 0.2).is_err());
    }

    #[test]
    fn on_policy_loss_is_zero() {
        let pol = TabularPolicy::<f64>::random(1, 2, 4, 1.0, &Substreams::new(2));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trajs: Vec<_> = (0..3).map(|_| pol.sample_sequence(PromptId(0), &mut rng).unwrap()).collect();
        let group = TrajectoryGroup::new(PromptId(0), trajs, vec![1.0, 2.0, 3.0]).unwrap();
        let adv = compute_advantages(group.rewards()).unwrap();
        let loss = grpo_group_loss(&group, &adv, &pol, 0.2).unwrap();
        assert!(loss.abs() < 1e-10);

        let flat = group.with_rewards(vec![4.0; 3]).unwrap();
        let adv0 = compute_advantages(flat.rewards()).unwrap();
        let (l, g) = grpo_group_loss_and_gradient(&flat, &adv0, &pol, 0.2).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn two_by_one_hand_instance() {
        // V = 2, T = 1. Current logits [0.3, -0.2]; behaviour logprobs chosen by hand.
        let pol = TabularPolicy::from_params(1, 1, 2, vec![0.3_f64, -0.2]).unwrap();
        let group = TrajectoryGroup::new(
            PromptId(0),
            vec![traj(&[0], &[-0.9]), traj(&[1], &[-0.5])],
            vec![1.0, 0.0],
        )
        .unwrap();
        let adv = [1.0_f64, -1.0];
        // term-by-term oracle
        let z = (0.3_f64.exp() + (-0.2_f64).exp()).ln();
        let lp0 = 0.3 - z;
        let lp1 = -0.2 - z;
        let h0 = oracle_surrogate((lp0 + 0.9).exp(), 1.0, 0.2);
        let h1 = oracle_surrogate((lp1 + 0.5).exp(), -1.0, 0.2);
        let expected = -(h0 + h1) / 2.0;
        let loss = grpo_group_loss(&group, &adv, &pol, 0.2).unwrap();
        assert!((loss - expected).abs() < 1e-14, "{loss} vs {expected}");
    }

    #[test]
    fn single_dominant_trajectory_gradient() {
        let pol = TabularPolicy::<f64>::random(1, 3, 4, 0.8, &Substreams::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trajs: Vec<_> = (0..4).map(|_| pol.sample_sequence(PromptId(0), &mut rng).unwrap()).collect();
        let group = TrajectoryGroup::new(PromptId(0), trajs.clone(), vec![0.0; 4]).unwrap();
        let adv = [0.0, 1.0, 0.0, 0.0];
        let g = grpo_group_loss_gradient(&group, &adv, &pol, 0.2).unwrap();
        let (_, glogp) = pol.logprob_and_grad(&trajs[1], PromptId(0)).unwrap();
        for (a, b) in g.iter().zip(&glogp) {
            assert!((a + b / 12.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let pol = TabularPolicy::<f64>::uniform(1, 2, 2);
        let group = TrajectoryGroup::new(
            PromptId(0),
            vec![traj(&[0, 1], &[-0.7, -0.7]), traj(&[1, 1], &[-0.7, -0.7])],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            grpo_group_loss(&group, &[1.0], &pol, 0.2),
            Err(Error::ShapeMismatch(_))
        ));
        let mixed = TrajectoryGroup::new(
            PromptId(0),
            vec![traj(&[0, 1], &[-0.7, -0.7]), traj(&[1], &[-0.7])],
            vec![0.0, 1.0],
        );
        assert!(matches!(mixed, Err(Error::ShapeMismatch(_))));
        let single = TrajectoryGroup::new(PromptId(0), vec![traj(&[0], &[-0.7])], vec![0.0]);
        assert!(matches!(single, Err(Error::GroupTooSmall { len: 1 })));
    }

    #[test]
    fn ratio_clamp() {
        let (r, c) = importance_ratio(0.0_f64, -40.0);
        assert_eq!((r, c), (1e8, true));
        let (r, c) = importance_ratio(-40.0_f64, 0.0);
        assert_eq!((r, c), (1e-8, true));
        let (r, c) = importance_ratio(-1.0_f64, -1.0);
        assert_eq!((r, c), (1.0, false));
    }

    #[test]
    fn f32_advantages() {
        let a = compute_advantages(&[0.0_f32, 1.0]).unwrap();
        assert_eq!(&*a, &[-1.0_f32, 1.0]);
    }

    proptest! {
        #[test]
        fn standardization(rewards in prop::collection::vec(-50.0f64..50.0, 2..16)) {
            let a = compute_advantages(&rewards).unwrap();
            let m = mean(&rewards).unwrap();
            if population_std(&rewards, m) >= 1e-6 {
                let am = mean(&a).unwrap();
                prop_assert!(am.abs() < 1e-10);
                prop_assert!((population_std(&a, am) - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn affine_invariance(
            rewards in prop::collection::vec(-10.0f64..10.0, 2..12),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let m = mean(&rewards).unwrap();
            prop_assume!(population_std(&rewards, m) > 1e-3);
            let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
            let a = compute_advantages(&rewards).unwrap();
            let b = compute_advantages(&moved).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn clip_is_min_of_branches(ratio in 1e-3f64..5.0, adv in -5.0f64..5.0, eps in 0.01f64..0.99) {
            let got = clipped_surrogate(ratio, adv, eps).unwrap();
            prop_assert_eq!(got, oracle_surrogate(ratio, adv, eps));
        }

        #[test]
        fn gradient_matches_fd(
            seed in 0u64..10_000,
            g in 2usize..=4,
            horizon in 1usize..=3,
            vocab in 2usize..=5,
        ) {
            let streams = Substreams::new(seed);
            let old = TabularPolicy::<f64>::random(1, horizon, vocab, 1.0, &streams);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trajs: Vec<_> = (0..g).map(|_| old.sample_sequence(PromptId(0), &mut rng).unwrap()).collect();
            let rewards: Vec<f64> = (0..g).map(|i| ((seed + i as u64 * 7) % 5) as f64).collect();
            let group = TrajectoryGroup::new(PromptId(0), trajs, rewards).unwrap();
            let adv = compute_advantages(group.rewards()).unwrap();
            let drift = TabularPolicy::<f64>::random(1, horizon, vocab, 0.15, &Substreams::new(seed + 1));
            let theta: Vec<f64> = old.params().iter().zip(drift.params()).map(|(a, b)| a + b).collect();
            let pol = TabularPolicy::from_params(1, horizon, vocab, theta.clone()).unwrap();
            // Skip instances sitting on a clip kink.
            for t in group.trajectories() {
                for ((s, &a), &o) in t.states.iter().zip(&t.actions).zip(&t.old_logprobs) {
                    let r = (pol.log_prob(PromptId(0), s, a).unwrap() - o).exp();
                    prop_assume!(((r - 1.0).abs() - 0.2).abs() > 1e-4);
                }
            }
            let grad = grpo_group_loss_gradient(&group, &adv, &pol, 0.2).unwrap();
            let f = |th: &[f64]| {
                let p = TabularPolicy::from_params(1, horizon, vocab, th.to_vec()).unwrap();
                grpo_group_loss(&group, &adv, &p, 0.2).unwrap()
            };
            let fd = central_diff(f, &theta, 1e-6);
            let scale = grad.iter().chain(&fd).fold(0.0f64, |m, x| m.max(x.abs()));
            let err = grad.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            // Sup-norm relative error; the 1e-3 floor keeps all-zero gradients from
            // comparing rounding noise against itself.
            let rel = err / scale.max(1e-3);
            prop_assert!(rel < 1e-5, "rel err {}", rel);
        }
    }
}
