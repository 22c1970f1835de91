//! Tabular softmax sequence policies with exact log-probability gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamKind, Substreams};
use crate::scalar::Scalar;

/// Opaque prompt identifier. Doubles as the row index into per-prompt tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub usize);

/// Context needed to re-evaluate the policy at one step of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepState {
    pub position: usize,
}

/// A policy whose per-step log-probabilities and their parameter gradients are
/// available in closed form.
pub trait Policy<F: Scalar>: Sync {
    fn num_params(&self) -> usize;

    fn log_prob(&self, prompt: PromptId, state: &StepState, action: usize) -> Result<F>;

    /// Adds `scale * d log pi(action | state) / d theta` into `grad`.
    fn accumulate_log_prob_grad(
        &self,
        prompt: PromptId,
        state: &StepState,
        action: usize,
        scale: F,
        grad: &mut [F],
    ) -> Result<()>;
}

/// Logit table of shape `prompts x horizon x vocab`, one independent softmax per
/// `(prompt, position)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy<F> {
    num_prompts: usize,
    horizon: usize,
    vocab: usize,
    theta: Vec<F>,
}

impl<F: Scalar> TabularPolicy<F> {
    /// All-zero logits: the uniform policy.
    pub fn uniform(num_prompts: usize, horizon: usize, vocab: usize) -> Self {
        Self {
            num_prompts,
            horizon,
            vocab,
            theta: vec![F::zero(); num_prompts * horizon * vocab],
        }
    }

    pub fn from_params(num_prompts: usize, horizon: usize, vocab: usize, theta: Vec<F>) -> Result<Self> {
        let expected = num_prompts * horizon * vocab;
        if theta.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} entries, table needs {expected}",
                theta.len()
            )));
        }
        if let Some(bad) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite logit {bad}")));
        }
        Ok(Self {
            num_prompts,
            horizon,
            vocab,
            theta,
        })
    }

    /// Gaussian logits with standard deviation `std`, drawn from the init substream.
    pub fn random(num_prompts: usize, horizon: usize, vocab: usize, std: f64, streams: &Substreams) -> Self {
        let mut rng = streams.rng(StreamKind::Init, 0, 0, 0);
        let theta = (0..num_prompts * horizon * vocab)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::lit(std * z)
            })
            .collect();
        Self {
            num_prompts,
            horizon,
            vocab,
            theta,
        }
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[F] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.theta
    }

    fn offset(&self, prompt: PromptId, position: usize) -> Result<usize> {
        if prompt.0 >= self.num_prompts {
            return Err(Error::InvalidPrompt {
                prompt: prompt.0,
                count: self.num_prompts,
            });
        }
        if position >= self.horizon {
            return Err(Error::ShapeMismatch(format!(
                "position {position} beyond horizon {}",
                self.horizon
            )));
        }
        Ok((prompt.0 * self.horizon + position) * self.vocab)
    }

    fn logits(&self, prompt: PromptId, position: usize) -> Result<&[F]> {
        let start = self.offset(prompt, position)?;
        Ok(&self.theta[start..start + self.vocab])
    }

    /// Softmax probabilities at one `(prompt, position)` cell.
    pub fn probabilities(&self, prompt: PromptId, position: usize) -> Result<Vec<F>> {
        let logits = self.logits(prompt, position)?;
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: F = exps.iter().copied().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    /// Log-softmax over one cell, computed with the max shift.
    pub fn log_probabilities(&self, prompt: PromptId, position: usize) -> Result<Vec<F>> {
        let logits = self.logits(prompt, position)?;
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let log_norm = max + logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln();
        Ok(logits.iter().map(|&l| l - log_norm).collect())
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.vocab {
            return Err(Error::InvalidAction {
                action,
                vocab: self.vocab,
            });
        }
        Ok(())
    }

    /// Draws one action sequence by ancestral sampling, returning the actions,
    /// their log-probabilities under the current logits, and the step states.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, prompt: PromptId, rng: &mut R) -> Result<Trajectory<F>> {
        let mut actions = Vec::with_capacity(self.horizon);
        let mut old_logprobs = Vec::with_capacity(self.horizon);
        let mut states = Vec::with_capacity(self.horizon);
        for position in 0..self.horizon {
            let logp = self.log_probabilities(prompt, position)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = self.vocab - 1;
            for (a, lp) in logp.iter().enumerate() {
                acc += lp.as_f64().exp();
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            actions.push(chosen);
            old_logprobs.push(logp[chosen]);
            states.push(StepState { position });
        }
        Trajectory::new(actions, old_logprobs, states)
    }

    /// Per-step log-probabilities of `trajectory` and the gradient of their sum.
    pub fn logprob_and_grad(&self, trajectory: &Trajectory<F>, prompt: PromptId) -> Result<(Vec<F>, Vec<F>)> {
        let mut grad = vec![F::zero(); self.num_params()];
        let mut logps = Vec::with_capacity(trajectory.len());
        for (state, &action) in trajectory.states.iter().zip(&trajectory.actions) {
            logps.push(self.log_prob(prompt, state, action)?);
            self.accumulate_log_prob_grad(prompt, state, action, F::one(), &mut grad)?;
        }
        Ok((logps, grad))
    }
}

impl<F: Scalar> Policy<F> for TabularPolicy<F> {
    fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn log_prob(&self, prompt: PromptId, state: &StepState, action: usize) -> Result<F> {
        self.check_action(action)?;
        Ok(self.log_probabilities(prompt, state.position)?[action])
    }

    fn accumulate_log_prob_grad(
        &self,
        prompt: PromptId,
        state: &StepState,
        action: usize,
        scale: F,
        grad: &mut [F],
    ) -> Result<()> {
        self.check_action(action)?;
        if grad.len() != self.theta.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer has {} entries, policy has {}",
                grad.len(),
                self.theta.len()
            )));
        }
        let start = self.offset(prompt, state.position)?;
        let probs = self.probabilities(prompt, state.position)?;
        // d log softmax(a) / d logit_b = 1{a == b} - p_b
        for (b, p) in probs.into_iter().enumerate() {
            let indicator = if b == action { F::one() } else { F::zero() };
            grad[start + b] = grad[start + b] + scale * (indicator - p);
        }
        Ok(())
    }
}

/// One sampled output: actions plus the behaviour-policy log-probabilities
/// frozen at sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<F> {
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<F>,
    pub states: Vec<StepState>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn new(actions: Vec<usize>, old_logprobs: Vec<F>, states: Vec<StepState>) -> Result<Self> {
        if actions.len() != old_logprobs.len() || actions.len() != states.len() {
            return Err(Error::ShapeMismatch(format!(
                "trajectory lengths differ: {} actions, {} logprobs, {} states",
                actions.len(),
                old_logprobs.len(),
                states.len()
            )));
        }
        if actions.is_empty() {
            return Err(Error::ShapeMismatch("trajectory horizon must be at least 1".into()));
        }
        if let Some(lp) = old_logprobs.iter().find(|lp| !(**lp <= F::zero())) {
            return Err(Error::ShapeMismatch(format!(
                "behaviour log-probability {lp} is not a log-probability"
            )));
        }
        Ok(Self {
            actions,
            old_logprobs,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    fn random_policy(seed: u64, prompts: usize, horizon: usize, vocab: usize) -> TabularPolicy<f64> {
        TabularPolicy::random(prompts, horizon, vocab, 1.5, &Substreams::new(seed))
    }

    #[test]
    fn uniform_logprob_is_log_quarter() {
        let pol = TabularPolicy::<f64>::uniform(1, 3, 4);
        for pos in 0..3 {
            let lp = pol.log_prob(PromptId(0), &StepState { position: pos }, 2).unwrap();
            assert!((lp - 0.25_f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let pol = random_policy(3, 2, 3, 7);
        for p in 0..2 {
            for pos in 0..3 {
                let total: f64 = pol
                    .log_probabilities(PromptId(p), pos)
                    .unwrap()
                    .iter()
                    .map(|lp| lp.exp())
                    .sum();
                assert!((total - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pol = random_policy(11, 2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = pol.sample_sequence(PromptId(1), &mut rng).unwrap();
        let (_, grad) = pol.logprob_and_grad(&traj, PromptId(1)).unwrap();
        let f = |theta: &[f64]| {
            let p = TabularPolicy::from_params(2, 3, 5, theta.to_vec()).unwrap();
            p.logprob_and_grad(&traj, PromptId(1)).unwrap().0.iter().sum::<f64>()
        };
        let fd = central_diff(f, pol.params(), 1e-6);
        for (a, n) in grad.iter().zip(&fd) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-6, "analytic {a} vs fd {n}");
        }
        // Prompt 0 rows are untouched.
        assert!(grad[..15].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_action_vocab_is_deterministic() {
        let pol = TabularPolicy::<f64>::uniform(1, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = pol.sample_sequence(PromptId(0), &mut rng).unwrap();
        assert_eq!(t.actions, vec![0; 4]);
        assert!(t.old_logprobs.iter().all(|&lp| lp == 0.0));
    }

    #[test]
    fn out_of_range_action_rejected() {
        let pol = TabularPolicy::<f64>::uniform(1, 1, 4);
        let err = pol.log_prob(PromptId(0), &StepState { position: 0 }, 4).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { action: 4, vocab: 4 }));
        let mut g = vec![0.0; 4];
        assert!(pol
            .accumulate_log_prob_grad(PromptId(0), &StepState { position: 0 }, 9, 1.0, &mut g)
            .is_err());
    }

    #[test]
    fn trajectory_rejects_positive_logprob() {
        let r = Trajectory::new(vec![0], vec![0.1_f64], vec![StepState { position: 0 }]);
        assert!(r.is_err());
        let r = Trajectory::<f64>::new(vec![0, 1], vec![-0.1], vec![StepState { position: 0 }]);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn f32_policy_normalizes() {
        let pol = TabularPolicy::<f32>::from_params(1, 1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let total: f32 = pol.probabilities(PromptId(0), 0).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
