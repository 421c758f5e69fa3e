//! Bradley-Terry preference machinery and the three pairwise losses.
//!
//! Each objective scores a sequence with an implicit reward and trains the
//! policy to separate chosen from rejected under the logistic preference
//! model:
//!
//! ```text
//! dpo:            r(y) = β (log p_θ(y|x) - log p_ref(y|x))
//! posterior_prob: r(y) = β  log p_θ(y|x)
//! likelihood:     r(y) = β (log p_θ(y|x) - log p_LM(y))
//! loss = mean -log σ(r(y_w) - r(y_l))
//! ```
//!
//! `posterior_prob` is the reference-free form (its KL-constrained analogue
//! is entropy regularization); `likelihood` anchors on an unconditional
//! prior distribution instead of a prompt-conditioned reference. All
//! arithmetic stays in log space; the sigmoid and softplus branches are
//! stable for margins far beyond ±30.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::math;
use crate::policy::{LogitGrad, Mode, Policy, PromptId, Sequence};

/// Which implicit reward parameterization drives the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Dpo,
    PosteriorProb,
    Likelihood,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::PosteriorProb => "posterior_prob",
            ObjectiveKind::Likelihood => "likelihood",
        }
    }
}

/// Objective kind, KL strength β, and the reference-policy binding.
///
/// The binding is part of the objective's validity: `dpo` requires a frozen
/// reference, `likelihood` a frozen *unconditional* one (it plays the prior
/// p_LM(y)), and `posterior_prob` forbids a reference.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    kind: ObjectiveKind,
    beta: f64,
    reference: Option<Arc<Policy>>,
}

impl ObjectiveConfig {
    pub fn dpo(beta: f64, reference: Arc<Policy>) -> Result<Self> {
        Self::build(ObjectiveKind::Dpo, beta, Some(reference))
    }

    pub fn posterior_prob(beta: f64) -> Result<Self> {
        Self::build(ObjectiveKind::PosteriorProb, beta, None)
    }

    pub fn likelihood(beta: f64, reference: Arc<Policy>) -> Result<Self> {
        Self::build(ObjectiveKind::Likelihood, beta, Some(reference))
    }

    pub fn build(
        kind: ObjectiveKind,
        beta: f64,
        reference: Option<Arc<Policy>>,
    ) -> Result<Self> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        match (kind, &reference) {
            (ObjectiveKind::PosteriorProb, Some(_)) => {
                return Err(Error::InvalidParameter(String::from(
                    "reference forbidden for posterior_prob",
                )));
            }
            (ObjectiveKind::Dpo | ObjectiveKind::Likelihood, None) => {
                return Err(Error::InvalidParameter(format!(
                    "reference required for {}",
                    kind.name()
                )));
            }
            (ObjectiveKind::Dpo | ObjectiveKind::Likelihood, Some(r)) => {
                if r.mode() != Mode::Frozen {
                    return Err(Error::InvalidParameter(format!(
                        "reference for {} must be frozen",
                        kind.name()
                    )));
                }
                if kind == ObjectiveKind::Likelihood && !r.is_unconditional() {
                    return Err(Error::InvalidParameter(String::from(
                        "likelihood reference must be unconditional (it parameterizes the prior)",
                    )));
                }
            }
            (ObjectiveKind::PosteriorProb, None) => {}
        }
        Ok(Self { kind, beta, reference })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reference(&self) -> Option<&Policy> {
        self.reference.as_deref()
    }
}

/// A batch of preference examples with per-example weights (default 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    examples: Vec<PreferenceExample>,
    weights: Vec<f64>,
}

impl LossBatch {
    pub fn new(examples: Vec<PreferenceExample>) -> Result<Self> {
        let weights = vec![1.0; examples.len()];
        Self::with_weights(examples, weights)
    }

    pub fn with_weights(examples: Vec<PreferenceExample>, weights: Vec<f64>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if examples.len() != weights.len() {
            return Err(Error::LengthMismatch { left: examples.len(), right: weights.len() });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(Error::InvalidParameter(String::from(
                "weights must be finite, non-negative, and sum to a positive value",
            )));
        }
        Ok(Self { examples, weights })
    }

    pub fn examples(&self) -> &[PreferenceExample] {
        &self.examples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Probability that an output with reward `r1` beats one with reward `r2`
/// under the logistic pairwise model: σ(r1 - r2).
pub fn bt_preference_prob(r1: f64, r2: f64) -> f64 {
    math::sigmoid(r1 - r2)
}

/// The implicit reward of `y` under the objective's parameterization.
pub fn implicit_reward(
    config: &ObjectiveConfig,
    policy: &Policy,
    prompt: PromptId,
    y: &Sequence,
) -> Result<f64> {
    let lp = policy.sequence_log_prob(prompt, y)?;
    let anchored = match config.kind() {
        ObjectiveKind::PosteriorProb => lp,
        ObjectiveKind::Dpo | ObjectiveKind::Likelihood => {
            let reference = config.reference().expect("validated at construction");
            if reference.vocab() != policy.vocab() {
                return Err(Error::VocabMismatch);
            }
            lp - reference.sequence_log_prob(prompt, y)?
        }
    };
    Ok(config.beta() * anchored)
}

/// Reward margin r(y_w) - r(y_l) of one example.
pub fn reward_margin(
    config: &ObjectiveConfig,
    policy: &Policy,
    example: &PreferenceExample,
) -> Result<f64> {
    let w = implicit_reward(config, policy, example.prompt_id, &example.chosen)?;
    let l = implicit_reward(config, policy, example.prompt_id, &example.rejected)?;
    Ok(w - l)
}

/// Weighted mean of -log σ(margin) over the batch. Strictly positive, and
/// exactly log 2 when every margin is zero.
pub fn loss(config: &ObjectiveConfig, policy: &Policy, batch: &LossBatch) -> Result<f64> {
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (index, (example, &w)) in batch.examples().iter().zip(batch.weights()).enumerate() {
        let margin = reward_margin(config, policy, example)?;
        let term = math::softplus(-margin);
        if !term.is_finite() {
            return Err(Error::NonFiniteLoss { example_index: index });
        }
        total += w * term;
        weight_sum += w;
    }
    Ok(total / weight_sum)
}

/// Loss plus its analytic gradient over the trainable policy's logits.
///
/// Per example the chain rule gives a scalar factor σ(-margin)·β on
/// (∇log p_θ(y_l) - ∇log p_θ(y_w)); the frozen reference contributes no
/// gradient. Accumulation follows batch order.
pub fn loss_and_grad(
    config: &ObjectiveConfig,
    policy: &Policy,
    batch: &LossBatch,
) -> Result<(f64, LogitGrad)> {
    if policy.mode() != Mode::Trainable {
        return Err(Error::FrozenPolicy);
    }
    let mut total = 0.0;
    let mut weight_sum: f64 = batch.weights().iter().sum();
    if weight_sum <= 0.0 {
        weight_sum = 1.0;
    }
    let mut grad = LogitGrad::new();
    for (index, (example, &w)) in batch.examples().iter().zip(batch.weights()).enumerate() {
        let margin = reward_margin(config, policy, example)?;
        let term = math::softplus(-margin);
        if !term.is_finite() {
            return Err(Error::NonFiniteLoss { example_index: index });
        }
        total += w * term;
        let factor = math::sigmoid(-margin) * config.beta() * w / weight_sum;
        let grad_chosen = policy.sequence_log_prob_grad(example.prompt_id, &example.chosen)?;
        let grad_rejected = policy.sequence_log_prob_grad(example.prompt_id, &example.rejected)?;
        grad.add_scaled(-factor, &grad_chosen);
        grad.add_scaled(factor, &grad_rejected);
    }
    Ok((total / weight_sum, grad))
}

/// Per-position dense reward β·(log p_θ - log p_ref) at position `i` of `y`.
/// Only defined for the `dpo` parameterization.
pub fn token_reward(
    config: &ObjectiveConfig,
    policy: &Policy,
    prompt: PromptId,
    y: &Sequence,
    i: usize,
) -> Result<f64> {
    if config.kind() != ObjectiveKind::Dpo {
        return Err(Error::InvalidParameter(format!(
            "token_reward is defined for dpo, not {}",
            config.kind().name()
        )));
    }
    let reference = config.reference().expect("dpo has a reference");
    Ok(config.beta() * token_logprob_diff(policy, reference, prompt, y, i)?)
}

/// Token log-probability difference log p_θ(y_i | ·) - log p_ref(y_i | ·)
/// at position `i`; the dense reward divided by β.
pub fn token_logprob_diff(
    policy: &Policy,
    reference: &Policy,
    prompt: PromptId,
    y: &Sequence,
    i: usize,
) -> Result<f64> {
    if policy.vocab() != reference.vocab() {
        return Err(Error::VocabMismatch);
    }
    let tokens = y.tokens();
    if i >= tokens.len() {
        return Err(Error::InvalidParameter(format!(
            "position {i} outside sequence of length {}",
            tokens.len()
        )));
    }
    let lp = policy.token_log_prob(prompt, &tokens[..i], tokens[i])?;
    let lr = reference.token_log_prob(prompt, &tokens[..i], tokens[i])?;
    Ok(lp - lr)
}
