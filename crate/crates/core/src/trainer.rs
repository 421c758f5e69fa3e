//! Deterministic mini-batch gradient training with linear warmup/decay,
//! validation-loss checkpoint selection, and degeneration detection.
//!
//! The optimizer is plain first-order descent (an optional per-parameter
//! adaptive scaling can be switched on); the learning rate ramps linearly
//! to its base value over the warmup fraction of steps and then decays
//! linearly to zero. Validation loss uses the same objective as training,
//! and the checkpoint with the lowest validation loss is returned, earliest
//! step winning ties.
//!
//! Degeneration (collapse into repetitive or non-terminating output) is
//! detected from seeded samples and reported, never fatal: training that
//! produced a degenerate policy still returns normally with the flag set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::objectives::{loss, loss_and_grad, LossBatch, ObjectiveConfig};
use crate::oracle::exact_entropy;
use crate::policy::{ContextKey, LogitGrad, Mode, Policy, PromptId, Token};

/// Heuristic thresholds for the degeneration detector. Chosen so uniform
/// and near-optimal policies never flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerationThresholds {
    /// Flag when the mean entropy of visited contexts at content-emitting
    /// steps falls below this many nats.
    pub entropy_floor: f64,
    /// Flag when more than this fraction of samples hit max length without
    /// a natural EOS.
    pub truncation_ceiling: f64,
    /// Flag when the most common content 3-gram exceeds this share of all
    /// 3-grams.
    pub repetition_ceiling: f64,
    pub samples_per_prompt: usize,
}

impl Default for DegenerationThresholds {
    fn default() -> Self {
        Self {
            entropy_floor: 0.05,
            truncation_ceiling: 0.9,
            repetition_ceiling: 0.5,
            samples_per_prompt: 64,
        }
    }
}

/// Which detector criterion fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerationCriterion {
    LowEntropy,
    Truncation,
    Repetition,
}

impl DegenerationCriterion {
    pub fn name(&self) -> &'static str {
        match self {
            DegenerationCriterion::LowEntropy => "low_entropy",
            DegenerationCriterion::Truncation => "truncation",
            DegenerationCriterion::Repetition => "repetition",
        }
    }
}

/// One fired criterion with the measured value and its threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerationEvidence {
    pub criterion: DegenerationCriterion,
    pub value: f64,
    pub threshold: f64,
}

/// Detector outcome plus the underlying statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerationReport {
    pub flagged: bool,
    pub evidence: Vec<DegenerationEvidence>,
    /// Mean entropy over content-emitting steps; absent when every sample
    /// terminated immediately.
    pub mean_step_entropy: Option<f64>,
    pub truncation_fraction: f64,
    pub modal_trigram_frequency: f64,
    /// Zero-length (immediate EOS) outputs are reported separately and do
    /// not flag on their own.
    pub zero_length_fraction: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    /// Checkpoint every this many optimizer steps; `None` scales the
    /// conventional 500-step interval down to max(1, total/20) for short
    /// runs.
    pub checkpoint_interval: Option<usize>,
    pub seed: u64,
    /// Per-parameter adaptive scaling (accumulated squared gradients),
    /// off by default.
    pub adaptive: bool,
    pub degeneration: DegenerationThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            base_lr: 0.1,
            warmup_fraction: 0.1,
            checkpoint_interval: None,
            seed: 0,
            adaptive: false,
            degeneration: DegenerationThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidParameter(String::from("epochs must be >= 1")));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter(String::from("batch_size must be >= 1")));
        }
        if self.warmup_fraction.is_nan() || self.warmup_fraction <= 0.0 || self.warmup_fraction >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "base_lr must be finite and >= 0, got {}",
                self.base_lr
            )));
        }
        Ok(())
    }

    /// Effective checkpoint interval for a run of `total_steps`.
    pub fn effective_checkpoint_interval(&self, total_steps: usize) -> usize {
        match self.checkpoint_interval {
            Some(interval) => interval.max(1),
            None => {
                if total_steps < 500 {
                    (total_steps / 20).max(1)
                } else {
                    500
                }
            }
        }
    }
}

/// Per-step learning rate: linear ramp 0 → base over the first
/// ⌈warmup_fraction · total⌉ steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    debug_assert!(step <= total_steps);
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = math::ceil(config.warmup_fraction * total_steps as f64) as usize;
    let warmup = warmup.clamp(1, total_steps);
    if step <= warmup {
        config.base_lr * step as f64 / warmup as f64
    } else {
        config.base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// One optimizer step of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
}

/// One recorded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub step: usize,
    pub valid_loss: f64,
}

/// Everything observed during a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Step id of the returned checkpoint: minimal validation loss,
    /// earliest on ties.
    pub selected_step: usize,
    pub degeneration: DegenerationReport,
    /// Filled in by the harness around the call; not part of the
    /// deterministic record.
    pub wall_clock_secs: f64,
}

/// Trains `policy` on `train_data` under `objective`, returning the
/// validation-loss-minimizing checkpoint and the full report.
/// Deterministic given the config seed; shuffling is reseeded per epoch
/// from it.
pub fn train(
    config: &TrainConfig,
    objective: &ObjectiveConfig,
    policy: Policy,
    train_data: &Dataset,
    valid_data: &Dataset,
) -> Result<(Policy, TrainReport)> {
    config.validate()?;
    if train_data.examples.is_empty() || valid_data.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if policy.mode() != Mode::Trainable {
        return Err(Error::FrozenPolicy);
    }
    if *policy.vocab() != train_data.manifest.vocab || *policy.vocab() != valid_data.manifest.vocab
    {
        return Err(Error::VocabMismatch);
    }

    let mut policy = policy;
    let n = train_data.examples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let interval = config.effective_checkpoint_interval(total_steps);
    let valid_batch = LossBatch::new(valid_data.examples.clone())?;

    let mut steps = Vec::with_capacity(total_steps);
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut snapshots: Vec<Policy> = Vec::new();
    let mut adaptive_acc: BTreeMap<ContextKey, Vec<f64>> = BTreeMap::new();

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.batch_size) {
            let examples: Vec<_> =
                chunk.iter().map(|&i| train_data.examples[i].clone()).collect();
            let batch = LossBatch::new(examples)?;
            let lr = lr_at(step, total_steps, config);
            let (train_loss, grad) = match loss_and_grad(objective, &policy, &batch) {
                Ok(pair) => pair,
                Err(Error::NonFiniteLoss { example_index }) => {
                    return Err(Error::TrainAbort { step, example_index });
                }
                Err(other) => return Err(other),
            };
            steps.push(StepRecord { step, lr, train_loss });

            if lr > 0.0 {
                let update = if config.adaptive {
                    adaptive_scaled(&mut adaptive_acc, &grad)
                } else {
                    grad
                };
                policy.apply_update(&update, -lr)?;
            }

            if (step + 1).is_multiple_of(interval) || step + 1 == total_steps {
                let valid_loss = match loss(objective, &policy, &valid_batch) {
                    Ok(v) => v,
                    Err(Error::NonFiniteLoss { example_index }) => {
                        return Err(Error::TrainAbort { step, example_index });
                    }
                    Err(other) => return Err(other),
                };
                checkpoints.push(CheckpointRecord { step, valid_loss });
                snapshots.push(policy.clone());
            }
            step += 1;
        }
    }

    let mut selected = 0usize;
    for (i, record) in checkpoints.iter().enumerate() {
        if record.valid_loss < checkpoints[selected].valid_loss {
            selected = i;
        }
    }
    let selected_policy = snapshots[selected].clone();
    let selected_step = checkpoints[selected].step;

    let mut prompts: Vec<PromptId> =
        train_data.examples.iter().map(|e| e.prompt_id).collect();
    prompts.sort_unstable();
    prompts.dedup();
    let degeneration = detect_degeneration(
        &selected_policy,
        &prompts,
        train_data.manifest.max_len,
        &config.degeneration,
        config.seed,
    )?;

    let report = TrainReport {
        steps,
        checkpoints,
        selected_step,
        degeneration,
        wall_clock_secs: 0.0,
    };
    Ok((selected_policy, report))
}

fn adaptive_scaled(
    acc: &mut BTreeMap<ContextKey, Vec<f64>>,
    grad: &LogitGrad,
) -> LogitGrad {
    const EPS: f64 = 1e-8;
    let mut scaled = LogitGrad::new();
    for (key, row) in grad.rows() {
        let acc_row = acc
            .entry(key.clone())
            .or_insert_with(|| vec![0.0; row.len()]);
        let out = scaled.row_mut(key.clone(), row.len());
        for (i, &g) in row.iter().enumerate() {
            acc_row[i] += g * g;
            out[i] = g / math::sqrt(acc_row[i] + EPS);
        }
    }
    scaled
}

/// Samples `thresholds.samples_per_prompt` sequences per prompt and flags
/// the policy when (a) mean per-step entropy of visited contexts at
/// content-emitting steps falls below the floor, (b) the fraction of
/// samples truncated at max length exceeds the ceiling, or (c) the modal
/// content 3-gram exceeds its ceiling. Immediate-EOS outputs are reported
/// separately, not flagged.
pub fn detect_degeneration(
    policy: &Policy,
    prompts: &[PromptId],
    max_len: usize,
    thresholds: &DegenerationThresholds,
    seed: u64,
) -> Result<DegenerationReport> {
    if prompts.is_empty() {
        return Err(Error::InvalidParameter(String::from(
            "degeneration detection needs at least one prompt",
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // distinct from the shuffle streams

    let eos = policy.vocab().eos_id();
    let mut entropy_sum = 0.0;
    let mut entropy_steps = 0usize;
    let mut truncated = 0usize;
    let mut zero_length = 0usize;
    let mut total_samples = 0usize;
    let mut trigrams: BTreeMap<[Token; 3], usize> = BTreeMap::new();
    let mut trigram_total = 0usize;

    for &prompt in prompts {
        for _ in 0..thresholds.samples_per_prompt {
            let outcome = policy.sample_with_rng(prompt, max_len, &mut rng)?;
            total_samples += 1;
            if outcome.eos_forced {
                truncated += 1;
            }
            let tokens = outcome.sequence.tokens();
            if tokens.len() == 1 {
                zero_length += 1;
            }
            for (i, &token) in tokens.iter().enumerate() {
                if token != eos {
                    let dist = policy.context_distribution(prompt, &tokens[..i])?;
                    entropy_sum += exact_entropy(&dist);
                    entropy_steps += 1;
                }
            }
            let content = outcome.sequence.content();
            for window in content.windows(3) {
                *trigrams.entry([window[0], window[1], window[2]]).or_insert(0) += 1;
                trigram_total += 1;
            }
        }
    }

    let mean_step_entropy = if entropy_steps > 0 {
        Some(entropy_sum / entropy_steps as f64)
    } else {
        None
    };
    let truncation_fraction = truncated as f64 / total_samples as f64;
    let modal_trigram_frequency = if trigram_total > 0 {
        let modal = trigrams.values().copied().max().unwrap_or(0);
        modal as f64 / trigram_total as f64
    } else {
        0.0
    };
    let zero_length_fraction = zero_length as f64 / total_samples as f64;

    let mut evidence = Vec::new();
    if let Some(entropy) = mean_step_entropy {
        if entropy < thresholds.entropy_floor {
            evidence.push(DegenerationEvidence {
                criterion: DegenerationCriterion::LowEntropy,
                value: entropy,
                threshold: thresholds.entropy_floor,
            });
        }
    }
    if truncation_fraction > thresholds.truncation_ceiling {
        evidence.push(DegenerationEvidence {
            criterion: DegenerationCriterion::Truncation,
            value: truncation_fraction,
            threshold: thresholds.truncation_ceiling,
        });
    }
    if modal_trigram_frequency > thresholds.repetition_ceiling {
        evidence.push(DegenerationEvidence {
            criterion: DegenerationCriterion::Repetition,
            value: modal_trigram_frequency,
            threshold: thresholds.repetition_ceiling,
        });
    }

    Ok(DegenerationReport {
        flagged: !evidence.is_empty(),
        evidence,
        mean_step_entropy,
        truncation_fraction,
        modal_trigram_frequency,
        zero_length_fraction,
    })
}
