//! Preference examples, synthetic dataset generation from a ground-truth
//! reward, and deterministic splitting.
//!
//! Records mirror the binarized pairwise shape: a prompt id plus a chosen
//! and a rejected token sequence. Synthetic labels come from the
//! Bradley-Terry model on an explicit reward table, either sampled
//! (stochastic preferences) or expected (argmax labeling, the judge-scored
//! analogue).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::bt_preference_prob;
use crate::oracle::{EnumSpace, GroundTruthReward};
use crate::policy::{PromptId, Sequence, Vocab};

/// One pairwise preference record: prompt, chosen (better) output, rejected
/// output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceExample {
    pub prompt_id: PromptId,
    pub chosen: Sequence,
    pub rejected: Sequence,
}

impl PreferenceExample {
    /// Rejects pairs whose two sides are the same sequence.
    pub fn new(prompt_id: PromptId, chosen: Sequence, rejected: Sequence) -> Result<Self> {
        if chosen == rejected {
            return Err(Error::IdenticalPair);
        }
        Ok(Self { prompt_id, chosen, rejected })
    }
}

/// How a dataset came to be, for provenance tracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    /// Generated in-process: master seed plus a hash of the reward table.
    Synthetic { seed: u64, reward_hash: String },
    /// Loaded from an external file.
    External,
}

/// Self-description carried alongside a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub vocab: Vocab,
    pub max_len: usize,
    pub example_count: usize,
    pub split_sizes: Vec<usize>,
    /// Splitting treats examples, not prompts, as the unit.
    pub split_unit: &'static str,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.split_sizes.iter().sum();
        if total != self.example_count {
            return Err(Error::InvalidParameter(format!(
                "split sizes sum to {total}, expected {}",
                self.example_count
            )));
        }
        Ok(())
    }
}

/// Examples plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub examples: Vec<PreferenceExample>,
}

/// Label assignment rule for synthetic generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Chosen/rejected decided by a Bernoulli draw with the Bradley-Terry
    /// probability of the pair.
    Sampled,
    /// Chosen is deterministically the higher-reward member; ties break by
    /// enumeration order.
    Expected,
}

/// Short content hash of a reward table, for dataset provenance.
pub fn reward_hash(r: &GroundTruthReward) -> String {
    let mut hasher = Sha256::new();
    for (prompt, values) in r.tables() {
        hasher.update(prompt.0.to_le_bytes());
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Generates `pairs_per_prompt` preference examples for each of the prompts
/// `0..n_prompts`, drawing distinct sequence pairs uniformly from the
/// enumerated space and labeling them per `mode`. Deterministic per seed.
pub fn synth_generate(
    r_star: &GroundTruthReward,
    space: &EnumSpace,
    n_prompts: u32,
    pairs_per_prompt: usize,
    mode: LabelMode,
    seed: u64,
) -> Result<Dataset> {
    if space.len() < 2 {
        return Err(Error::InvalidParameter(String::from(
            "sequence space must contain at least 2 sequences",
        )));
    }
    if n_prompts == 0 || pairs_per_prompt == 0 {
        return Err(Error::InvalidParameter(String::from(
            "n_prompts and pairs_per_prompt must be >= 1",
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n_prompts as usize * pairs_per_prompt);
    for p in 0..n_prompts {
        let prompt = PromptId(p);
        let rewards = r_star.values(prompt)?;
        for _ in 0..pairs_per_prompt {
            let a = rng.gen_range(0..space.len());
            let b = loop {
                let candidate = rng.gen_range(0..space.len());
                if candidate != a {
                    break candidate;
                }
            };
            let chosen_is_a = match mode {
                LabelMode::Sampled => {
                    let p_a = bt_preference_prob(rewards[a], rewards[b]);
                    rng.gen::<f64>() < p_a
                }
                LabelMode::Expected => {
                    if rewards[a] == rewards[b] {
                        a < b
                    } else {
                        rewards[a] > rewards[b]
                    }
                }
            };
            let (w, l) = if chosen_is_a { (a, b) } else { (b, a) };
            examples.push(PreferenceExample::new(
                prompt,
                space.sequence(w).clone(),
                space.sequence(l).clone(),
            )?);
        }
    }
    let manifest = DatasetManifest {
        vocab: *space.vocab(),
        max_len: space.max_len(),
        example_count: examples.len(),
        split_sizes: alloc::vec![examples.len()],
        split_unit: "example",
        provenance: Provenance::Synthetic { seed, reward_hash: reward_hash(r_star) },
    };
    Ok(Dataset { manifest, examples })
}

/// Seed-deterministic shuffle-then-cut split into (train, valid). Prompts
/// may appear on both sides; examples are the split unit.
pub fn split(dataset: &Dataset, valid_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if valid_fraction.is_nan() || valid_fraction <= 0.0 || valid_fraction >= 1.0 {
        return Err(Error::InvalidSplit(format!(
            "valid_fraction must be in (0, 1), got {valid_fraction}"
        )));
    }
    let n = dataset.examples.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let n_valid = crate::math::floor(n as f64 * valid_fraction) as usize;
    let n_train = n - n_valid;
    if n_valid == 0 || n_train == 0 {
        return Err(Error::InvalidSplit(format!(
            "split of {n} examples at fraction {valid_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |indices: &[usize]| -> Vec<PreferenceExample> {
        indices.iter().map(|&i| dataset.examples[i].clone()).collect()
    };
    let train_examples = take(&order[..n_train]);
    let valid_examples = take(&order[n_train..]);

    let sub_manifest = |examples: &[PreferenceExample]| DatasetManifest {
        vocab: dataset.manifest.vocab,
        max_len: dataset.manifest.max_len,
        example_count: examples.len(),
        split_sizes: alloc::vec![examples.len()],
        split_unit: "example",
        provenance: dataset.manifest.provenance.clone(),
    };
    let train = Dataset { manifest: sub_manifest(&train_examples), examples: train_examples };
    let valid = Dataset { manifest: sub_manifest(&valid_examples), examples: valid_examples };
    Ok((train, valid))
}
