//! Diagnostic statistics over trained policies: ranking accuracy of the
//! implicit reward and of the raw policy, token-level log-probability
//! difference aggregation, most-downweighted tokens, and EOS statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::math;
use crate::objectives::{implicit_reward, token_logprob_diff, ObjectiveConfig};
use crate::policy::{Policy, PromptId, Sequence, Token};

/// Pairwise ordering accuracy of the implicit reward and of the raw policy
/// log-probability. Ties count 0.5 each, which pins the untrained reward
/// accuracy at exactly 0.500.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub reward_accuracy: f64,
    pub policy_accuracy: f64,
    pub n_examples: usize,
    pub n_reward_ties: usize,
    pub n_policy_ties: usize,
}

/// Fraction of examples whose chosen side outranks the rejected side,
/// under the objective's implicit reward (`reward_accuracy`) and under the
/// policy's raw sequence log-probability (`policy_accuracy`).
///
/// `length_normalized` divides sequence log-probabilities by sequence
/// length for the policy criterion; the default reporting path keeps raw
/// sums.
pub fn ranking_accuracy(
    config: &ObjectiveConfig,
    policy: &Policy,
    examples: &[PreferenceExample],
    length_normalized: bool,
) -> Result<RankingResult> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reward_score = 0.0;
    let mut policy_score = 0.0;
    let mut n_reward_ties = 0usize;
    let mut n_policy_ties = 0usize;
    for ex in examples {
        let r_w = implicit_reward(config, policy, ex.prompt_id, &ex.chosen)?;
        let r_l = implicit_reward(config, policy, ex.prompt_id, &ex.rejected)?;
        if r_w > r_l {
            reward_score += 1.0;
        } else if r_w == r_l {
            reward_score += 0.5;
            n_reward_ties += 1;
        }

        let mut p_w = policy.sequence_log_prob(ex.prompt_id, &ex.chosen)?;
        let mut p_l = policy.sequence_log_prob(ex.prompt_id, &ex.rejected)?;
        if length_normalized {
            p_w /= ex.chosen.len() as f64;
            p_l /= ex.rejected.len() as f64;
        }
        if p_w > p_l {
            policy_score += 1.0;
        } else if p_w == p_l {
            policy_score += 0.5;
            n_policy_ties += 1;
        }
    }
    let n = examples.len() as f64;
    Ok(RankingResult {
        reward_accuracy: reward_score / n,
        policy_accuracy: policy_score / n,
        n_examples: examples.len(),
        n_reward_ties,
        n_policy_ties,
    })
}

/// Per-token aggregate of log-probability differences.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStat {
    pub token: Token,
    pub count: usize,
    pub mean_diff: f64,
}

/// Per-vocabulary-token means of the token log-probability difference over
/// a corpus, plus their discretized distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDiffHistogram {
    /// One entry per token occurring at least once, ascending by token id.
    pub stats: Vec<TokenStat>,
    pub bin_width: f64,
    /// Bin index -> number of tokens whose mean falls in
    /// [index·width, (index+1)·width).
    pub bins: BTreeMap<i64, usize>,
    /// Total token occurrences in the corpus.
    pub total_occurrences: usize,
}

impl TokenDiffHistogram {
    pub fn bin_index(&self, mean: f64) -> i64 {
        math::floor(mean / self.bin_width) as i64
    }

    /// Lower edge of a bin.
    pub fn bin_start(&self, index: i64) -> f64 {
        index as f64 * self.bin_width
    }
}

/// Accumulates the per-occurrence log-probability differences of every
/// token over `corpus` and discretizes the per-token means into bins of
/// `bin_width` log units.
pub fn token_diff_histogram(
    policy: &Policy,
    reference: &Policy,
    corpus: &[(PromptId, Sequence)],
    bin_width: f64,
) -> Result<TokenDiffHistogram> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bin_width <= 0.0 || !bin_width.is_finite() {
        return Err(Error::InvalidParameter(String::from("bin_width must be positive")));
    }
    let vocab_size = policy.vocab().size();
    let mut sums = alloc::vec![0.0f64; vocab_size];
    let mut counts = alloc::vec![0usize; vocab_size];
    let mut total_occurrences = 0usize;
    for (prompt, sequence) in corpus {
        for i in 0..sequence.len() {
            let token = sequence.tokens()[i] as usize;
            let diff = token_logprob_diff(policy, reference, *prompt, sequence, i)?;
            sums[token] += diff;
            counts[token] += 1;
            total_occurrences += 1;
        }
    }
    let mut stats = Vec::new();
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for token in 0..vocab_size {
        if counts[token] == 0 {
            continue;
        }
        let mean = sums[token] / counts[token] as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(alloc::format!("mean diff of token {token}")));
        }
        stats.push(TokenStat { token: token as Token, count: counts[token], mean_diff: mean });
        let index = math::floor(mean / bin_width) as i64;
        *bins.entry(index).or_insert(0) += 1;
    }
    Ok(TokenDiffHistogram { stats, bin_width, bins, total_occurrences })
}

/// Ranked list of the most-downweighted tokens, possibly short of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopTokens {
    pub tokens: Vec<TokenStat>,
    /// How many requested entries could not be filled because too few
    /// tokens meet `min_count`.
    pub shortfall: Option<usize>,
}

/// The `k` tokens with the lowest mean log-probability difference among
/// those occurring at least `min_count` times. Ties break by token id.
pub fn top_downweighted_tokens(
    histogram: &TokenDiffHistogram,
    k: usize,
    min_count: usize,
) -> Result<TopTokens> {
    if k < 1 {
        return Err(Error::InvalidParameter(String::from("k must be >= 1")));
    }
    let mut eligible: Vec<TokenStat> = histogram
        .stats
        .iter()
        .filter(|s| s.count >= min_count)
        .cloned()
        .collect();
    eligible.sort_by(|a, b| {
        a.mean_diff
            .partial_cmp(&b.mean_diff)
            .expect("means are finite")
            .then(a.token.cmp(&b.token))
    });
    let shortfall = if eligible.len() < k { Some(k - eligible.len()) } else { None };
    eligible.truncate(k);
    Ok(TopTokens { tokens: eligible, shortfall })
}

/// Default occurrence filter for token rankings, scaled to corpus size.
pub fn default_min_count(corpus_tokens: usize) -> usize {
    (corpus_tokens / 500).max(5)
}

/// EOS statistics over a preference dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EosStats {
    /// Mean EOS log-probability at the final position, over every sequence
    /// (both chosen and rejected).
    pub mean_log_prob: f64,
    /// Mean over examples of (EOS log-prob on chosen - EOS log-prob on
    /// rejected).
    pub mean_diff: f64,
}

/// Evaluates the EOS token's log-probability at the final position of each
/// sequence under `policy`, reporting the plain means.
pub fn eos_stats(policy: &Policy, examples: &[PreferenceExample]) -> Result<EosStats> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eos = policy.vocab().eos_id();
    let mut value_sum = 0.0;
    let mut diff_sum = 0.0;
    for ex in examples {
        let lp_w = policy.token_log_prob(ex.prompt_id, ex.chosen.content(), eos)?;
        let lp_l = policy.token_log_prob(ex.prompt_id, ex.rejected.content(), eos)?;
        value_sum += lp_w + lp_l;
        diff_sum += lp_w - lp_l;
    }
    let n = examples.len() as f64;
    Ok(EosStats { mean_log_prob: value_sum / (2.0 * n), mean_diff: diff_sum / n })
}
