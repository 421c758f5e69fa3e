//! Brute-force oracle over the fully enumerated sequence space.
//!
//! With the output space enumerable, the quantities that preference
//! optimization only ever approximates at scale have closed forms:
//!
//! - the log partition function log Z(x) = log Σ_y exp(r(x,y)/β),
//! - the entropy-regularized optimum p*(y|x) = exp(r/β)/Z (Boltzmann),
//! - its KL-constrained generalization p* ∝ p_ref · exp(r/β),
//! - exact KL divergences and entropies,
//! - the reward projection r' = r - β log Z, which maps every member of a
//!   prompt-shift equivalence class to the same canonical reward,
//! - the exact expected pairwise loss under Bradley-Terry preferences, and
//!   its minimizer recovered by convex descent over per-sequence rewards.
//!
//! Everything here is pure and parallelizable over prompts; results are
//! deterministic for fixed seeds.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::objectives::{implicit_reward, ObjectiveConfig, ObjectiveKind};
use crate::policy::{Policy, PromptId, Sequence, Token, Vocab};

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_SPACE_CAP: u128 = 1_000_000;

/// The complete list of EOS-terminated sequences of length <= `max_len`,
/// in deterministic length-major, lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnumSpace {
    vocab: Vocab,
    max_len: usize,
    sequences: Vec<Sequence>,
    index: BTreeMap<Vec<Token>, usize>,
}

impl EnumSpace {
    pub fn enumerate(vocab: Vocab, max_len: usize) -> Result<Self> {
        Self::enumerate_with_cap(vocab, max_len, DEFAULT_SPACE_CAP)
    }

    pub fn enumerate_with_cap(vocab: Vocab, max_len: usize, cap: u128) -> Result<Self> {
        if max_len < 1 {
            return Err(Error::InvalidParameter(String::from("max_len must be >= 1")));
        }
        let base = (vocab.size() - 1) as u128;
        let mut count: u128 = 0;
        let mut pow: u128 = 1;
        for _ in 0..max_len {
            count = count.saturating_add(pow);
            pow = pow.saturating_mul(base);
        }
        if count > cap {
            return Err(Error::SpaceTooLarge { count, cap });
        }

        let content: Vec<Token> = vocab.content_tokens().collect();
        let mut sequences = Vec::with_capacity(count as usize);
        let mut prefixes: Vec<Vec<Token>> = vec![Vec::new()];
        for _ in 0..max_len {
            for prefix in &prefixes {
                let mut tokens = prefix.clone();
                tokens.push(vocab.eos_id());
                sequences.push(Sequence::new(tokens, &vocab, max_len)?);
            }
            let mut next = Vec::with_capacity(prefixes.len() * content.len());
            for prefix in &prefixes {
                for &t in &content {
                    let mut extended = prefix.clone();
                    extended.push(t);
                    next.push(extended);
                }
            }
            prefixes = next;
        }
        let index = sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.tokens().to_vec(), i))
            .collect();
        Ok(Self { vocab, max_len, sequences, index })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn sequence(&self, i: usize) -> &Sequence {
        &self.sequences[i]
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn position(&self, y: &Sequence) -> Option<usize> {
        self.index.get(y.tokens()).copied()
    }
}

/// Explicit ground-truth reward table r*(x, y), defined for every sequence
/// of an [`EnumSpace`] under each prompt it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthReward {
    tables: BTreeMap<PromptId, Vec<f64>>,
}

impl GroundTruthReward {
    pub fn from_tables(tables: BTreeMap<PromptId, Vec<f64>>, space: &EnumSpace) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::InvalidParameter(String::from("no reward tables")));
        }
        for (prompt, values) in &tables {
            if values.len() != space.len() {
                return Err(Error::LengthMismatch { left: values.len(), right: space.len() });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("reward table for prompt {prompt}")));
            }
        }
        Ok(Self { tables })
    }

    /// All-zero rewards (the maximally uninformative table).
    pub fn zero(space: &EnumSpace, prompts: &[PromptId]) -> Self {
        let tables = prompts.iter().map(|&p| (p, vec![0.0; space.len()])).collect();
        Self { tables }
    }

    /// I.i.d. Gaussian rewards, reproducible from the seed.
    pub fn random(space: &EnumSpace, prompts: &[PromptId], seed: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma must be positive");
        let mut sorted: Vec<PromptId> = prompts.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let tables = sorted
            .into_iter()
            .map(|p| (p, (0..space.len()).map(|_| normal.sample(&mut rng)).collect()))
            .collect();
        Self { tables }
    }

    pub fn values(&self, prompt: PromptId) -> Result<&[f64]> {
        self.tables
            .get(&prompt)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownPrompt(prompt))
    }

    pub fn prompts(&self) -> impl Iterator<Item = PromptId> + '_ {
        self.tables.keys().copied()
    }

    pub fn tables(&self) -> impl Iterator<Item = (PromptId, &[f64])> {
        self.tables.iter().map(|(p, v)| (*p, v.as_slice()))
    }

    /// Adds a per-prompt constant to every reward of that prompt.
    pub fn shifted(&self, shifts: &BTreeMap<PromptId, f64>) -> Self {
        let tables = self
            .tables
            .iter()
            .map(|(p, values)| {
                let shift = shifts.get(p).copied().unwrap_or(0.0);
                (*p, values.iter().map(|v| v + shift).collect())
            })
            .collect();
        Self { tables }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    Ok(())
}

/// log Z(x) = log Σ_y exp(r(x, y) / β), in the log domain throughout.
pub fn log_partition(
    r: &GroundTruthReward,
    beta: f64,
    prompt: PromptId,
    space: &EnumSpace,
) -> Result<f64> {
    check_beta(beta)?;
    let values = r.values(prompt)?;
    debug_assert_eq!(values.len(), space.len());
    let scaled: Vec<f64> = values.iter().map(|v| v / beta).collect();
    Ok(math::logsumexp(&scaled))
}

/// The entropy-regularized optimum: p(y) = exp(r(x,y)/β) / Z(x).
pub fn maxent_optimal_policy(
    r: &GroundTruthReward,
    beta: f64,
    prompt: PromptId,
    space: &EnumSpace,
) -> Result<Vec<f64>> {
    let log_z = log_partition(r, beta, prompt, space)?;
    let values = r.values(prompt)?;
    Ok(values.iter().map(|v| math::exp(v / beta - log_z)).collect())
}

/// The KL-constrained optimum: p(y) ∝ reference(y) · exp(r(x,y)/β).
/// A uniform reference reduces this to [`maxent_optimal_policy`].
pub fn kl_constrained_optimal_policy(
    r: &GroundTruthReward,
    beta: f64,
    reference: &[f64],
    prompt: PromptId,
    space: &EnumSpace,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let values = r.values(prompt)?;
    if reference.len() != values.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: values.len() });
    }
    for (i, &q) in reference.iter().enumerate() {
        if q <= 0.0 || q.is_nan() {
            return Err(Error::ZeroReferenceProbability { index: i });
        }
    }
    let logits: Vec<f64> = reference
        .iter()
        .zip(values)
        .map(|(&q, &v)| math::ln(q) + v / beta)
        .collect();
    let lse = math::logsumexp(&logits);
    let _ = space;
    Ok(logits.iter().map(|&l| math::exp(l - lse)).collect())
}

/// Exact KL divergence Σ p (log p - log q). Zero iff p = q; errors where
/// q = 0 on the support of p, naming the offending sequence.
pub fn exact_kl(p: &[f64], q: &[f64], space: &EnumSpace) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative probability at sequence {i}"
            )));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            let sequence = if i < space.len() {
                space.sequence(i).to_string()
            } else {
                String::from("?")
            };
            return Err(Error::SupportViolation { index: i, sequence });
        }
        total += pi * (math::ln(pi) - math::ln(qi));
    }
    Ok(total)
}

/// Shannon entropy -Σ p log p, in nats.
pub fn exact_entropy(p: &[f64]) -> f64 {
    let mut total = 0.0;
    for &pi in p {
        if pi > 0.0 {
            total -= pi * math::ln(pi);
        }
    }
    total
}

/// Total variation distance (1/2) Σ |p - q|.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// The entropy-regularized objective E_p[r] + β H(p), whose unique maximizer
/// over distributions is [`maxent_optimal_policy`].
pub fn maxent_objective(p: &[f64], r: &[f64], beta: f64) -> f64 {
    let expected: f64 = p.iter().zip(r).map(|(pi, ri)| pi * ri).sum();
    expected + beta * exact_entropy(p)
}

/// Projects a reward table to the canonical member of its equivalence
/// class: r'(x, y) = r(x, y) - β log Σ_y exp(r(x, y)/β) = β log p_r(y|x).
/// Idempotent, and invariant to per-prompt shifts of its input.
pub fn reward_projection(
    r: &GroundTruthReward,
    beta: f64,
    prompt: PromptId,
    space: &EnumSpace,
) -> Result<Vec<f64>> {
    let log_z = log_partition(r, beta, prompt, space)?;
    let values = r.values(prompt)?;
    Ok(values.iter().map(|v| v - beta * log_z).collect())
}

/// Max over prompts of the total variation between the optimal policies
/// induced by `r` and by `r + f(x)`. Analytically zero for any per-prompt
/// shift `f`.
pub fn check_equivalence_class(
    r: &GroundTruthReward,
    shifts: &BTreeMap<PromptId, f64>,
    beta: f64,
    space: &EnumSpace,
) -> Result<f64> {
    check_beta(beta)?;
    let shifted = r.shifted(shifts);
    let mut max_tv = 0.0f64;
    for prompt in r.prompts() {
        let base = maxent_optimal_policy(r, beta, prompt, space)?;
        let moved = maxent_optimal_policy(&shifted, beta, prompt, space)?;
        max_tv = max_tv.max(total_variation(&base, &moved));
    }
    Ok(max_tv)
}

/// Sum (not mean) of the exact per-pair cross-entropy terms for one prompt,
/// plus the pair count: Σ_{a<b} -[p* log σ(m) + (1-p*) log σ(-m)] with
/// m = u_a - u_b and p* = σ(r*_a - r*_b).
pub fn expected_pairwise_loss(model_rewards: &[f64], r_star: &[f64]) -> (f64, usize) {
    let n = model_rewards.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in (a + 1)..n {
            let p_star = math::sigmoid(r_star[a] - r_star[b]);
            let margin = model_rewards[a] - model_rewards[b];
            total += p_star * math::softplus(-margin) + (1.0 - p_star) * math::softplus(margin);
            pairs += 1;
        }
    }
    (total, pairs)
}

/// The Bradley-Terry population loss with the expectation taken in closed
/// form over every unordered same-prompt pair of the space, using the
/// policy's implicit rewards as margins.
pub fn exact_expected_loss(
    config: &ObjectiveConfig,
    policy: &Policy,
    r_star: &GroundTruthReward,
    space: &EnumSpace,
) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for prompt in r_star.prompts() {
        let targets = r_star.values(prompt)?;
        let mut model = Vec::with_capacity(space.len());
        for y in space.sequences() {
            model.push(implicit_reward(config, policy, prompt, y)?);
        }
        let (sum, count) = expected_pairwise_loss(&model, targets);
        total += sum;
        pairs += count;
    }
    if pairs == 0 {
        return Err(Error::InvalidParameter(String::from(
            "expected loss needs a space with at least 2 sequences",
        )));
    }
    Ok(total / pairs as f64)
}

/// Stopping rule for [`recover_optimal_policy`].
#[derive(Debug, Clone, Copy)]
pub struct RecoverySettings {
    /// Stop when the gradient max-norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iters: 100_000 }
    }
}

/// Converged minimizer of the exact expected loss for one prompt.
#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    /// The induced distribution over the space: softmax(u/β + log reference).
    pub distribution: Vec<f64>,
    /// The fitted per-sequence implicit rewards u.
    pub implicit_rewards: Vec<f64>,
    pub expected_loss: f64,
    pub iterations: usize,
    pub grad_max_norm: f64,
}

/// Minimizes the exact expected pairwise loss over a fully expressive
/// per-sequence policy (parameterized by its implicit rewards, in which the
/// problem is smooth and convex) with full-batch descent and backtracking.
///
/// `reference` is required for `Dpo` and `Likelihood` (the anchoring
/// distribution over the space) and must be absent for `PosteriorProb`.
pub fn recover_optimal_policy(
    kind: ObjectiveKind,
    beta: f64,
    r_star: &[f64],
    reference: Option<&[f64]>,
    settings: RecoverySettings,
) -> Result<RecoveryOutcome> {
    check_beta(beta)?;
    let n = r_star.len();
    if n < 2 {
        return Err(Error::InvalidParameter(String::from(
            "recovery needs at least 2 sequences",
        )));
    }
    let log_ref: Vec<f64> = match (kind, reference) {
        (ObjectiveKind::PosteriorProb, None) => vec![0.0; n],
        (ObjectiveKind::PosteriorProb, Some(_)) => {
            return Err(Error::InvalidParameter(String::from(
                "reference forbidden for posterior_prob",
            )));
        }
        (ObjectiveKind::Dpo | ObjectiveKind::Likelihood, Some(q)) => {
            if q.len() != n {
                return Err(Error::LengthMismatch { left: q.len(), right: n });
            }
            for (i, &qi) in q.iter().enumerate() {
                if qi <= 0.0 || qi.is_nan() {
                    return Err(Error::ZeroReferenceProbability { index: i });
                }
            }
            q.iter().map(|&qi| math::ln(qi)).collect()
        }
        (ObjectiveKind::Dpo | ObjectiveKind::Likelihood, None) => {
            return Err(Error::InvalidParameter(format!(
                "reference required for {}",
                kind.name()
            )));
        }
    };

    let pair_count = (n * (n - 1) / 2) as f64;
    let loss_of = |u: &[f64]| expected_pairwise_loss(u, r_star).0 / pair_count;
    let grad_of = |u: &[f64]| {
        let mut g = vec![0.0; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let p_star = math::sigmoid(r_star[a] - r_star[b]);
                let d = math::sigmoid(u[a] - u[b]) - p_star;
                g[a] += d;
                g[b] -= d;
            }
        }
        for v in g.iter_mut() {
            *v /= pair_count;
        }
        g
    };

    let mut u = vec![0.0; n];
    let mut value = loss_of(&u);
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut grad_max = f64::INFINITY;
    while iterations < settings.max_iters {
        let g = grad_of(&u);
        grad_max = g.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if grad_max < settings.grad_tol {
            break;
        }
        let g_sq: f64 = g.iter().map(|x| x * x).sum();
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        for _ in 0..200 {
            let candidate: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - step * gi).collect();
            let candidate_value = loss_of(&candidate);
            if candidate_value <= value - 1e-4 * step * g_sq {
                u = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
    }

    // Map rewards back to the policy: p = softmax(u/β + log reference).
    let logits: Vec<f64> = u.iter().zip(&log_ref).map(|(ui, lr)| ui / beta + lr).collect();
    let lse = math::logsumexp(&logits);
    let distribution = logits.iter().map(|&l| math::exp(l - lse)).collect();
    Ok(RecoveryOutcome {
        distribution,
        implicit_rewards: u,
        expected_loss: value,
        iterations,
        grad_max_norm: grad_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{InitScheme, PromptScope};
    use alloc::sync::Arc;
    use rand::Rng;

    fn vocab(v: u32, eos: u32) -> Vocab {
        Vocab::new(v, eos).unwrap()
    }

    #[test]
    fn enumeration_counts_match_geometric_sums() {
        let s = EnumSpace::enumerate(vocab(2, 1), 3).unwrap();
        assert_eq!(s.len(), 3);
        let tokens: Vec<&[Token]> = s.sequences().iter().map(|y| y.tokens()).collect();
        assert_eq!(tokens, vec![&[1][..], &[0, 1][..], &[0, 0, 1][..]]);

        assert_eq!(EnumSpace::enumerate(vocab(3, 0), 3).unwrap().len(), 7);
        assert_eq!(EnumSpace::enumerate(vocab(4, 3), 4).unwrap().len(), 40);
    }

    #[test]
    fn enumeration_is_deterministic_and_duplicate_free() {
        let a = EnumSpace::enumerate(vocab(4, 1), 4).unwrap();
        let b = EnumSpace::enumerate(vocab(4, 1), 4).unwrap();
        assert_eq!(a, b);
        let mut seen: Vec<&[Token]> = a.sequences().iter().map(|y| y.tokens()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), a.len());
        for (i, y) in a.sequences().iter().enumerate() {
            assert_eq!(a.position(y), Some(i));
        }
    }

    #[test]
    fn enumeration_cap_is_enforced_with_count() {
        let err = EnumSpace::enumerate(vocab(11, 0), 7).unwrap_err();
        match err {
            Error::SpaceTooLarge { count, cap } => {
                assert_eq!(count, 1_111_111);
                assert_eq!(cap, DEFAULT_SPACE_CAP);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn two_seq_space() -> EnumSpace {
        EnumSpace::enumerate(vocab(2, 1), 2).unwrap()
    }

    fn reward_on(space: &EnumSpace, values: &[f64]) -> GroundTruthReward {
        let mut tables = BTreeMap::new();
        tables.insert(PromptId(0), values.to_vec());
        GroundTruthReward::from_tables(tables, space).unwrap()
    }

    #[test]
    fn zero_reward_partition_is_log_count() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::zero(&s, &[PromptId(0)]);
        let log_z = log_partition(&r, 0.7, PromptId(0), &s).unwrap();
        assert!((log_z - (s.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn partition_hand_value_two_sequences() {
        let s = two_seq_space();
        let beta = 0.3;
        let r = reward_on(&s, &[0.0, beta * 3f64.ln()]);
        let log_z = log_partition(&r, beta, PromptId(0), &s).unwrap();
        assert!((log_z - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn partition_is_invariant_to_joint_scaling() {
        let s = EnumSpace::enumerate(vocab(3, 1), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 5, 1.0);
        let base = log_partition(&r, 0.4, PromptId(0), &s).unwrap();
        let scaled_tables: BTreeMap<PromptId, Vec<f64>> = r
            .tables()
            .map(|(p, v)| (p, v.iter().map(|x| x * 10.0).collect()))
            .collect();
        let scaled = GroundTruthReward::from_tables(scaled_tables, &s).unwrap();
        let same = log_partition(&scaled, 4.0, PromptId(0), &s).unwrap();
        assert!((base - same).abs() < 1e-12);
    }

    #[test]
    fn maxent_policy_zero_reward_is_uniform() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::zero(&s, &[PromptId(0)]);
        let p = maxent_optimal_policy(&r, 1.0, PromptId(0), &s).unwrap();
        for pi in &p {
            assert!((pi - 1.0 / 7.0).abs() < 1e-14);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maxent_policy_hand_value() {
        let s = two_seq_space();
        let beta = 0.8;
        let r = reward_on(&s, &[0.0, beta * 3f64.ln()]);
        let p = maxent_optimal_policy(&r, beta, PromptId(0), &s).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-13);
        assert!((p[1] - 0.75).abs() < 1e-13);
    }

    #[test]
    fn maxent_policy_flattens_as_beta_grows() {
        let s = EnumSpace::enumerate(vocab(3, 2), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 8, 1.0);
        let max_abs = r
            .values(PromptId(0))
            .unwrap()
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let beta = 1e6 * max_abs;
        let p = maxent_optimal_policy(&r, beta, PromptId(0), &s).unwrap();
        let uniform = vec![1.0 / s.len() as f64; s.len()];
        assert!(total_variation(&p, &uniform) <= 1e-3);
    }

    #[test]
    fn kl_constrained_reduces_to_maxent_under_uniform_reference() {
        let s = EnumSpace::enumerate(vocab(4, 3), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 10, 1.5);
        let uniform = vec![1.0 / s.len() as f64; s.len()];
        let a = maxent_optimal_policy(&r, 0.6, PromptId(0), &s).unwrap();
        let b = kl_constrained_optimal_policy(&r, 0.6, &uniform, PromptId(0), &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_constrained_zero_reward_returns_reference() {
        let s = two_seq_space();
        let r = reward_on(&s, &[0.0, 0.0]);
        let reference = [0.3, 0.7];
        let p = kl_constrained_optimal_policy(&r, 1.0, &reference, PromptId(0), &s).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-14);
        assert!((p[1] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn kl_constrained_hand_value() {
        // reference (0.9, 0.1) against r* = (0, β ln 9): 0.9·1 vs 0.1·9.
        let s = two_seq_space();
        let beta = 0.05;
        let r = reward_on(&s, &[0.0, beta * 9f64.ln()]);
        let p = kl_constrained_optimal_policy(&r, beta, &[0.9, 0.1], PromptId(0), &s).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_constrained_rejects_zero_reference_entries() {
        let s = two_seq_space();
        let r = reward_on(&s, &[0.0, 0.0]);
        let err = kl_constrained_optimal_policy(&r, 1.0, &[1.0, 0.0], PromptId(0), &s);
        assert_eq!(err, Err(Error::ZeroReferenceProbability { index: 1 }));
    }

    #[test]
    fn kl_identity_is_exactly_zero() {
        let s = two_seq_space();
        let p = [0.4, 0.6];
        assert_eq!(exact_kl(&p, &p, &s).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value_point_mass() {
        let s = two_seq_space();
        let kl = exact_kl(&[1.0, 0.0], &[0.5, 0.5], &s).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn kl_support_violation_names_the_sequence() {
        let s = two_seq_space();
        let err = exact_kl(&[0.5, 0.5], &[1.0, 0.0], &s).unwrap_err();
        match err {
            Error::SupportViolation { index, sequence } => {
                assert_eq!(index, 1);
                assert_eq!(sequence, "[0,1]");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn kl_nonnegative_over_random_pairs() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let draw = |rng: &mut ChaCha8Rng| {
                let raw: Vec<f64> = (0..s.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / total).collect::<Vec<f64>>()
            };
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            let kl = exact_kl(&p, &q, &s).unwrap();
            assert!(kl >= 0.0, "kl {kl}");
        }
    }

    #[test]
    fn entropy_bounds_and_identity() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let mut point = vec![0.0; s.len()];
        point[2] = 1.0;
        assert_eq!(exact_entropy(&point), 0.0);

        let uniform = vec![1.0 / 7.0; 7];
        assert!((exact_entropy(&uniform) - 7f64.ln()).abs() < 1e-12);

        // H(p) = log N - KL(p, uniform)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..7).map(|_| rng.gen::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
        let lhs = exact_entropy(&p);
        let rhs = 7f64.ln() - exact_kl(&p, &uniform, &s).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn projection_zero_reward_hand_value() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::zero(&s, &[PromptId(0)]);
        let beta = 0.25;
        let projected = reward_projection(&r, beta, PromptId(0), &s).unwrap();
        for v in &projected {
            assert!((v + beta * 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_equals_beta_log_optimal_policy() {
        let s = EnumSpace::enumerate(vocab(4, 0), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 20, 1.0);
        let beta = 0.7;
        let projected = reward_projection(&r, beta, PromptId(0), &s).unwrap();
        let p = maxent_optimal_policy(&r, beta, PromptId(0), &s).unwrap();
        for (v, pi) in projected.iter().zip(&p) {
            assert!((v - beta * pi.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_shift_invariant() {
        let s = EnumSpace::enumerate(vocab(3, 1), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 21, 2.0);
        let beta = 0.4;
        let once = reward_projection(&r, beta, PromptId(0), &s).unwrap();
        let again = {
            let r2 = reward_on_prompt(&s, PromptId(0), &once);
            reward_projection(&r2, beta, PromptId(0), &s).unwrap()
        };
        for (a, b) in once.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut shifts = BTreeMap::new();
        shifts.insert(PromptId(0), 123.456);
        let shifted = r.shifted(&shifts);
        let from_shifted = reward_projection(&shifted, beta, PromptId(0), &s).unwrap();
        for (a, b) in once.iter().zip(&from_shifted) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn reward_on_prompt(space: &EnumSpace, prompt: PromptId, values: &[f64]) -> GroundTruthReward {
        let mut tables = BTreeMap::new();
        tables.insert(prompt, values.to_vec());
        GroundTruthReward::from_tables(tables, space).unwrap()
    }

    #[test]
    fn equivalence_class_shifts_do_not_move_the_optimum() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let prompts = [PromptId(0), PromptId(1)];
        let r = GroundTruthReward::random(&s, &prompts, 30, 1.0);
        let mut shifts = BTreeMap::new();
        shifts.insert(PromptId(0), 0.0);
        shifts.insert(PromptId(1), 0.0);
        assert_eq!(check_equivalence_class(&r, &shifts, 0.5, &s).unwrap(), 0.0);

        shifts.insert(PromptId(0), 1000.0);
        shifts.insert(PromptId(1), -1000.0);
        let tv = check_equivalence_class(&r, &shifts, 0.5, &s).unwrap();
        assert!(tv <= 1e-10, "tv {tv}");
    }

    #[test]
    fn equivalence_class_preserves_preferences() {
        use crate::objectives::bt_preference_prob;
        let s = EnumSpace::enumerate(vocab(3, 0), 2).unwrap();
        // Snap rewards to a dyadic grid and shift by a power of two so the
        // cancellation (r + f) - (r' + f) is exact in floating point.
        let raw = GroundTruthReward::random(&s, &[PromptId(0)], 31, 1.0);
        let grid = 1024.0 * 1024.0;
        let snapped: BTreeMap<PromptId, Vec<f64>> = raw
            .tables()
            .map(|(p, v)| {
                (p, v.iter().map(|x| math::floor(x * grid) / grid).collect())
            })
            .collect();
        let r = GroundTruthReward::from_tables(snapped, &s).unwrap();
        let mut shifts = BTreeMap::new();
        shifts.insert(PromptId(0), 64.0);
        let shifted = r.shifted(&shifts);
        let a = r.values(PromptId(0)).unwrap();
        let b = shifted.values(PromptId(0)).unwrap();
        for i in 0..s.len() {
            for j in 0..s.len() {
                let base = bt_preference_prob(a[i], a[j]);
                let moved = bt_preference_prob(b[i], b[j]);
                assert!((base - moved).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expected_loss_minimum_is_binary_entropy() {
        // With model margins equal to the BT-inverse of p*, each pair
        // contributes the binary entropy of its true preference.
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 40, 1.0);
        let targets = r.values(PromptId(0)).unwrap();
        let (sum, pairs) = expected_pairwise_loss(targets, targets);
        let mut expected = 0.0;
        for a in 0..s.len() {
            for b in (a + 1)..s.len() {
                let p = math::sigmoid(targets[a] - targets[b]);
                expected += -(p * math::ln(p) + (1.0 - p) * math::ln(1.0 - p));
            }
        }
        assert!((sum - expected).abs() < 1e-10);
        assert_eq!(pairs, s.len() * (s.len() - 1) / 2);
    }

    #[test]
    fn expected_loss_zero_reward_uniform_policy_is_log_two() {
        let s = EnumSpace::enumerate(vocab(3, 0), 2).unwrap();
        let r = GroundTruthReward::zero(&s, &[PromptId(0)]);
        let policy = Policy::init(
            *s.vocab(),
            1,
            PromptScope::Prompts(vec![PromptId(0)]),
            InitScheme::Uniform,
            0,
        )
        .unwrap();
        let cfg = ObjectiveConfig::dpo(0.5, Arc::new(policy.frozen_snapshot())).unwrap();
        let value = exact_expected_loss(&cfg, &policy, &r, &s).unwrap();
        assert!((value - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn expected_loss_invariant_to_prompt_shifts_of_r_star() {
        let s = EnumSpace::enumerate(vocab(3, 1), 3).unwrap();
        let prompts = [PromptId(0), PromptId(1)];
        let r = GroundTruthReward::random(&s, &prompts, 50, 1.0);
        let policy = Policy::init(
            *s.vocab(),
            2,
            PromptScope::Prompts(prompts.to_vec()),
            InitScheme::Gaussian { sigma: 0.7 },
            51,
        )
        .unwrap();
        let cfg = ObjectiveConfig::posterior_prob(2.0).unwrap();
        let base = exact_expected_loss(&cfg, &policy, &r, &s).unwrap();
        let mut shifts = BTreeMap::new();
        shifts.insert(PromptId(0), -4.0);
        shifts.insert(PromptId(1), 9.0);
        let moved = exact_expected_loss(&cfg, &policy, &r.shifted(&shifts), &s).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn gibbs_objective_peaks_at_the_maxent_optimum() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for instance in 0..20 {
            let r = GroundTruthReward::random(&s, &[PromptId(0)], 600 + instance, 1.0);
            let beta = 0.1 + rng.gen::<f64>() * 2.0;
            let values = r.values(PromptId(0)).unwrap();
            let p_star = maxent_optimal_policy(&r, beta, PromptId(0), &s).unwrap();
            let best = maxent_objective(&p_star, values, beta);
            for _ in 0..20 {
                let logits: Vec<f64> = p_star
                    .iter()
                    .map(|pi| math::ln(*pi) + 0.3 * (rng.gen::<f64>() - 0.5))
                    .collect();
                let lse = math::logsumexp(&logits);
                let perturbed: Vec<f64> = logits.iter().map(|l| math::exp(l - lse)).collect();
                let value = maxent_objective(&perturbed, values, beta);
                assert!(value < best, "perturbation beat the optimum: {value} vs {best}");
            }
        }
    }

    #[test]
    fn recovery_reaches_the_boltzmann_distribution() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 70, 1.0);
        let targets = r.values(PromptId(0)).unwrap();
        let beta = 0.6;
        let outcome = recover_optimal_policy(
            ObjectiveKind::PosteriorProb,
            beta,
            targets,
            None,
            RecoverySettings::default(),
        )
        .unwrap();
        let closed_form = maxent_optimal_policy(&r, beta, PromptId(0), &s).unwrap();
        let tv = total_variation(&outcome.distribution, &closed_form);
        assert!(tv <= 1e-3, "tv {tv} after {} iterations", outcome.iterations);
        assert!(outcome.grad_max_norm < 1e-8);
    }

    #[test]
    fn recovery_honors_the_reference_anchor() {
        let s = EnumSpace::enumerate(vocab(3, 2), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 71, 1.0);
        let targets = r.values(PromptId(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let raw: Vec<f64> = (0..s.len()).map(|_| rng.gen::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let reference: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
        let beta = 0.9;
        let outcome = recover_optimal_policy(
            ObjectiveKind::Dpo,
            beta,
            targets,
            Some(&reference),
            RecoverySettings::default(),
        )
        .unwrap();
        let closed_form =
            kl_constrained_optimal_policy(&r, beta, &reference, PromptId(0), &s).unwrap();
        let tv = total_variation(&outcome.distribution, &closed_form);
        assert!(tv <= 1e-3, "tv {tv}");
    }

    #[test]
    fn recovered_rewards_match_r_star_up_to_a_constant() {
        let s = EnumSpace::enumerate(vocab(3, 0), 3).unwrap();
        let r = GroundTruthReward::random(&s, &[PromptId(0)], 73, 1.0);
        let targets = r.values(PromptId(0)).unwrap();
        let outcome = recover_optimal_policy(
            ObjectiveKind::PosteriorProb,
            0.3,
            targets,
            None,
            RecoverySettings::default(),
        )
        .unwrap();
        let center = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - mean).collect::<Vec<f64>>()
        };
        let fitted = center(&outcome.implicit_rewards);
        let truth = center(targets);
        for (a, b) in fitted.iter().zip(&truth) {
            assert!((a - b).abs() <= 5e-3, "fitted {a} vs true {b}");
        }
    }
}
