//! Tabular autoregressive policies with exact log-probabilities, seeded
//! sampling, and analytic logit gradients.
//!
//! A policy conditions each step on an order-`k` Markov window of preceding
//! content tokens, so the context table is finite and everything downstream
//! (enumeration, closed-form optima, gradient checks) can be exact. Setting
//! `k = max_len - 1` recovers full-prefix conditioning for short horizons.
//!
//! Prompts are opaque integer ids with their own logit tables. A policy may
//! instead be *unconditional*: a single shared table answers every prompt,
//! which is how a prior language model p(y) is represented.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;

/// Token identifier in `[0, vocab.size())`.
pub type Token = u32;

/// Opaque prompt identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PromptId(pub u32);

impl core::fmt::Display for PromptId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token alphabet: `size` ids, one of which is the end-of-sequence marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: u32,
    eos_id: Token,
}

impl Vocab {
    /// Requires `size >= 2` (at least one content token plus EOS) and
    /// `eos_id < size`.
    pub fn new(size: u32, eos_id: Token) -> Result<Self> {
        if size < 2 || eos_id >= size {
            return Err(Error::InvalidVocab { size, eos_id });
        }
        Ok(Self { size, eos_id })
    }

    pub fn size(&self) -> usize {
        self.size as usize
    }

    pub fn eos_id(&self) -> Token {
        self.eos_id
    }

    pub fn contains(&self, token: Token) -> bool {
        token < self.size
    }

    /// All non-EOS token ids, ascending.
    pub fn content_tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.size).filter(move |&t| t != self.eos_id)
    }
}

/// EOS-terminated token sequence: EOS appears exactly once, at the end.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sequence {
    tokens: Vec<Token>,
}

impl Sequence {
    /// Validates shape against a vocabulary and a maximum length
    /// (inclusive of the EOS token).
    pub fn new(tokens: Vec<Token>, vocab: &Vocab, max_len: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::MalformedSequence(String::from("empty token list")));
        }
        if tokens.len() > max_len {
            return Err(Error::MalformedSequence(format!(
                "length {} exceeds max length {max_len}",
                tokens.len()
            )));
        }
        for &t in &tokens {
            if !vocab.contains(t) {
                return Err(Error::TokenOutOfRange { token: t, vocab_size: vocab.size });
            }
        }
        let last = *tokens.last().expect("non-empty");
        if last != vocab.eos_id() {
            return Err(Error::MalformedSequence(format!(
                "last token {last} is not EOS ({})",
                vocab.eos_id()
            )));
        }
        if tokens[..tokens.len() - 1].contains(&vocab.eos_id()) {
            return Err(Error::MalformedSequence(String::from(
                "EOS appears before the final position",
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Length including the EOS token.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokens before the EOS marker.
    pub fn content(&self) -> &[Token] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

impl core::fmt::Display for Sequence {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// Whether a policy accepts gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Trainable,
    Frozen,
}

/// Prompt conditioning of a policy's logit table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptScope {
    /// One logit table per prompt id; queries for other prompts fail.
    Prompts(Vec<PromptId>),
    /// A single shared table; every prompt id resolves to it. This is the
    /// representation of an unconditional distribution p(y).
    Unconditional,
}

/// Logit initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// All logits zero: the uniform policy.
    Uniform,
    /// I.i.d. Gaussian logits with standard deviation `sigma`.
    Gaussian { sigma: f64 },
}

/// Key of one logit row: `(prompt, window)` where `window` holds at most
/// `context_order` preceding content tokens. Unconditional policies store
/// `prompt = None`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ContextKey {
    prompt: Option<PromptId>,
    window: Vec<Token>,
}

impl ContextKey {
    pub fn new(prompt: Option<PromptId>, window: Vec<Token>) -> Self {
        Self { prompt, window }
    }

    pub fn prompt(&self) -> Option<PromptId> {
        self.prompt
    }

    pub fn window(&self) -> &[Token] {
        &self.window
    }
}

impl core::fmt::Display for ContextKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self.prompt {
            Some(p) => write!(f, "(prompt {p}, window ")?,
            None => write!(f, "(shared, window ")?,
        }
        if self.window.is_empty() {
            write!(f, "-)")
        } else {
            for (i, t) in self.window.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{t}")?;
            }
            write!(f, ")")
        }
    }
}

/// Sampled sequence plus whether EOS had to be forced at the length cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub sequence: Sequence,
    pub eos_forced: bool,
}

const CONTEXT_TABLE_CAP: u128 = 4_000_000;

/// Autoregressive categorical policy backed by an explicit logit table.
///
/// Read operations never mutate and are safe to share across threads;
/// gradient updates require exclusive access and a [`Mode::Trainable`]
/// policy. All log-probabilities are computed with logsumexp, so
/// probabilities are materialized only for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    vocab: Vocab,
    context_order: usize,
    unconditional: bool,
    mode: Mode,
    table: BTreeMap<ContextKey, Vec<f64>>,
    prompts: BTreeSet<PromptId>,
}

impl Policy {
    /// Builds a policy with a fully materialized context table: every window
    /// of at most `context_order` content tokens, for every prompt in scope.
    ///
    /// `Uniform` ignores the seed; `Gaussian` draws are reproducible from it.
    pub fn init(
        vocab: Vocab,
        context_order: usize,
        scope: PromptScope,
        scheme: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        if let InitScheme::Gaussian { sigma } = scheme {
            if sigma <= 0.0 || !sigma.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "gaussian sigma must be positive and finite, got {sigma}"
                )));
            }
        }
        let prompts: Vec<Option<PromptId>> = match &scope {
            PromptScope::Prompts(ids) => {
                if ids.is_empty() {
                    return Err(Error::InvalidParameter(String::from(
                        "prompt-conditioned policy needs at least one prompt id",
                    )));
                }
                let set: BTreeSet<PromptId> = ids.iter().copied().collect();
                set.into_iter().map(Some).collect()
            }
            PromptScope::Unconditional => vec![None],
        };

        let windows = enumerate_windows(&vocab, context_order, prompts.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = BTreeMap::new();
        for prompt in &prompts {
            for window in &windows {
                let logits = match scheme {
                    InitScheme::Uniform => vec![0.0; vocab.size()],
                    InitScheme::Gaussian { sigma } => {
                        let normal = Normal::new(0.0, sigma)
                            .expect("sigma validated above");
                        (0..vocab.size()).map(|_| normal.sample(&mut rng)).collect()
                    }
                };
                table.insert(ContextKey::new(*prompt, window.clone()), logits);
            }
        }
        let prompt_set = prompts.iter().flatten().copied().collect();
        Ok(Self {
            vocab,
            context_order,
            unconditional: matches!(scope, PromptScope::Unconditional),
            mode: Mode::Trainable,
            table,
            prompts: prompt_set,
        })
    }

    /// Reassembles a policy from raw parts, validating row shapes and
    /// finiteness. Used by the checkpoint loader.
    pub fn from_table(
        vocab: Vocab,
        context_order: usize,
        unconditional: bool,
        mode: Mode,
        table: BTreeMap<ContextKey, Vec<f64>>,
    ) -> Result<Self> {
        let mut prompts = BTreeSet::new();
        for (key, logits) in &table {
            if logits.len() != vocab.size() {
                return Err(Error::InvalidParameter(format!(
                    "context {key} has {} logits, expected {}",
                    logits.len(),
                    vocab.size()
                )));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite(format!("logits at context {key}")));
            }
            if key.window().len() > context_order {
                return Err(Error::InvalidParameter(format!(
                    "context {key} is longer than order {context_order}"
                )));
            }
            if key.window().contains(&vocab.eos_id()) {
                return Err(Error::InvalidParameter(format!(
                    "context {key} contains the EOS token"
                )));
            }
            match (unconditional, key.prompt()) {
                (true, Some(_)) | (false, None) => {
                    return Err(Error::InvalidParameter(format!(
                        "context {key} disagrees with the policy's prompt scope"
                    )));
                }
                (false, Some(p)) => {
                    prompts.insert(p);
                }
                (true, None) => {}
            }
        }
        if table.is_empty() {
            return Err(Error::InvalidParameter(String::from("empty logit table")));
        }
        Ok(Self { vocab, context_order, unconditional, mode, table, prompts })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_unconditional(&self) -> bool {
        self.unconditional
    }

    /// Prompt ids with logit tables (empty for unconditional policies).
    pub fn prompt_ids(&self) -> impl Iterator<Item = PromptId> + '_ {
        self.prompts.iter().copied()
    }

    /// Deterministic iteration over the full logit table.
    pub fn contexts(&self) -> impl Iterator<Item = (&ContextKey, &[f64])> {
        self.table.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn freeze(mut self) -> Self {
        self.mode = Mode::Frozen;
        self
    }

    /// Frozen copy for use as a reference policy.
    pub fn frozen_snapshot(&self) -> Self {
        let mut copy = self.clone();
        copy.mode = Mode::Frozen;
        copy
    }

    fn resolve_key(&self, prompt: PromptId, prefix: &[Token]) -> Result<ContextKey> {
        if prefix.contains(&self.vocab.eos_id()) {
            return Err(Error::MalformedSequence(String::from(
                "prefix contains the EOS token",
            )));
        }
        let start = prefix.len().saturating_sub(self.context_order);
        let window = prefix[start..].to_vec();
        if self.unconditional {
            Ok(ContextKey::new(None, window))
        } else {
            if !self.prompts.contains(&prompt) {
                return Err(Error::UnknownPrompt(prompt));
            }
            Ok(ContextKey::new(Some(prompt), window))
        }
    }

    fn logits_at(&self, key: &ContextKey) -> Result<&[f64]> {
        self.table
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingContext(format!("{key}")))
    }

    /// log p(token | prompt, last-k window of `prefix`). Always <= 0.
    pub fn token_log_prob(&self, prompt: PromptId, prefix: &[Token], token: Token) -> Result<f64> {
        if !self.vocab.contains(token) {
            return Err(Error::TokenOutOfRange { token, vocab_size: self.vocab.size });
        }
        let key = self.resolve_key(prompt, prefix)?;
        let logits = self.logits_at(&key)?;
        Ok(logits[token as usize] - math::logsumexp(logits))
    }

    /// Materialized token probabilities at a context (for sampling and
    /// diagnostics).
    pub fn context_distribution(&self, prompt: PromptId, prefix: &[Token]) -> Result<Vec<f64>> {
        let key = self.resolve_key(prompt, prefix)?;
        let logits = self.logits_at(&key)?;
        let lse = math::logsumexp(logits);
        Ok(logits.iter().map(|&l| math::exp(l - lse)).collect())
    }

    /// log p(y | prompt): the sum of per-token log-probabilities over every
    /// position of `y`, including the EOS step, accumulated left to right.
    pub fn sequence_log_prob(&self, prompt: PromptId, y: &Sequence) -> Result<f64> {
        let tokens = y.tokens();
        let mut total = 0.0;
        for i in 0..tokens.len() {
            total += self.token_log_prob(prompt, &tokens[..i], tokens[i])?;
        }
        Ok(total)
    }

    /// Autoregressive sampling; EOS is force-emitted at the final slot when
    /// `max_len` is reached without it.
    pub fn sample_with_rng<R: RngCore>(
        &self,
        prompt: PromptId,
        max_len: usize,
        rng: &mut R,
    ) -> Result<SampleOutcome> {
        if max_len < 1 {
            return Err(Error::InvalidParameter(String::from("max_len must be >= 1")));
        }
        let eos = self.vocab.eos_id();
        let mut tokens: Vec<Token> = Vec::new();
        let mut eos_forced = false;
        for position in 0..max_len {
            if position == max_len - 1 {
                tokens.push(eos);
                eos_forced = true;
                break;
            }
            let probs = self.context_distribution(prompt, &tokens)?;
            let token = draw_categorical(&probs, rng);
            tokens.push(token);
            if token == eos {
                break;
            }
        }
        let sequence = Sequence::new(tokens, &self.vocab, max_len)?;
        Ok(SampleOutcome { sequence, eos_forced })
    }

    /// Seeded convenience wrapper around [`Policy::sample_with_rng`].
    pub fn sample(&self, prompt: PromptId, max_len: usize, seed: u64) -> Result<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with_rng(prompt, max_len, &mut rng)?.sequence)
    }

    /// Analytic gradient of `sequence_log_prob` with respect to the logits:
    /// at each visited context, `1{v = emitted} - softmax_v`; zero elsewhere.
    /// Repeated visits to the same context accumulate.
    pub fn sequence_log_prob_grad(&self, prompt: PromptId, y: &Sequence) -> Result<LogitGrad> {
        let tokens = y.tokens();
        let mut grad = LogitGrad::new();
        let width = self.vocab.size();
        for i in 0..tokens.len() {
            let key = self.resolve_key(prompt, &tokens[..i])?;
            let logits = self.logits_at(&key)?;
            let lse = math::logsumexp(logits);
            let row = grad.row_mut(key, width);
            for (v, &l) in logits.iter().enumerate() {
                row[v] -= math::exp(l - lse);
            }
            row[tokens[i] as usize] += 1.0;
        }
        Ok(grad)
    }

    /// In-place update `logits += scale * grad` over the gradient's support.
    /// Rejected for frozen policies.
    pub fn apply_update(&mut self, grad: &LogitGrad, scale: f64) -> Result<()> {
        if self.mode == Mode::Frozen {
            return Err(Error::FrozenPolicy);
        }
        for (key, row) in grad.rows() {
            let logits = self
                .table
                .get_mut(key)
                .ok_or_else(|| Error::MissingContext(format!("{key}")))?;
            if logits.len() != row.len() {
                return Err(Error::LengthMismatch { left: logits.len(), right: row.len() });
            }
            for (l, g) in logits.iter_mut().zip(row) {
                *l += scale * g;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("updated logit at context {key}")));
                }
            }
        }
        Ok(())
    }
}

/// Sparse gradient over logit entries: dense rows over visited contexts,
/// implicitly zero elsewhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogitGrad {
    rows: BTreeMap<ContextKey, Vec<f64>>,
}

impl LogitGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&ContextKey, &[f64])> {
        self.rows.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn get(&self, key: &ContextKey) -> Option<&[f64]> {
        self.rows.get(key).map(|v| v.as_slice())
    }

    /// Dense row for `key`, created as zeros on first access.
    pub fn row_mut(&mut self, key: ContextKey, width: usize) -> &mut Vec<f64> {
        self.rows.entry(key).or_insert_with(|| vec![0.0; width])
    }

    /// `self += coeff * other`.
    pub fn add_scaled(&mut self, coeff: f64, other: &LogitGrad) {
        for (key, row) in &other.rows {
            let dst = self.row_mut(key.clone(), row.len());
            for (d, s) in dst.iter_mut().zip(row) {
                *d += coeff * s;
            }
        }
    }

    pub fn scale(&mut self, coeff: f64) {
        for row in self.rows.values_mut() {
            for g in row.iter_mut() {
                *g *= coeff;
            }
        }
    }

    /// Max-norm over all entries; zero for an empty gradient.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0;
        for row in self.rows.values() {
            for &g in row {
                m = g.abs().max(m);
            }
        }
        m
    }
}

/// All context windows of length 0..=order over content tokens, ascending by
/// length then lexicographic. Rejects tables that would exceed the cap.
fn enumerate_windows(vocab: &Vocab, order: usize, n_scopes: usize) -> Result<Vec<Vec<Token>>> {
    let content: Vec<Token> = vocab.content_tokens().collect();
    let base = content.len() as u128;
    let mut count: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..=order {
        count += pow;
        pow = pow.saturating_mul(base);
    }
    let total = count.saturating_mul(n_scopes as u128);
    if total > CONTEXT_TABLE_CAP {
        return Err(Error::SpaceTooLarge { count: total, cap: CONTEXT_TABLE_CAP });
    }

    let mut windows: Vec<Vec<Token>> = Vec::with_capacity(count as usize);
    let mut current: Vec<Vec<Token>> = vec![Vec::new()];
    for _ in 0..=order {
        windows.extend(current.iter().cloned());
        let mut next = Vec::with_capacity(current.len() * content.len());
        for w in &current {
            for &t in &content {
                let mut extended = w.clone();
                extended.push(t);
                next.push(extended);
            }
        }
        current = next;
    }
    Ok(windows)
}

/// Inverse-CDF draw from a materialized categorical distribution.
fn draw_categorical<R: RngCore>(probs: &[f64], rng: &mut R) -> Token {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i as Token;
        }
    }
    (probs.len() - 1) as Token
}
