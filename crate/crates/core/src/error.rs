use alloc::string::String;
use core::fmt;

use crate::policy::{PromptId, Token};

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vocabulary constraints violated (size < 2 or EOS out of range).
    InvalidVocab { size: u32, eos_id: u32 },
    /// A configuration or parameter value outside its documented domain.
    InvalidParameter(String),
    /// A token sequence violating the EOS-terminated shape.
    MalformedSequence(String),
    /// Token id outside the vocabulary.
    TokenOutOfRange { token: Token, vocab_size: u32 },
    /// Prompt id with no logit table in a prompt-conditioned policy.
    UnknownPrompt(PromptId),
    /// A context window missing from the logit table.
    MissingContext(String),
    /// Mutation attempted on a frozen policy.
    FrozenPolicy,
    /// Two policies with incompatible vocabularies.
    VocabMismatch,
    /// Two slices that must be index-aligned have different lengths.
    LengthMismatch { left: usize, right: usize },
    /// Loss evaluation over an empty batch.
    EmptyBatch,
    /// Dataset with no examples.
    EmptyDataset,
    /// A split that would leave one side empty.
    InvalidSplit(String),
    /// A non-finite value where a finite one is required.
    NonFinite(String),
    /// Non-finite loss attributable to a specific example.
    NonFiniteLoss { example_index: usize },
    /// Training aborted on a non-finite loss at a specific step.
    TrainAbort { step: usize, example_index: usize },
    /// Enumeration would exceed the configured sequence cap.
    SpaceTooLarge { count: u128, cap: u128 },
    /// KL support violation: q = 0 where p > 0.
    SupportViolation { index: usize, sequence: String },
    /// Zero-probability entry in a reference distribution.
    ZeroReferenceProbability { index: usize },
    /// A preference pair whose chosen and rejected sequences are identical.
    IdenticalPair,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidVocab { size, eos_id } => {
                write!(f, "invalid vocab: size {size} (need >= 2), eos_id {eos_id} (need < size)")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::MalformedSequence(msg) => write!(f, "malformed sequence: {msg}"),
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token {token} out of range for vocab of size {vocab_size}")
            }
            Error::UnknownPrompt(p) => write!(f, "unknown prompt id {}", p.0),
            Error::MissingContext(key) => write!(f, "no logit table for context {key}"),
            Error::FrozenPolicy => write!(f, "policy is frozen"),
            Error::VocabMismatch => write!(f, "policies have incompatible vocabularies"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::EmptyBatch => write!(f, "empty batch"),
            Error::EmptyDataset => write!(f, "empty dataset"),
            Error::InvalidSplit(msg) => write!(f, "invalid split: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::NonFiniteLoss { example_index } => {
                write!(f, "non-finite loss at example {example_index}")
            }
            Error::TrainAbort { step, example_index } => {
                write!(f, "training aborted at step {step}: non-finite loss at example {example_index}")
            }
            Error::SpaceTooLarge { count, cap } => {
                write!(f, "sequence space has {count} sequences, exceeding cap {cap}")
            }
            Error::SupportViolation { index, sequence } => {
                write!(f, "KL support violation at sequence {index} ({sequence}): q = 0 where p > 0")
            }
            Error::ZeroReferenceProbability { index } => {
                write!(f, "reference distribution is zero at sequence {index}")
            }
            Error::IdenticalPair => write!(f, "chosen and rejected sequences are identical"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
