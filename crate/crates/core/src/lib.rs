//! Exact, desk-scale machinery for KL-constrained preference optimization.
//!
//! This crate implements preference learning over *tabular* autoregressive
//! policies: categorical distributions over a finite vocabulary whose logits
//! are stored explicitly, one row per (prompt, context window). Because the
//! sequence space is finite and enumerable, every quantity that is estimated
//! by sampling at LLM scale — sequence probabilities, KL divergences,
//! partition functions, optimal policies — can be computed here exactly and
//! checked against closed forms.
//!
//! The main pieces:
//!
//! - [`policy`]: tabular policies with exact log-probabilities, seeded
//!   sampling, and analytic logit gradients.
//! - [`objectives`]: the Bradley-Terry preference model and three pairwise
//!   losses (DPO, posterior-probability, likelihood/prior-reference) with
//!   their implicit rewards and gradients.
//! - [`oracle`]: brute-force enumeration of the sequence space, closed-form
//!   optimal policies, exact KL/entropy, reward projections, and convex
//!   recovery of optima from the expected pairwise loss.
//! - [`trainer`]: deterministic mini-batch gradient training with a linear
//!   warmup/decay schedule, validation-loss checkpoint selection, and a
//!   degeneration detector.
//! - [`analysis`]: ranking accuracy, token-level log-probability difference
//!   statistics, and EOS diagnostics.
//! - [`data`]: preference examples, synthetic dataset generation from a
//!   ground-truth reward, and deterministic splitting.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats, and the CLI
//! live in the companion `preflab` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
mod error;
pub mod math;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
pub use policy::{
    ContextKey, InitScheme, LogitGrad, Mode, Policy, PromptId, PromptScope, SampleOutcome,
    Sequence, Token, Vocab,
};
