//! Logit providers: the model side of the contrast.
//!
//! The engine never tokenizes. Providers own the tokenizer and prompt
//! template and return raw, full-vocabulary, pre-softmax logits.

mod http;
mod toy;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpConfig, LogitEncoding};
pub use toy::{PrefixBias, PromptBias, Sensitivity, ToyVlm, ToyVlmSpec, TOY_GRID};

use crate::error::{Error, Result};
use crate::types::{ImageBuffer, LogitVector, TokenId, TokenSequence};

/// Scoring prompt used for alignment, re-ranking and span analysis.
pub const CAPTION_PROMPT: &str = "Provide a one-sentence caption for the provided image";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub vocab_size: usize,
    pub supports_sequence_scoring: bool,
    #[serde(default)]
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<TokenId>,
    /// Token ids whose probability mass counts as "Yes".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affirmative_ids: Vec<TokenId>,
}

/// Per-position logits of a forced continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogits {
    per_step: Vec<LogitVector>,
    continuation: TokenSequence,
}

impl SequenceLogits {
    pub fn new(per_step: Vec<LogitVector>, continuation: TokenSequence) -> Result<Self> {
        if per_step.len() != continuation.len() {
            return Err(Error::BackendProtocol(format!(
                "{} logit steps for {} continuation tokens",
                per_step.len(),
                continuation.len()
            )));
        }
        Ok(Self {
            per_step,
            continuation,
        })
    }

    pub fn per_step(&self) -> &[LogitVector] {
        &self.per_step
    }

    pub fn continuation(&self) -> &TokenSequence {
        &self.continuation
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }
}

/// Conditional next-token model `p(y_t | image, prompt, y_<t)`.
///
/// Implementations must be deterministic: identical inputs give
/// bit-identical logits. Calls are independent and may run concurrently.
pub trait LogitProvider: Send + Sync {
    fn capabilities(&self) -> &Capabilities;

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &[TokenId],
    ) -> Result<LogitVector>;

    /// Forced decoding of `continuation`. Step `t` conditions on
    /// continuation tokens `< t`.
    fn sequence_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        continuation: &str,
    ) -> Result<SequenceLogits>;

    /// Surface string for a token id, when the provider knows it.
    fn piece(&self, _id: TokenId) -> Option<String> {
        None
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for &P {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }
    fn next_logits(&self, image: &ImageBuffer, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).next_logits(image, prompt, prefix)
    }
    fn sequence_logits(&self, image: &ImageBuffer, prompt: &str, continuation: &str) -> Result<SequenceLogits> {
        (**self).sequence_logits(image, prompt, continuation)
    }
    fn piece(&self, id: TokenId) -> Option<String> {
        (**self).piece(id)
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for Box<P> {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }
    fn next_logits(&self, image: &ImageBuffer, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).next_logits(image, prompt, prefix)
    }
    fn sequence_logits(&self, image: &ImageBuffer, prompt: &str, continuation: &str) -> Result<SequenceLogits> {
        (**self).sequence_logits(image, prompt, continuation)
    }
    fn piece(&self, id: TokenId) -> Option<String> {
        (**self).piece(id)
    }
}

fn check_vocab(provider: &(impl LogitProvider + ?Sized), logits: &LogitVector) -> Result<()> {
    let expected = provider.capabilities().vocab_size;
    if logits.vocab_size() != expected {
        return Err(Error::VocabMismatch {
            expected,
            actual: logits.vocab_size(),
        });
    }
    Ok(())
}

/// `next_logits` with the vocabulary-size contract enforced.
pub fn next_logits(
    provider: &(impl LogitProvider + ?Sized),
    image: &ImageBuffer,
    prompt: &str,
    prefix: &[TokenId],
) -> Result<LogitVector> {
    let logits = provider.next_logits(image, prompt, prefix)?;
    check_vocab(provider, &logits)?;
    Ok(logits)
}

/// `sequence_logits` with capability and vocabulary checks.
pub fn sequence_logits(
    provider: &(impl LogitProvider + ?Sized),
    image: &ImageBuffer,
    prompt: &str,
    continuation: &str,
) -> Result<SequenceLogits> {
    if !provider.capabilities().supports_sequence_scoring {
        return Err(Error::UnsupportedOperation("sequence_logits"));
    }
    let seq = provider.sequence_logits(image, prompt, continuation)?;
    for step in seq.per_step() {
        check_vocab(provider, step)?;
    }
    Ok(seq)
}
