//! The region contrast: combining original and masked logits, guided greedy
//! decoding, and guided sequence scoring.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{self, LogitProvider, SequenceLogits};
use crate::error::{Error, Result};
use crate::masking::mask_image;
use crate::numeric::{argmax, log_softmax_at, softmax};
use crate::types::{
    Aggregation, GuidanceConfig, ImageBuffer, LogitVector, Payload, Region, ScoredCandidate,
    TokenId, TokenSequence,
};

pub const DEFAULT_MAX_TOKENS: usize = 256;

/// Logits of one decode step on the original image and on each masked view.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastStep {
    original: LogitVector,
    masked: Vec<LogitVector>,
    alpha: f64,
}

impl ContrastStep {
    pub fn new(original: LogitVector, masked: Vec<LogitVector>, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
        }
        if alpha > 0.0 && masked.is_empty() {
            return Err(Error::NoRegions);
        }
        for m in &masked {
            if m.vocab_size() != original.vocab_size() {
                return Err(Error::VocabMismatch {
                    expected: original.vocab_size(),
                    actual: m.vocab_size(),
                });
            }
        }
        Ok(Self {
            original,
            masked,
            alpha,
        })
    }

    pub fn original(&self) -> &LogitVector {
        &self.original
    }

    pub fn masked(&self) -> &[LogitVector] {
        &self.masked
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `(1 + alpha) * original - alpha * masked`, elementwise.
pub fn contrast(original: &[f64], masked: &[f64], alpha: f64) -> Vec<f64> {
    original
        .iter()
        .zip(masked)
        .map(|(o, m)| (1.0 + alpha) * o - alpha * m)
        .collect()
}

/// Guided logits for one step. Several masked views (SingleEach) are
/// combined separately and averaged. `alpha = 0` returns the original
/// logits untouched.
pub fn combine_logits(step: &ContrastStep) -> LogitVector {
    if step.alpha == 0.0 {
        return step.original.clone();
    }
    let orig = step.original.values();
    if let [only] = step.masked.as_slice() {
        return LogitVector::from_finite(contrast(orig, only.values(), step.alpha));
    }
    let k = step.masked.len() as f64;
    let mut sum = vec![0.0; orig.len()];
    for m in &step.masked {
        for (s, c) in sum.iter_mut().zip(contrast(orig, m.values(), step.alpha)) {
            *s += c;
        }
    }
    LogitVector::from_finite(sum.into_iter().map(|s| s / k).collect())
}

/// Probability of `token_id` under the guided distribution.
pub fn guided_probability(step: &ContrastStep, token_id: TokenId) -> Result<f64> {
    let combined = combine_logits(step);
    let index = token_index(token_id, combined.vocab_size())?;
    Ok(softmax(combined.values())[index])
}

fn token_index(id: TokenId, vocab_size: usize) -> Result<usize> {
    let index = id as usize;
    if index >= vocab_size {
        return Err(Error::TokenOutOfRange { id, vocab_size });
    }
    Ok(index)
}

/// Masked views for `config`, or none when guidance is off.
pub fn masked_views(
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
) -> Result<Vec<ImageBuffer>> {
    config.validate()?;
    if config.is_unguided() {
        return Ok(Vec::new());
    }
    mask_image(img, regions, config.strategy, config.fill)
}

/// Runs `f` on the original image and every masked view concurrently,
/// returning results in input order.
fn over_views<T: Send>(
    img: &ImageBuffer,
    masked: &[ImageBuffer],
    f: impl Fn(&ImageBuffer) -> Result<T> + Sync,
) -> Result<(T, Vec<T>)> {
    let mut all = std::iter::once(img)
        .chain(masked)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(&f)
        .collect::<Result<Vec<T>>>()?;
    let rest = all.split_off(1);
    Ok((all.pop().expect("original view"), rest))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    pub tokens: TokenSequence,
    /// Sum of guided per-step log-probabilities of the chosen tokens.
    pub crg_logprob: f64,
    pub baseline_logprob: f64,
    pub steps: usize,
    pub stopped_at_eos: bool,
}

impl DecodeResult {
    pub fn text(&self) -> String {
        self.tokens.text()
    }
}

/// Greedy decoding under the guided distribution.
///
/// Each step queries the original image and every masked view with the same
/// prefix and emits the argmax of the combined logits (ties go to the lowest
/// id). Stops on the backend's EOS id, which is scored but not emitted, or
/// after `max_tokens` steps. SingleEach always averages logits here. Tokens
/// the provider cannot detokenize are shown as `<id>`.
pub fn greedy_decode(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    prompt: &str,
    max_tokens: usize,
) -> Result<DecodeResult> {
    if max_tokens == 0 {
        return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
    }
    let masked = masked_views(img, regions, config)?;
    let eos = provider.capabilities().eos_id;
    let mut prefix: Vec<TokenId> = Vec::new();
    let mut tokens = TokenSequence::default();
    let (mut crg_logprob, mut baseline_logprob) = (0.0, 0.0);
    let mut stopped_at_eos = false;
    let mut steps = 0;
    while steps < max_tokens {
        let (orig, views) = over_views(img, &masked, |view| {
            backend::next_logits(provider, view, prompt, &prefix)
        })?;
        let step = ContrastStep::new(orig, views, config.alpha)?;
        let combined = combine_logits(&step);
        let next = argmax(combined.values());
        crg_logprob += log_softmax_at(combined.values(), next);
        baseline_logprob += log_softmax_at(step.original().values(), next);
        steps += 1;
        let id = next as TokenId;
        if Some(id) == eos {
            stopped_at_eos = true;
            break;
        }
        prefix.push(id);
        tokens.push(id, provider.piece(id).unwrap_or_else(|| format!("<{id}>")));
    }
    Ok(DecodeResult {
        tokens,
        crg_logprob,
        baseline_logprob,
        steps,
        stopped_at_eos,
    })
}

/// Ordinary greedy decoding on the original image only.
pub fn baseline_greedy_decode(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    prompt: &str,
    max_tokens: usize,
) -> Result<DecodeResult> {
    if max_tokens == 0 {
        return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
    }
    let eos = provider.capabilities().eos_id;
    let mut tokens = TokenSequence::default();
    let mut logprob = 0.0;
    let mut stopped_at_eos = false;
    let mut steps = 0;
    while steps < max_tokens {
        let logits = backend::next_logits(provider, img, prompt, tokens.ids())?;
        let next = argmax(logits.values());
        logprob += log_softmax_at(logits.values(), next);
        steps += 1;
        let id = next as TokenId;
        if Some(id) == eos {
            stopped_at_eos = true;
            break;
        }
        tokens.push(id, provider.piece(id).unwrap_or_else(|| format!("<{id}>")));
    }
    Ok(DecodeResult {
        tokens,
        crg_logprob: logprob,
        baseline_logprob: logprob,
        steps,
        stopped_at_eos,
    })
}

/// Guided and unguided log-probabilities of each forced continuation token.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSequence {
    tokens: TokenSequence,
    baseline: Vec<f64>,
    /// `guided[t][k]`: log-probability at step `t` under view `k`. One view
    /// unless SingleEach is aggregated by scores.
    guided: Vec<Vec<f64>>,
}

impl GuidedSequence {
    /// Scores an already-fetched original sequence against masked ones.
    pub fn from_logits(
        original: &SequenceLogits,
        masked: &[SequenceLogits],
        alpha: f64,
        aggregation: Aggregation,
    ) -> Result<Self> {
        if masked
            .iter()
            .any(|m| m.continuation().ids() != original.continuation().ids())
        {
            return Err(Error::TokenizationMismatch);
        }
        let ids = original.continuation().ids();
        let mut baseline = Vec::with_capacity(ids.len());
        let mut guided = Vec::with_capacity(ids.len());
        for (t, &id) in ids.iter().enumerate() {
            let orig = &original.per_step()[t];
            let index = token_index(id, orig.vocab_size())?;
            let base = log_softmax_at(orig.values(), index);
            baseline.push(base);
            if alpha == 0.0 {
                guided.push(vec![base]);
                continue;
            }
            let views: Vec<LogitVector> = masked.iter().map(|m| m.per_step()[t].clone()).collect();
            let row = match aggregation {
                Aggregation::Scores if views.len() > 1 => views
                    .into_iter()
                    .map(|v| {
                        let step = ContrastStep::new(orig.clone(), vec![v], alpha)?;
                        Ok(log_softmax_at(combine_logits(&step).values(), index))
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => {
                    let step = ContrastStep::new(orig.clone(), views, alpha)?;
                    vec![log_softmax_at(combine_logits(&step).values(), index)]
                }
            };
            guided.push(row);
        }
        Ok(Self {
            tokens: original.continuation().clone(),
            baseline,
            guided,
        })
    }

    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Guided log-probability of the whole continuation.
    pub fn crg_logprob(&self) -> f64 {
        let per_view = self.guided.first().map_or(1, Vec::len);
        if per_view == 1 {
            return self.guided.iter().map(|row| row[0]).sum();
        }
        let mut total = 0.0;
        for k in 0..per_view {
            total += self.guided.iter().map(|row| row[k]).sum::<f64>();
        }
        total / per_view as f64
    }

    pub fn baseline_logprob(&self) -> f64 {
        self.baseline.iter().sum()
    }

    /// Guided probability of each token, averaged across views.
    pub fn guided_probabilities(&self) -> Vec<f64> {
        self.guided
            .iter()
            .map(|row| row.iter().map(|lp| lp.exp()).sum::<f64>() / row.len() as f64)
            .collect()
    }

    pub fn baseline_probabilities(&self) -> Vec<f64> {
        self.baseline.iter().map(|lp| lp.exp()).collect()
    }

    fn check_span(&self, span: &Range<usize>) -> Result<()> {
        if span.start >= span.end || span.end > self.len() {
            return Err(Error::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Mean guided per-token probability over `span`.
    pub fn span_mean(&self, span: Range<usize>) -> Result<f64> {
        self.check_span(&span)?;
        let probs = self.guided_probabilities();
        Ok(probs[span.clone()].iter().sum::<f64>() / span.len() as f64)
    }

    pub fn baseline_span_mean(&self, span: Range<usize>) -> Result<f64> {
        self.check_span(&span)?;
        let probs = self.baseline_probabilities();
        Ok(probs[span.clone()].iter().sum::<f64>() / span.len() as f64)
    }
}

/// Forced-decodes `continuation` on the original image and every masked
/// view and scores it under the contrast.
pub fn guided_sequence(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    prompt: &str,
    continuation: &str,
) -> Result<GuidedSequence> {
    let masked = masked_views(img, regions, config)?;
    let (orig, views) = over_views(img, &masked, |view| {
        backend::sequence_logits(provider, view, prompt, continuation)
    })?;
    GuidedSequence::from_logits(&orig, &views, config.alpha, config.aggregation)
}

/// Guided log-probability of `continuation` (`crg_score`) next to its
/// unguided log-probability (`baseline_score`).
pub fn score_sequence(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    prompt: &str,
    continuation: &str,
) -> Result<ScoredCandidate> {
    let seq = guided_sequence(provider, img, regions, config, prompt, continuation)?;
    ScoredCandidate::new(
        Payload::Text(seq.tokens().clone()),
        seq.crg_logprob(),
        seq.baseline_logprob(),
    )
}

/// Mean guided probability of the continuation tokens in `span`.
pub fn span_probability(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    prompt: &str,
    continuation: &str,
    span: Range<usize>,
) -> Result<f64> {
    if span.is_empty() {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: 0,
        });
    }
    guided_sequence(provider, img, regions, config, prompt, continuation)?.span_mean(span)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YesProbability {
    pub crg: f64,
    pub baseline: f64,
}

/// Guided and unguided first-step probability mass of the affirmative
/// token(s) for a yes/no question.
pub fn yes_probabilities(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    question: &str,
) -> Result<YesProbability> {
    let affirmative = provider.capabilities().affirmative_ids.clone();
    if affirmative.is_empty() {
        return Err(Error::AffirmativeTokenUnknown);
    }
    let masked = masked_views(img, regions, config)?;
    let (orig, views) = over_views(img, &masked, |view| {
        backend::next_logits(provider, view, question, &[])
    })?;
    let vocab = orig.vocab_size();
    let indices = affirmative
        .iter()
        .map(|&id| token_index(id, vocab))
        .collect::<Result<Vec<_>>>()?;
    let mass = |logits: &LogitVector| {
        let p = softmax(logits.values());
        indices.iter().map(|&i| p[i]).sum::<f64>()
    };
    let baseline = mass(&orig);
    let crg = if config.aggregation == Aggregation::Scores && views.len() > 1 {
        let mut total = 0.0;
        for v in &views {
            total += mass(&combine_logits(&ContrastStep::new(orig.clone(), vec![v.clone()], config.alpha)?));
        }
        total / views.len() as f64
    } else {
        mass(&combine_logits(&ContrastStep::new(orig, views, config.alpha)?))
    };
    Ok(YesProbability { crg, baseline })
}

pub fn yes_probability(
    provider: &(impl LogitProvider + ?Sized),
    img: &ImageBuffer,
    regions: &[Region],
    config: &GuidanceConfig,
    question: &str,
) -> Result<f64> {
    Ok(yes_probabilities(provider, img, regions, config, question)?.crg)
}
