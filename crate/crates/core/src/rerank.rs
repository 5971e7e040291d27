//! Picks, among candidate boxes, the one whose removal most changes the
//! model's belief in a phrase.
//!
//! Each candidate `b` is scored by the sequence-level contrast
//!
//! ```text
//! (1 + alpha) * log p(phrase | I) - alpha * log p(phrase | mask(I, b))
//! ```
//!
//! The first term is shared by all candidates, so for any `alpha > 0` the
//! top candidate is exactly the one with the lowest masked-image phrase
//! log-probability. The per-step renormalized guided log-probability is
//! reported alongside for diagnostics.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{self, LogitProvider, SequenceLogits};
use crate::error::{Error, Result};
use crate::guidance::GuidedSequence;
use crate::masking::{mask_image, MaskStrategy};
use crate::types::{Aggregation, GuidanceConfig, ImageBuffer, Payload, Region, ScoredCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTask {
    pub image_id: String,
    pub image_path: String,
    pub phrase: String,
    /// Substring of the phrase to score instead of the whole phrase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_tokens: Option<String>,
    pub candidates: Vec<Region>,
    /// Gold boxes; a prediction matching any of them counts as correct.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<Region>,
}

impl RerankTask {
    pub fn scored_text(&self) -> &str {
        self.positive_tokens.as_deref().unwrap_or(&self.phrase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    /// Position in the task's candidate list.
    pub index: usize,
    pub region: Region,
    /// Ranking key; `None` when scoring this candidate failed.
    pub contrast: Option<f64>,
    pub guided_logprob: Option<f64>,
    pub baseline_logprob: Option<f64>,
    pub masked_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RankedCandidate {
    pub fn to_scored(&self) -> Option<ScoredCandidate> {
        ScoredCandidate::new(
            Payload::Region(self.region),
            self.contrast?,
            self.baseline_logprob?,
        )
        .ok()
    }
}

/// Sequence-level contrast of one masked view against the original.
pub fn contrast_score(original_logprob: f64, masked_logprob: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return original_logprob;
    }
    (1.0 + alpha) * original_logprob - alpha * masked_logprob
}

fn by_rank(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    match (a.contrast, b.contrast) {
        (Some(x), Some(y)) => y
            .total_cmp(&x)
            .then_with(|| {
                let (sa, sb) = (a.region.score().unwrap_or(-1.0), b.region.score().unwrap_or(-1.0));
                sb.total_cmp(&sa)
            })
            .then(a.index.cmp(&b.index)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    }
}

/// Ranks the task's candidates, best first.
///
/// Ties go to the higher detector score, then the earlier candidate. A
/// candidate whose scoring fails is ranked last with its error attached. The
/// config's strategy is ignored: each candidate is masked on its own.
pub fn rerank(
    provider: &(impl LogitProvider + ?Sized),
    image: &ImageBuffer,
    task: &RerankTask,
    config: &GuidanceConfig,
    prompt: &str,
) -> Result<Vec<RankedCandidate>> {
    config.validate()?;
    if task.candidates.is_empty() {
        return Err(Error::NoRegions);
    }
    let text = task.scored_text();
    let original = backend::sequence_logits(provider, image, prompt, text)?;
    let mut ranked: Vec<RankedCandidate> = task
        .candidates
        .par_iter()
        .enumerate()
        .map(|(index, region)| {
            match score_candidate(provider, image, region, &original, config, prompt, text) {
                Ok((contrast, guided, baseline, masked)) => RankedCandidate {
                    index,
                    region: *region,
                    contrast: Some(contrast),
                    guided_logprob: Some(guided),
                    baseline_logprob: Some(baseline),
                    masked_logprob: Some(masked),
                    error: None,
                },
                Err(e) => {
                    log::warn!("candidate {index} of {}: {e}", task.image_id);
                    RankedCandidate {
                        index,
                        region: *region,
                        contrast: None,
                        guided_logprob: None,
                        baseline_logprob: None,
                        masked_logprob: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    ranked.sort_by(by_rank);
    Ok(ranked)
}

fn score_candidate(
    provider: &(impl LogitProvider + ?Sized),
    image: &ImageBuffer,
    region: &Region,
    original: &SequenceLogits,
    config: &GuidanceConfig,
    prompt: &str,
    text: &str,
) -> Result<(f64, f64, f64, f64)> {
    let masked_img = mask_image(image, &[*region], MaskStrategy::Separate, config.fill)?.remove(0);
    let masked = backend::sequence_logits(provider, &masked_img, prompt, text)?;
    let guided = GuidedSequence::from_logits(original, std::slice::from_ref(&masked), config.alpha, Aggregation::Logits)?;
    let masked_only = GuidedSequence::from_logits(&masked, &[], 0.0, Aggregation::Logits)?;
    let baseline = guided.baseline_logprob();
    let masked_logprob = masked_only.baseline_logprob();
    Ok((
        contrast_score(baseline, masked_logprob, config.alpha),
        guided.crg_logprob(),
        baseline,
        masked_logprob,
    ))
}
