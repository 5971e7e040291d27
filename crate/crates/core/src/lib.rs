//! Contrastive region guidance (CRG) for autoregressive vision-language
//! models.
//!
//! At each decode step the model is queried twice: once on the original
//! image and once on a copy with the region(s) of interest blacked out.
//! The guided distribution is
//!
//! ```text
//! softmax((1 + alpha) * logit(y | I) - alpha * logit(y | mask(I, b)))
//! ```
//!
//! which factors out what the model would say without the region. `alpha = 0`
//! recovers ordinary decoding.

pub mod backend;
pub mod error;
pub mod fixtures;
pub mod guidance;
pub mod harness;
pub mod masking;
pub mod metrics;
pub mod numeric;
pub mod proposals;
pub mod rerank;
pub mod types;

pub use backend::{Capabilities, LogitProvider, SequenceLogits, CAPTION_PROMPT};
pub use error::{Error, Result};
pub use masking::MaskStrategy;
pub use types::{
    clamp_region, Aggregation, GuidanceConfig, ImageBuffer, LogitVector, Payload, Region, Rgb,
    ScoredCandidate, TokenId, TokenSequence,
};
