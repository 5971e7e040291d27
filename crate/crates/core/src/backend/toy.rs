//! A deterministic, closed-form vision-language model for tests and demos.
//!
//! The image is reduced to the mean intensity of each cell of a 4x4 grid.
//! The logit of token `v` is
//!
//! ```text
//! prior[v]
//!   + sum of prompt biases on v whose trigger word is in the prompt
//!   + sum of weight * intensity[cell] over active sensitivities of v
//!   + sum of transition biases on v keyed by the last prefix token
//!   + noise_scale * hash(seed, prompt, prefix, v)
//! ```
//!
//! so blacking out a cell moves exactly the tokens sensitive to it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Capabilities, LogitProvider, SequenceLogits};
use crate::error::{Error, Result};
use crate::types::{ImageBuffer, LogitVector, TokenId, TokenSequence};

/// Cells per side of the intensity grid.
pub const TOY_GRID: usize = 4;
const MAX_VOCAB: usize = 64;

/// `weight * intensity[cell]` added to `token`, optionally only when the
/// prompt contains the word `when_prompt_has`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub cell: usize,
    pub token: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_prompt_has: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBias {
    pub when_prompt_has: String,
    pub token: String,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixBias {
    pub after: String,
    pub token: String,
    pub bias: f64,
}

fn default_eos() -> String {
    "<eos>".into()
}

fn default_unk() -> String {
    "<unk>".into()
}

/// Serializable description of a [`ToyVlm`], with tokens named by string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVlmSpec {
    pub vocab: Vec<String>,
    #[serde(default = "default_eos")]
    pub eos_token: String,
    #[serde(default = "default_unk")]
    pub unk_token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affirmative_token: Option<String>,
    #[serde(default)]
    pub prior_bias: BTreeMap<String, f64>,
    #[serde(default)]
    pub sensitivities: Vec<Sensitivity>,
    #[serde(default)]
    pub prompt_biases: Vec<PromptBias>,
    #[serde(default)]
    pub transitions: Vec<PrefixBias>,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct CompiledSensitivity {
    cell: usize,
    token: TokenId,
    weight: f64,
    requires: Option<TokenId>,
}

#[derive(Debug, Clone)]
pub struct ToyVlm {
    spec: ToyVlmSpec,
    capabilities: Capabilities,
    index: HashMap<String, TokenId>,
    unk: TokenId,
    prior: Vec<f64>,
    sensitivities: Vec<CompiledSensitivity>,
    prompt_biases: Vec<(TokenId, TokenId, f64)>,
    transitions: Vec<(TokenId, TokenId, f64)>,
}

impl ToyVlm {
    pub fn new(spec: ToyVlmSpec) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("toy model: {msg}"));
        if spec.vocab.is_empty() || spec.vocab.len() > MAX_VOCAB {
            return Err(bad(format!(
                "vocabulary must have 1..={MAX_VOCAB} entries, has {}",
                spec.vocab.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, word) in spec.vocab.iter().enumerate() {
            if index.insert(word.clone(), i as TokenId).is_some() {
                return Err(bad(format!("duplicate vocabulary entry '{word}'")));
            }
        }
        let lookup = |w: &str| -> Result<TokenId> {
            index
                .get(w)
                .copied()
                .ok_or_else(|| bad(format!("token '{w}' not in vocabulary")))
        };
        if !spec.noise_scale.is_finite() {
            return Err(bad("noise_scale must be finite".into()));
        }

        let mut prior = vec![0.0; spec.vocab.len()];
        for (word, bias) in &spec.prior_bias {
            prior[lookup(word)? as usize] = *bias;
        }
        let sensitivities = spec
            .sensitivities
            .iter()
            .map(|s| {
                if s.cell >= TOY_GRID * TOY_GRID {
                    return Err(bad(format!("cell {} outside the 4x4 grid", s.cell)));
                }
                Ok(CompiledSensitivity {
                    cell: s.cell,
                    token: lookup(&s.token)?,
                    weight: s.weight,
                    requires: s.when_prompt_has.as_deref().map(lookup).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let prompt_biases = spec
            .prompt_biases
            .iter()
            .map(|b| Ok((lookup(&b.when_prompt_has)?, lookup(&b.token)?, b.bias)))
            .collect::<Result<Vec<_>>>()?;
        let transitions = spec
            .transitions
            .iter()
            .map(|t| Ok((lookup(&t.after)?, lookup(&t.token)?, t.bias)))
            .collect::<Result<Vec<_>>>()?;
        let all_finite = prior.iter().all(|v| v.is_finite())
            && sensitivities.iter().all(|s| s.weight.is_finite())
            && prompt_biases.iter().all(|b| b.2.is_finite())
            && transitions.iter().all(|t| t.2.is_finite());
        if !all_finite {
            return Err(bad("all biases and weights must be finite".into()));
        }

        let eos = lookup(&spec.eos_token)?;
        let unk = lookup(&spec.unk_token)?;
        let affirmative = spec.affirmative_token.as_deref().map(lookup).transpose()?;
        let capabilities = Capabilities {
            vocab_size: spec.vocab.len(),
            supports_sequence_scoring: true,
            model_id: "toy-vlm".into(),
            eos_id: Some(eos),
            affirmative_ids: affirmative.into_iter().collect(),
        };
        Ok(Self {
            spec,
            capabilities,
            index,
            unk,
            prior,
            sensitivities,
            prompt_biases,
            transitions,
        })
    }

    pub fn spec(&self) -> &ToyVlmSpec {
        &self.spec
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.spec.seed = seed;
        out
    }

    pub fn token_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Lower-cases, splits on whitespace and strips surrounding punctuation.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut seq = TokenSequence::default();
        for raw in text.split_whitespace() {
            let word = raw
                .trim_matches(|c: char| !(c.is_alphanumeric() || c == '-' || c == '<' || c == '>'))
                .to_lowercase();
            if word.is_empty() {
                continue;
            }
            let id = self.index.get(&word).copied().unwrap_or(self.unk);
            seq.push(id, word);
        }
        seq
    }

    /// Mean intensity in `[0, 1]` of each grid cell, row-major.
    pub fn cell_intensities(image: &ImageBuffer) -> [f64; TOY_GRID * TOY_GRID] {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut sums = [0u64; TOY_GRID * TOY_GRID];
        let mut counts = [0u64; TOY_GRID * TOY_GRID];
        let px = image.pixels();
        for y in 0..h {
            let row = y * TOY_GRID / h;
            for x in 0..w {
                let col = x * TOY_GRID / w;
                let i = (y * w + x) * 3;
                let cell = row * TOY_GRID + col;
                sums[cell] += u64::from(px[i]) + u64::from(px[i + 1]) + u64::from(px[i + 2]);
                counts[cell] += 1;
            }
        }
        let mut out = [0.0; TOY_GRID * TOY_GRID];
        for c in 0..out.len() {
            if counts[c] > 0 {
                out[c] = sums[c] as f64 / (counts[c] * 3 * 255) as f64;
            }
        }
        out
    }

    /// The closed-form logit function on pre-tokenized inputs.
    pub fn logits_for(
        &self,
        intensities: &[f64; TOY_GRID * TOY_GRID],
        prompt: &[TokenId],
        prefix: &[TokenId],
    ) -> Vec<f64> {
        let mut values = self.prior.clone();
        for &(trigger, token, bias) in &self.prompt_biases {
            if prompt.contains(&trigger) {
                values[token as usize] += bias;
            }
        }
        for s in &self.sensitivities {
            if s.requires.is_none_or(|t| prompt.contains(&t)) {
                values[s.token as usize] += s.weight * intensities[s.cell];
            }
        }
        if let Some(last) = prefix.last() {
            for &(after, token, bias) in &self.transitions {
                if after == *last {
                    values[token as usize] += bias;
                }
            }
        }
        if self.spec.noise_scale != 0.0 {
            let context = hash_context(self.spec.seed, prompt, prefix);
            for (v, value) in values.iter_mut().enumerate() {
                *value += self.spec.noise_scale * unit_noise(context, v as u64);
            }
        }
        values
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_context(seed: u64, prompt: &[TokenId], prefix: &[TokenId]) -> u64 {
    let mut h = splitmix64(seed);
    for &id in prompt {
        h = splitmix64(h ^ u64::from(id));
    }
    h = splitmix64(h ^ 0xFFFF_FFFF_0000_0000);
    for &id in prefix {
        h = splitmix64(h ^ u64::from(id));
    }
    h
}

/// Uniform in `[-1, 1)`.
fn unit_noise(context: u64, token: u64) -> f64 {
    let bits = splitmix64(context ^ token.wrapping_mul(0xA24B_AED4_963E_E407)) >> 11;
    (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

impl LogitProvider for ToyVlm {
    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &[TokenId],
    ) -> Result<LogitVector> {
        let prompt_ids = self.tokenize(prompt);
        let values = self.logits_for(&Self::cell_intensities(image), prompt_ids.ids(), prefix);
        LogitVector::new(values)
    }

    fn sequence_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        continuation: &str,
    ) -> Result<SequenceLogits> {
        let intensities = Self::cell_intensities(image);
        let prompt_ids = self.tokenize(prompt);
        let cont = self.tokenize(continuation);
        let per_step = (0..cont.len())
            .map(|t| LogitVector::new(self.logits_for(&intensities, prompt_ids.ids(), &cont.ids()[..t])))
            .collect::<Result<Vec<_>>>()?;
        SequenceLogits::new(per_step, cont)
    }

    fn piece(&self, id: TokenId) -> Option<String> {
        self.spec.vocab.get(id as usize).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::next_logits;
    use crate::masking::{mask_image, MaskStrategy};
    use crate::types::Region;
    use proptest::prelude::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    fn bowl_toy() -> ToyVlm {
        ToyVlm::new(ToyVlmSpec {
            vocab: words(&["<eos>", "<unk>", "where", "is", "the", "bowl", "under", "right"]),
            eos_token: "<eos>".into(),
            unk_token: "<unk>".into(),
            affirmative_token: None,
            prior_bias: [("under".to_string(), 3.0)].into_iter().collect(),
            sensitivities: vec![Sensitivity {
                cell: 6,
                token: "right".into(),
                weight: 2.0,
                when_prompt_has: None,
            }],
            prompt_biases: vec![],
            transitions: vec![],
            noise_scale: 0.0,
            seed: 0,
        })
        .unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..v.len() {
            if v[i] > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn prior_dominates_on_black_image() {
        let toy = bowl_toy();
        let black = ImageBuffer::filled(64, 64, [0, 0, 0]).unwrap();
        let logits = next_logits(&toy, &black, "where is the bowl", &[]).unwrap();
        // Closed form: right = 2.0 * 0.0, under = 3.0.
        assert_eq!(logits.values()[7], 0.0);
        assert_eq!(logits.values()[6], 3.0);
        assert_eq!(toy.piece(argmax(logits.values()) as TokenId).as_deref(), Some("under"));
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let mut spec = bowl_toy().spec().clone();
        spec.noise_scale = 0.7;
        spec.seed = 42;
        let toy = ToyVlm::new(spec).unwrap();
        let img = ImageBuffer::from_fn(30, 17, |x, y| [x as u8 * 7, y as u8 * 13, 99]).unwrap();
        let a = toy.next_logits(&img, "where is the bowl", &[3, 4]).unwrap();
        let b = toy.next_logits(&img, "where is the bowl", &[3, 4]).unwrap();
        assert_eq!(a, b);
        let c = toy.with_seed(43).next_logits(&img, "where is the bowl", &[3, 4]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tokenizer_strips_punctuation_and_maps_unknowns() {
        let toy = bowl_toy();
        let seq = toy.tokenize("Where is the Bowl? Really.");
        assert_eq!(seq.ids(), &[2, 3, 4, 5, 1]);
        assert_eq!(seq.pieces()[3], "bowl");
    }

    #[test]
    fn spec_validation() {
        let mut spec = bowl_toy().spec().clone();
        spec.sensitivities[0].cell = 16;
        assert!(ToyVlm::new(spec).is_err());
        let mut spec = bowl_toy().spec().clone();
        spec.prior_bias.insert("missing".into(), 1.0);
        assert!(ToyVlm::new(spec).is_err());
        let mut spec = bowl_toy().spec().clone();
        spec.vocab.push("bowl".into());
        assert!(ToyVlm::new(spec).is_err());
    }

    #[test]
    fn empty_continuation_gives_empty_sequence() {
        let toy = bowl_toy();
        let img = ImageBuffer::filled(8, 8, [10, 10, 10]).unwrap();
        let seq = toy.sequence_logits(&img, "where", "").unwrap();
        assert!(seq.is_empty());
        assert!(seq.continuation().is_empty());
        let seq = toy.sequence_logits(&img, "where", "the bowl is under").unwrap();
        assert_eq!(seq.len(), 4);
    }

    fn random_toy(seed: u64, sens: Vec<(usize, usize, f64)>) -> ToyVlm {
        let vocab: Vec<String> = (0..12).map(|i| format!("t{i}")).chain(words(&["<eos>", "<unk>"])).collect();
        ToyVlm::new(ToyVlmSpec {
            vocab,
            eos_token: "<eos>".into(),
            unk_token: "<unk>".into(),
            affirmative_token: None,
            prior_bias: BTreeMap::new(),
            sensitivities: sens
                .into_iter()
                .map(|(cell, tok, weight)| Sensitivity {
                    cell,
                    token: format!("t{tok}"),
                    weight,
                    when_prompt_has: None,
                })
                .collect(),
            prompt_biases: vec![],
            transitions: vec![],
            noise_scale: 0.5,
            seed,
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn masking_a_cell_moves_only_its_tokens(
            seed in any::<u64>(),
            sens in prop::collection::vec((0usize..16, 0usize..12, 0.1f64..3.0), 1..10),
            cell in 0usize..16,
            prefix in prop::collection::vec(0u32..12, 0..4),
        ) {
            let toy = random_toy(seed, sens.clone());
            let img = ImageBuffer::filled(32, 32, [200, 150, 100]).unwrap();
            let (row, col) = ((cell / 4) as i64, (cell % 4) as i64);
            let region = Region::new(col * 8, row * 8, col * 8 + 8, row * 8 + 8).unwrap();
            let masked = mask_image(&img, &[region], MaskStrategy::Separate, [0, 0, 0]).unwrap().remove(0);
            let a = toy.next_logits(&img, "t1 t2", &prefix).unwrap();
            let b = toy.next_logits(&masked, "t1 t2", &prefix).unwrap();
            for v in 0..toy.capabilities().vocab_size {
                let sensitive = sens.iter().any(|&(c, t, _)| c == cell && t == v);
                if sensitive {
                    prop_assert_ne!(a.values()[v], b.values()[v]);
                } else {
                    prop_assert_eq!(a.values()[v].to_bits(), b.values()[v].to_bits());
                }
            }
        }
    }
}
