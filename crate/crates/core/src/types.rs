//! Domain values shared by every stage of the pipeline.
//!
//! All types here validate their invariants on construction and are
//! immutable afterwards, so they can be shared freely across worker threads.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskStrategy;

pub type TokenId = u32;
pub type Rgb = [u8; 3];

/// Decoded 8-bit RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} channel values for {width}x{height}, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self> {
        let n = width as usize * height as usize;
        let pixels = color.iter().copied().cycle().take(n * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Loads any format the `image` crate decodes, converting to 8-bit RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from(img.to_rgb8()))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        Ok(Self::from(img.to_rgb8()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb_image()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions validated on construction")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Whole-image bounds as a region.
    pub fn bounds(&self) -> Region {
        Region {
            x0: 0,
            y0: 0,
            x1: i64::from(self.width),
            y1: i64::from(self.height),
            score: None,
        }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }
}

impl From<RgbImage> for ImageBuffer {
    fn from(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)` with an optional
/// detector confidence.
///
/// Coordinates may be negative or exceed an image before clamping; only
/// `x0 < x1` and `y0 < y1` are required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegion")]
pub struct Region {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Deserialize)]
struct RawRegion {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    score: Option<f64>,
}

impl TryFrom<RawRegion> for Region {
    type Error = Error;

    fn try_from(r: RawRegion) -> Result<Self> {
        let region = Region::new(r.x0, r.y0, r.x1, r.y1)?;
        match r.score {
            Some(s) => region.with_score(s),
            None => Ok(region),
        }
    }
}

impl Region {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidRegion {
                x0,
                y0,
                x1,
                y1,
                reason: "requires x0 < x1 and y0 < y1",
            });
        }
        Ok(Self {
            x0,
            y0,
            x1,
            y1,
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidRegion {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                reason: "score must lie in [0, 1]",
            });
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn without_score(mut self) -> Self {
        self.score = None;
        self
    }

    pub fn x0(&self) -> i64 {
        self.x0
    }
    pub fn y0(&self) -> i64 {
        self.y0
    }
    pub fn x1(&self) -> i64 {
        self.x1
    }
    pub fn y1(&self) -> i64 {
        self.y1
    }
    pub fn score(&self) -> Option<f64> {
        self.score
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Same rectangle, ignoring scores.
    pub fn same_box(&self, other: &Region) -> bool {
        (self.x0, self.y0, self.x1, self.y1) == (other.x0, other.y0, other.x1, other.y1)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Clamps to a `width x height` canvas, keeping the score.
    pub fn clamp_to(&self, width: u32, height: u32) -> Result<Region> {
        let (w, h) = (i64::from(width), i64::from(height));
        let x0 = self.x0.clamp(0, w);
        let y0 = self.y0.clamp(0, h);
        let x1 = self.x1.clamp(0, w);
        let y1 = self.y1.clamp(0, h);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::EmptyRegion { width, height });
        }
        Ok(Region {
            x0,
            y0,
            x1,
            y1,
            score: self.score,
        })
    }
}

/// Restricts a region to the bounds of `img`.
pub fn clamp_region(region: &Region, img: &ImageBuffer) -> Result<Region> {
    region.clamp_to(img.width(), img.height())
}

/// Token ids with the surface strings the backend reported for them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
    pieces: Vec<String>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, pieces: Vec<String>) -> Result<Self> {
        if ids.len() != pieces.len() {
            return Err(Error::TokenSequenceLength {
                ids: ids.len(),
                pieces: pieces.len(),
            });
        }
        Ok(Self { ids, pieces })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: TokenId, piece: String) {
        self.ids.push(id);
        self.pieces.push(piece);
    }

    /// Pieces joined with single spaces.
    pub fn text(&self) -> String {
        self.pieces.join(" ")
    }
}

/// Full-vocabulary unnormalized log-probabilities for one decode step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::VocabMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogits { index });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }
}

/// Whether the SingleEach strategy averages combined logits before the
/// softmax, or averages the final per-mask scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Logits,
    Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub alpha: f64,
    pub strategy: MaskStrategy,
    pub fill: Rgb,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            strategy: MaskStrategy::Separate,
            fill: [0, 0, 0],
            aggregation: Aggregation::Logits,
        }
    }
}

impl GuidanceConfig {
    pub fn new(alpha: f64, strategy: MaskStrategy) -> Result<Self> {
        let config = Self {
            alpha,
            strategy,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_strategy(self, strategy: MaskStrategy) -> Self {
        Self { strategy, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn is_unguided(&self) -> bool {
        self.alpha == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Region(Region),
    Text(TokenSequence),
}

/// A region or text paired with its guided and unguided scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub payload: Payload,
    pub crg_score: f64,
    pub baseline_score: f64,
}

impl ScoredCandidate {
    pub fn new(payload: Payload, crg_score: f64, baseline_score: f64) -> Result<Self> {
        if !crg_score.is_finite() || !baseline_score.is_finite() {
            return Err(Error::BackendProtocol(format!(
                "non-finite candidate score (crg {crg_score}, baseline {baseline_score})"
            )));
        }
        Ok(Self {
            payload,
            crg_score,
            baseline_score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img20() -> ImageBuffer {
        ImageBuffer::filled(20, 20, [255, 255, 255]).unwrap()
    }

    #[test]
    fn clamp_at_boundary() {
        let r = Region::new(-5, 0, 10, 10).unwrap();
        let c = clamp_region(&r, &img20()).unwrap();
        assert!(c.same_box(&Region::new(0, 0, 10, 10).unwrap()));
    }

    #[test]
    fn clamp_identity() {
        let r = Region::new(0, 0, 10, 10).unwrap();
        assert_eq!(clamp_region(&r, &img20()).unwrap(), r);
    }

    #[test]
    fn clamp_disjoint_is_empty() {
        let r = Region::new(25, 25, 30, 30).unwrap();
        assert!(matches!(
            clamp_region(&r, &img20()),
            Err(Error::EmptyRegion { .. })
        ));
    }

    #[test]
    fn constructors_reject_violations() {
        assert!(Region::new(3, 0, 3, 5).is_err());
        assert!(Region::new(0, 5, 3, 1).is_err());
        assert!(Region::new(0, 0, 1, 1).unwrap().with_score(1.5).is_err());
        assert!(ImageBuffer::new(0, 3, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, vec![0; 11]).is_err());
        assert!(TokenSequence::new(vec![1, 2], vec!["a".into()]).is_err());
        assert!(matches!(
            LogitVector::new(vec![0.0, f64::NAN]),
            Err(Error::NonFiniteLogits { index: 1 })
        ));
        assert!(GuidanceConfig::new(-0.5, MaskStrategy::Separate).is_err());
        assert!(GuidanceConfig::new(f64::INFINITY, MaskStrategy::Separate).is_err());
    }

    #[test]
    fn region_deserialize_validates() {
        let ok: Region = serde_json::from_str(r#"{"x0":1,"y0":2,"x1":3,"y1":4,"score":0.5}"#).unwrap();
        assert_eq!(ok.score(), Some(0.5));
        assert!(serde_json::from_str::<Region>(r#"{"x0":3,"y0":2,"x1":1,"y1":4}"#).is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as u8 * 10, y as u8 * 20, 7]).unwrap();
        let back = ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(
            x0 in -50i64..50, y0 in -50i64..50, w in 1i64..60, h in 1i64..60,
            iw in 1u32..40, ih in 1u32..40,
        ) {
            let r = Region::new(x0, y0, x0 + w, y0 + h).unwrap();
            if let Ok(once) = r.clamp_to(iw, ih) {
                prop_assert!(once.x0() >= 0 && once.y0() >= 0);
                prop_assert!(once.x1() <= i64::from(iw) && once.y1() <= i64::from(ih));
                prop_assert_eq!(once.clamp_to(iw, ih).unwrap(), once);
            }
        }
    }
}
