//! Region blackout: produces `mask(I, b)` images for the contrast.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{clamp_region, ImageBuffer, Region, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    /// Black out every region with its own rectangle in a single image.
    Separate,
    /// One masked image per region; results are averaged downstream.
    SingleEach,
    /// Black out the smallest rectangle enclosing all regions.
    CombinedBox,
    /// Black out the whole image.
    #[serde(rename = "full", alias = "full-image")]
    FullImage,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [
        MaskStrategy::Separate,
        MaskStrategy::SingleEach,
        MaskStrategy::CombinedBox,
        MaskStrategy::FullImage,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Separate => "separate",
            MaskStrategy::SingleEach => "single-each",
            MaskStrategy::CombinedBox => "combined-box",
            MaskStrategy::FullImage => "full",
        }
    }

    pub fn requires_regions(&self) -> bool {
        !matches!(self, MaskStrategy::FullImage)
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "separate" => Ok(MaskStrategy::Separate),
            "single-each" | "single" => Ok(MaskStrategy::SingleEach),
            "combined-box" | "combined" => Ok(MaskStrategy::CombinedBox),
            "full" | "full-image" => Ok(MaskStrategy::FullImage),
            other => Err(format!(
                "unknown masking strategy '{other}' (expected separate, single-each, combined-box or full)"
            )),
        }
    }
}

/// Minimal axis-aligned rectangle containing every region.
pub fn enclosing_box(regions: &[Region]) -> Result<Region> {
    let first = regions.first().ok_or(Error::NoRegions)?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.x0(), first.y0(), first.x1(), first.y1());
    for r in &regions[1..] {
        x0 = x0.min(r.x0());
        y0 = y0.min(r.y0());
        x1 = x1.max(r.x1());
        y1 = y1.max(r.y1());
    }
    Region::new(x0, y0, x1, y1)
}

/// Produces the masked image(s) for `strategy`.
///
/// Pixels inside the strategy's mask become `fill`; every other pixel is
/// copied unchanged. Overlapping regions under `Separate` are unioned.
pub fn mask_image(
    img: &ImageBuffer,
    regions: &[Region],
    strategy: MaskStrategy,
    fill: Rgb,
) -> Result<Vec<ImageBuffer>> {
    if strategy == MaskStrategy::FullImage {
        return Ok(vec![blackout(img, &[img.bounds()], fill)]);
    }
    if regions.is_empty() {
        return Err(Error::NoRegions);
    }
    let clamped = regions
        .iter()
        .map(|r| clamp_region(r, img))
        .collect::<Result<Vec<_>>>()?;
    Ok(match strategy {
        MaskStrategy::Separate => vec![blackout(img, &clamped, fill)],
        MaskStrategy::SingleEach => clamped
            .iter()
            .map(|r| blackout(img, std::slice::from_ref(r), fill))
            .collect(),
        MaskStrategy::CombinedBox => vec![blackout(img, &[enclosing_box(&clamped)?], fill)],
        MaskStrategy::FullImage => unreachable!(),
    })
}

/// Regions must already be clamped to `img`.
fn blackout(img: &ImageBuffer, regions: &[Region], fill: Rgb) -> ImageBuffer {
    let mut out = img.clone();
    let width = img.width() as usize;
    let pixels = out.pixels_mut();
    for r in regions {
        for y in r.y0() as usize..r.y1() as usize {
            let row = y * width;
            for x in r.x0() as usize..r.x1() as usize {
                let i = (row + x) * 3;
                pixels[i..i + 3].copy_from_slice(&fill);
            }
        }
    }
    out
}
