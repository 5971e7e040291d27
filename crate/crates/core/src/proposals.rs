//! Ingestion of phrase-grounded detector output.
//!
//! Detections arrive as JSON Lines, one phrase per line:
//!
//! ```json
//! {"image_id": "img1", "image_width": 640, "image_height": 480, "phrase": "a dog",
//!  "coord_space": "normalized",
//!  "boxes": [{"x0": 0.1, "y0": 0.2, "x1": 0.5, "y1": 0.9, "score": 0.82}]}
//! ```
//!
//! Normalized coordinates are scaled to pixels on load. Fractional pixel
//! edges are widened outward (floor on the top-left, ceil on the
//! bottom-right).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Region;

/// Boxes with scores at or below this are dropped.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.3;

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSpace {
    #[default]
    Absolute,
    Normalized,
}

/// A box as written in manifests and detection files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxSpec {
    pub fn to_region(&self, space: CoordSpace, size: Option<(u32, u32)>) -> std::result::Result<Region, String> {
        let coords = [self.x0, self.y0, self.x1, self.y1];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("box coordinates must be finite".into());
        }
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(format!(
                "box ({}, {}, {}, {}) needs x0 < x1 and y0 < y1",
                self.x0, self.y0, self.x1, self.y1
            ));
        }
        let (sx, sy) = match (space, size) {
            (CoordSpace::Absolute, _) => (1.0, 1.0),
            (CoordSpace::Normalized, Some((w, h))) => (f64::from(w), f64::from(h)),
            (CoordSpace::Normalized, None) => return Err("normalized box without image size".into()),
        };
        let lo = |v: f64| (v + EDGE_EPS).floor() as i64;
        let hi = |v: f64| (v - EDGE_EPS).ceil() as i64;
        let region = Region::new(
            lo(self.x0 * sx),
            lo(self.y0 * sy),
            hi(self.x1 * sx),
            hi(self.y1 * sy),
        )
        .map_err(|e| e.to_string())?;
        match self.score {
            Some(s) if !(0.0..=1.0).contains(&s) => Err(format!("score {s} outside [0, 1]")),
            Some(s) => region.with_score(s).map_err(|e| e.to_string()),
            None => Ok(region),
        }
    }

    pub fn from_region(region: &Region) -> Self {
        Self {
            x0: region.x0() as f64,
            y0: region.y0() as f64,
            x1: region.x1() as f64,
            y1: region.y1() as f64,
            score: region.score(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDetection {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_height: Option<u32>,
    phrase: String,
    #[serde(default)]
    coord_space: CoordSpace,
    boxes: Vec<BoxSpec>,
}

/// Detections of one phrase in one image, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub image_size: Option<(u32, u32)>,
    pub phrase: String,
    /// Every box carries a score.
    pub boxes: Vec<Region>,
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let wire: WireDetection =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let size = match (wire.image_width, wire.image_height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => Some((w, h)),
            (Some(_), Some(_)) => return Err(parse_err("image dimensions must be positive".into())),
            _ => None,
        };
        if wire.coord_space == CoordSpace::Normalized && size.is_none() {
            return Err(Error::MissingImageDimensions {
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        let boxes = wire
            .boxes
            .iter()
            .map(|b| {
                if b.score.is_none() {
                    return Err("detection box without score".to_string());
                }
                b.to_region(wire.coord_space, size)
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(parse_err)?;
        records.push(DetectionRecord {
            image_id: wire.image_id,
            image_size: size,
            phrase: wire.phrase,
            boxes,
        });
    }
    Ok(records)
}

/// Writes records in absolute pixel coordinates.
pub fn write_detections(records: &[DetectionRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        let wire = WireDetection {
            image_id: r.image_id.clone(),
            image_width: r.image_size.map(|s| s.0),
            image_height: r.image_size.map(|s| s.1),
            phrase: r.phrase.clone(),
            coord_space: CoordSpace::Absolute,
            boxes: r.boxes.iter().map(BoxSpec::from_region).collect(),
        };
        serde_json::to_writer(&mut out, &wire)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Kept proposals for one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSet {
    pub image_id: String,
    pub regions: Vec<Region>,
    /// `(phrase, detector score)` for each region, in the same order.
    pub provenance: Vec<(String, f64)>,
}

impl RegionSet {
    /// No box survived; the example should be scored without guidance.
    pub fn needs_unguided_fallback(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Drops boxes scoring at or below `threshold`, removes exact duplicates of
/// the same phrase, and merges all phrases of an image into one set.
///
/// Sets come back in order of each image's first record. Boxes are clamped
/// when the image size is known; boxes falling entirely outside are dropped.
pub fn filter_and_group(records: &[DetectionRecord], threshold: f64) -> Result<Vec<RegionSet>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "score threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let mut sets: Vec<RegionSet> = Vec::new();
    let mut by_image: HashMap<&str, usize> = HashMap::new();
    for record in records {
        let slot = *by_image.entry(record.image_id.as_str()).or_insert_with(|| {
            sets.push(RegionSet {
                image_id: record.image_id.clone(),
                regions: Vec::new(),
                provenance: Vec::new(),
            });
            sets.len() - 1
        });
        let mut seen: Vec<Region> = Vec::new();
        for b in &record.boxes {
            let score = b.score().unwrap_or(0.0);
            if score <= threshold || seen.iter().any(|s| s.same_box(b)) {
                continue;
            }
            seen.push(*b);
            let region = match record.image_size {
                Some((w, h)) => match b.clamp_to(w, h) {
                    Ok(r) => r,
                    Err(_) => {
                        log::warn!(
                            "dropping box outside image {} for phrase '{}'",
                            record.image_id,
                            record.phrase
                        );
                        continue;
                    }
                },
                None => *b,
            };
            sets[slot].regions.push(region);
            sets[slot].provenance.push((record.phrase.clone(), score));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn record(id: &str, phrase: &str, scores: &[f64]) -> DetectionRecord {
        DetectionRecord {
            image_id: id.into(),
            image_size: Some((100, 100)),
            phrase: phrase.into(),
            boxes: scores
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let x = i as i64 * 10;
                    Region::new(x, 0, x + 5, 5).unwrap().with_score(*s).unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn loads_one_record_per_line() {
        let f = write_lines(&[
            r#"{"image_id":"a","phrase":"dog","boxes":[{"x0":1,"y0":1,"x1":5,"y1":5,"score":0.9}]}"#,
            r#"{"image_id":"a","phrase":"cat","boxes":[]}"#,
            r#"{"image_id":"b","image_width":10,"image_height":10,"phrase":"car","coord_space":"absolute","boxes":[]}"#,
        ]);
        let records = load_detections(f.path()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].boxes[0].score(), Some(0.9));
        assert!(records[1].boxes.is_empty());
    }

    #[test]
    fn inverted_box_names_the_line() {
        let f = write_lines(&[
            r#"{"image_id":"a","phrase":"dog","boxes":[]}"#,
            r#"{"image_id":"a","phrase":"dog","boxes":[{"x0":9,"y0":1,"x1":5,"y1":5,"score":0.9}]}"#,
        ]);
        match load_detections(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn normalized_boxes_scale_to_pixels() {
        let f = write_lines(&[
            r#"{"image_id":"a","image_width":100,"image_height":80,"phrase":"dog","coord_space":"normalized","boxes":[{"x0":0.25,"y0":0.25,"x1":0.5,"y1":0.5,"score":0.5}]}"#,
        ]);
        let r = load_detections(f.path()).unwrap()[0].boxes[0];
        assert_eq!((r.x0(), r.y0(), r.x1(), r.y1()), (25, 20, 50, 40));
    }

    #[test]
    fn normalized_without_size_is_rejected() {
        let f = write_lines(&[
            r#"{"image_id":"a","phrase":"dog","coord_space":"normalized","boxes":[]}"#,
        ]);
        assert!(matches!(
            load_detections(f.path()),
            Err(Error::MissingImageDimensions { line: 1, .. })
        ));
    }

    #[test]
    fn box_without_score_is_rejected() {
        let f = write_lines(&[
            r#"{"image_id":"a","phrase":"dog","boxes":[{"x0":1,"y0":1,"x1":5,"y1":5}]}"#,
        ]);
        assert!(matches!(load_detections(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn threshold_is_strict() {
        let sets = filter_and_group(&[record("a", "dog", &[0.9, 0.31, 0.29])], 0.3).unwrap();
        assert_eq!(sets[0].regions.len(), 2);
        let sets = filter_and_group(&[record("a", "dog", &[0.3])], 0.3).unwrap();
        assert!(sets[0].needs_unguided_fallback());
    }

    #[test]
    fn zero_threshold_keeps_everything() {
        let sets = filter_and_group(&[record("a", "dog", &[0.9, 0.31, 0.29, 0.01])], 0.0).unwrap();
        assert_eq!(sets[0].regions.len(), 4);
    }

    #[test]
    fn all_below_threshold_flags_fallback() {
        let sets = filter_and_group(&[record("a", "dog", &[0.1, 0.2])], 0.3).unwrap();
        assert_eq!(sets.len(), 1);
        assert!(sets[0].needs_unguided_fallback());
    }

    #[test]
    fn groups_across_phrases_and_dedupes() {
        let mut dup = record("a", "dog", &[0.9]);
        dup.boxes.push(dup.boxes[0]);
        let records = vec![dup, record("b", "cat", &[0.8]), record("a", "ball", &[0.7, 0.6])];
        let sets = filter_and_group(&records, 0.3).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].image_id, "a");
        assert_eq!(sets[0].regions.len(), 3);
        assert_eq!(sets[0].provenance[0], ("dog".to_string(), 0.9));
        assert_eq!(sets[0].provenance[2], ("ball".to_string(), 0.6));
    }

    #[test]
    fn boxes_are_clamped_or_dropped() {
        let rec = DetectionRecord {
            image_id: "a".into(),
            image_size: Some((10, 10)),
            phrase: "dog".into(),
            boxes: vec![
                Region::new(-3, 2, 4, 12).unwrap().with_score(0.9).unwrap(),
                Region::new(20, 20, 30, 30).unwrap().with_score(0.9).unwrap(),
            ],
        };
        let sets = filter_and_group(&[rec], 0.3).unwrap();
        assert_eq!(sets[0].regions.len(), 1);
        let r = sets[0].regions[0];
        assert_eq!((r.x0(), r.y0(), r.x1(), r.y1()), (0, 2, 4, 10));
    }

    fn arb_record() -> impl Strategy<Value = DetectionRecord> {
        (
            0u8..3,
            "[a-z]{1,6}",
            prop::collection::vec((0i64..50, 0i64..50, 1i64..30, 1i64..30, 0.0f64..=1.0), 0..5),
            prop::option::of((1u32..200, 1u32..200)),
        )
            .prop_map(|(img, phrase, boxes, size)| DetectionRecord {
                image_id: format!("img{img}"),
                image_size: size,
                phrase,
                boxes: boxes
                    .into_iter()
                    .map(|(x, y, w, h, s)| Region::new(x, y, x + w, y + h).unwrap().with_score(s).unwrap())
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds_boxes(
            records in prop::collection::vec(arb_record(), 1..6),
            lo in 0.0f64..=1.0, hi in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let a = filter_and_group(&records, lo).unwrap();
            let b = filter_and_group(&records, hi).unwrap();
            for (sa, sb) in a.iter().zip(&b) {
                prop_assert!(sb.regions.len() <= sa.regions.len());
                for r in &sb.regions {
                    prop_assert!(sa.regions.contains(r));
                }
            }
        }

        #[test]
        fn load_write_load_is_a_fixed_point(records in prop::collection::vec(arb_record(), 0..6)) {
            let mut buf = Vec::new();
            write_detections(&records, &mut buf).unwrap();
            let mut f = tempfile::NamedTempFile::new().unwrap();
            f.write_all(&buf).unwrap();
            let once = load_detections(f.path()).unwrap();
            prop_assert_eq!(&once, &records);
            let mut buf2 = Vec::new();
            write_detections(&once, &mut buf2).unwrap();
            prop_assert_eq!(buf, buf2);
        }
    }
}
