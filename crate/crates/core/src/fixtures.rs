//! The demo toy model and the small datasets shipped with it.
//!
//! Every fixture image is 64x64 with a mid-gray background and white
//! "objects" filling whole 16x16 grid cells, so boxes line up with the toy
//! model's intensity grid. The demo model is built so that its prior
//! misleads unguided decoding in each task while the region evidence,
//! isolated by the contrast, points to the right answer:
//!
//! - `where is the bowl`: prior says "under", cell 6 says "right".
//! - spatial yes/no questions: a prior favors "on"; the mug's cell carries
//!   the evidence for the true preposition.
//! - captions: a prior favors "blue"; the ball's cell supports "red".
//! - dogs: "closed" depends on the left dog, "open" on the right one.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::backend::{PrefixBias, PromptBias, Sensitivity, ToyVlm, ToyVlmSpec};
use crate::error::Result;
use crate::types::{ImageBuffer, Region, Rgb};

pub const IMAGE_SIZE: u32 = 64;
pub const CELL_SIZE: u32 = 16;
pub const BACKGROUND: Rgb = [128, 128, 128];
pub const OBJECT: Rgb = [255, 255, 255];

pub const BOWL_PROMPT: &str = "where is the bowl";
pub const BOWL_CELL: usize = 6;

pub const PLATE_CELL: usize = 5;
/// Mug cell for each preposition relative to the plate in cell 5.
pub const PREPOSITIONS: [(&str, usize); 4] = [("left", 4), ("right", 6), ("on", 1), ("under", 9)];

pub const BALL_CELL: usize = 10;
pub const LEFT_DOG_CELL: usize = 4;
pub const RIGHT_DOG_CELL: usize = 6;

pub const EVIDENCE_WEIGHT: f64 = 2.0;
pub const UNDER_PRIOR: f64 = 3.0;
pub const ON_PRIOR: f64 = 2.5;
pub const BLUE_PRIOR: f64 = 2.5;
pub const EOS_AFTER_ANSWER: f64 = 10.0;

const VOCAB: &[&str] = &[
    "<eos>", "<unk>", "yes", "no", "a", "the", "where", "is", "bowl", "under", "right", "left",
    "on", "mug", "plate", "of", "red", "blue", "ball", "dog", "with", "mouth", "closed", "open",
    "provide", "one-sentence", "caption", "for", "provided", "image", "its",
];

/// Pixel box covering one cell of the 4x4 grid.
pub fn cell_box(cell: usize) -> Region {
    let (row, col) = ((cell / 4) as i64, (cell % 4) as i64);
    let s = i64::from(CELL_SIZE);
    Region::new(col * s, row * s, col * s + s, row * s + s).expect("cell boxes are non-empty")
}

/// Gray image with white objects in the given cells.
pub fn scene(object_cells: &[usize]) -> ImageBuffer {
    let boxes: Vec<Region> = object_cells.iter().map(|&c| cell_box(c)).collect();
    ImageBuffer::from_fn(IMAGE_SIZE, IMAGE_SIZE, |x, y| {
        if boxes.iter().any(|b| b.contains(i64::from(x), i64::from(y))) {
            OBJECT
        } else {
            BACKGROUND
        }
    })
    .expect("fixture dimensions are valid")
}

fn sens(cell: usize, token: &str, weight: f64, when: &str) -> Sensitivity {
    Sensitivity {
        cell,
        token: token.into(),
        weight,
        when_prompt_has: Some(when.into()),
    }
}

pub fn demo_toy_spec() -> ToyVlmSpec {
    let mut sensitivities = vec![sens(BOWL_CELL, "right", EVIDENCE_WEIGHT, "bowl")];
    for (prep, cell) in PREPOSITIONS {
        sensitivities.push(sens(cell, "yes", EVIDENCE_WEIGHT, prep));
    }
    sensitivities.extend([
        sens(BALL_CELL, "red", EVIDENCE_WEIGHT, "caption"),
        sens(BALL_CELL, "ball", 1.0, "caption"),
        sens(LEFT_DOG_CELL, "dog", 1.0, "caption"),
        sens(RIGHT_DOG_CELL, "dog", 1.0, "caption"),
        sens(LEFT_DOG_CELL, "closed", EVIDENCE_WEIGHT, "caption"),
        sens(RIGHT_DOG_CELL, "open", EVIDENCE_WEIGHT, "caption"),
    ]);
    let bias = |when: &str, token: &str, bias: f64| PromptBias {
        when_prompt_has: when.into(),
        token: token.into(),
        bias,
    };
    ToyVlmSpec {
        vocab: VOCAB.iter().map(|s| s.to_string()).collect(),
        eos_token: "<eos>".into(),
        unk_token: "<unk>".into(),
        affirmative_token: Some("yes".into()),
        prior_bias: Default::default(),
        sensitivities,
        prompt_biases: vec![
            bias("bowl", "under", UNDER_PRIOR),
            bias("on", "yes", ON_PRIOR),
            bias("caption", "blue", BLUE_PRIOR),
        ],
        transitions: ["under", "right"]
            .iter()
            .map(|after| PrefixBias {
                after: after.to_string(),
                token: "<eos>".into(),
                bias: EOS_AFTER_ANSWER,
            })
            .collect(),
        noise_scale: 0.0,
        seed: 0,
    }
}

pub fn demo_toy() -> ToyVlm {
    ToyVlm::new(demo_toy_spec()).expect("demo toy spec is valid")
}

fn box_json(r: &Region, score: Option<f64>) -> serde_json::Value {
    let mut v = json!({"x0": r.x0(), "y0": r.y0(), "x1": r.x1(), "y1": r.y1()});
    if let Some(s) = score {
        v["score"] = json!(s);
    }
    v
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn qa_rows() -> Vec<serde_json::Value> {
    let plate = cell_box(PLATE_CELL);
    let mut rows = Vec::new();
    for (truth, mug_cell) in PREPOSITIONS {
        let pair = if truth == "left" || truth == "right" { "pair-left-right" } else { "pair-on-under" };
        for (asked, _) in PREPOSITIONS {
            let question = match asked {
                "left" | "right" => format!("is the mug {asked} of the plate"),
                _ => format!("is the mug {asked} the plate"),
            };
            rows.push(json!({
                "id": format!("mug-{truth}-{asked}"),
                "image_path": format!("images/mug_{truth}.png"),
                "question": question,
                "type": "yesno",
                "label": asked == truth,
                "pair_id": pair,
                "quad_id": "quad-mug-plate",
                "boxes": [box_json(&cell_box(mug_cell), None), box_json(&plate, None)],
            }));
        }
    }
    rows
}

pub fn alignment_rows() -> Vec<serde_json::Value> {
    let ball = box_json(&cell_box(BALL_CELL), None);
    vec![
        json!({"id": "a-red", "image_path": "images/ball.png", "text": "a red ball", "label": true, "group_id": "g-a", "boxes": [ball]}),
        json!({"id": "a-blue", "image_path": "images/ball.png", "text": "a blue ball", "label": false, "group_id": "g-a", "boxes": [ball]}),
        json!({"id": "the-red", "image_path": "images/ball.png", "text": "the red ball", "label": true, "group_id": "g-the", "detections_ref": "ball"}),
        json!({"id": "the-blue", "image_path": "images/ball.png", "text": "the blue ball", "label": false, "group_id": "g-the", "detections_ref": "ball"}),
    ]
}

pub fn span_rows() -> Vec<serde_json::Value> {
    let ball = box_json(&cell_box(BALL_CELL), None);
    vec![
        json!({"id": "s-a-red", "image_path": "images/ball.png", "text": "a red ball", "boxes": [ball], "w_correct": [1, 2]}),
        json!({"id": "s-a-blue", "image_path": "images/ball.png", "text": "a blue ball", "boxes": [ball], "w_incorrect": [1, 2]}),
        json!({"id": "s-the-red", "image_path": "images/ball.png", "text": "the red ball", "boxes": [ball], "w_correct": [1, 2]}),
        json!({"id": "s-the-blue", "image_path": "images/ball.png", "text": "the blue ball", "boxes": [ball], "w_incorrect": [1, 2]}),
    ]
}

pub fn rerank_rows() -> Vec<serde_json::Value> {
    let left = cell_box(LEFT_DOG_CELL);
    let right = cell_box(RIGHT_DOG_CELL);
    vec![
        json!({"image_id": "dogs-closed", "image_path": "images/dogs.png", "phrase": "dog with mouth closed",
               "gold_box": box_json(&left, None),
               "candidates": [box_json(&left, Some(0.6)), box_json(&right, Some(0.7))]}),
        json!({"image_id": "dogs-open", "image_path": "images/dogs.png", "phrase": "dog with mouth open",
               "gold_box": box_json(&right, None),
               "candidates": [box_json(&left, Some(0.8)), box_json(&right, Some(0.5))]}),
        json!({"image_id": "dogs-single", "image_path": "images/dogs.png", "phrase": "dog",
               "gold_box": box_json(&left, None),
               "candidates": [box_json(&left, Some(0.9))]}),
        json!({"image_id": "dogs-positive", "image_path": "images/dogs.png",
               "phrase": "the dog on the left with its mouth closed", "positive_tokens": "dog closed",
               "gold_box": box_json(&left, None),
               "candidates": [box_json(&right, Some(0.9)), box_json(&left, Some(0.4))]}),
    ]
}

pub fn detection_rows() -> Vec<serde_json::Value> {
    vec![
        json!({"image_id": "ball", "image_width": IMAGE_SIZE, "image_height": IMAGE_SIZE, "phrase": "ball",
               "coord_space": "normalized",
               "boxes": [{"x0": 0.5, "y0": 0.5, "x1": 0.75, "y1": 0.75, "score": 0.82},
                         {"x0": 0.0, "y0": 0.0, "x1": 0.25, "y1": 0.25, "score": 0.21}]}),
    ]
}

/// Writes images, manifests, detections and `toy.json` under `dir`.
pub fn write_bundle(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    scene(&[BOWL_CELL]).save_png(dir.join("images/bowl.png"))?;
    for (prep, cell) in PREPOSITIONS {
        scene(&[cell, PLATE_CELL]).save_png(dir.join(format!("images/mug_{prep}.png")))?;
    }
    scene(&[BALL_CELL]).save_png(dir.join("images/ball.png"))?;
    scene(&[LEFT_DOG_CELL, RIGHT_DOG_CELL]).save_png(dir.join("images/dogs.png"))?;

    write_jsonl(&dir.join("qa.jsonl"), &qa_rows())?;
    write_jsonl(&dir.join("align.jsonl"), &alignment_rows())?;
    write_jsonl(&dir.join("span.jsonl"), &span_rows())?;
    write_jsonl(&dir.join("rerank.jsonl"), &rerank_rows())?;
    write_jsonl(&dir.join("detections.jsonl"), &detection_rows())?;
    fs::write(
        dir.join("toy.json"),
        serde_json::to_string_pretty(&demo_toy_spec())? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_boxes_tile_the_image() {
        assert_eq!(cell_box(0), Region::new(0, 0, 16, 16).unwrap());
        assert_eq!(cell_box(6), Region::new(32, 16, 48, 32).unwrap());
        assert_eq!(cell_box(15), Region::new(48, 48, 64, 64).unwrap());
    }

    #[test]
    fn scene_intensities_match_design() {
        let img = scene(&[BALL_CELL]);
        let cells = ToyVlm::cell_intensities(&img);
        assert_eq!(cells[BALL_CELL], 1.0);
        assert_eq!(cells[0], 128.0 / 255.0);
    }

    #[test]
    fn demo_spec_round_trips_through_json() {
        let spec = demo_toy_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ToyVlmSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(ToyVlm::new(back).is_ok());
    }
}
