//! Evaluation pipelines driven by JSON Lines manifests.
//!
//! Manifest rows reference images relative to a data root. Regions come from
//! inline `boxes` (absolute pixels) or a `detections_ref` naming an
//! `image_id` in a detections file. Rows left without regions are scored
//! unguided and counted in `support.unguided`.
//!
//! Examples run on a bounded rayon pool; results are gathered in manifest
//! order before aggregation, so reports do not depend on the worker count.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{LogitProvider, CAPTION_PROMPT};
use crate::error::{Error, Result};
use crate::guidance::{guided_sequence, yes_probabilities};
use crate::masking::MaskStrategy;
use crate::metrics::{
    accuracy_at_iou, auroc, iou, f1_at_mean_threshold, grouped_accuracy, paired_accuracy, EvalReport,
    LabeledScore, PairedGroup, Support, DEFAULT_IOU_THRESHOLD,
};
use crate::proposals::{filter_and_group, load_detections, BoxSpec, CoordSpace, RegionSet, DEFAULT_SCORE_THRESHOLD};
use crate::rerank::{rerank, RankedCandidate, RerankTask};
use crate::types::{GuidanceConfig, ImageBuffer, Region};

/// Runs abort when more than this fraction of examples fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct HarnessOptions {
    pub data_root: PathBuf,
    pub workers: usize,
    pub detections: Option<PathBuf>,
    pub threshold: f64,
    /// Scoring prompt for alignment, span and re-ranking runs.
    pub prompt: String,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("."),
            workers: 1,
            detections: None,
            threshold: DEFAULT_SCORE_THRESHOLD,
            prompt: CAPTION_PROMPT.to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AlignmentExample {
    pub id: String,
    pub image_path: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<bool>,
    #[serde(default)]
    pub group_id: Option<String>,
    #[serde(default)]
    pub boxes: Option<Vec<BoxSpec>>,
    #[serde(default)]
    pub detections_ref: Option<String>,
    /// Token range `[start, end)` of the correct word(s).
    #[serde(default)]
    pub w_correct: Option<[usize; 2]>,
    #[serde(default)]
    pub w_incorrect: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Yesno,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub image_path: String,
    pub question: String,
    #[serde(rename = "type")]
    pub kind: QuestionType,
    /// Whether "yes" is the right answer.
    pub label: bool,
    /// Questions sharing a group compete; defaults to the image path.
    #[serde(default)]
    pub group_id: Option<String>,
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub quad_id: Option<String>,
    #[serde(default)]
    pub boxes: Option<Vec<BoxSpec>>,
    #[serde(default)]
    pub detections_ref: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct RerankRow {
    image_id: String,
    image_path: String,
    phrase: String,
    #[serde(default)]
    positive_tokens: Option<String>,
    #[serde(default)]
    gold_box: Option<BoxSpec>,
    /// Several acceptable boxes, e.g. one per object a phrase names.
    #[serde(default)]
    gold_boxes: Vec<BoxSpec>,
    candidates: Vec<BoxSpec>,
}

trait HasText {
    fn text_nonempty(&self) -> bool;
}

impl HasText for AlignmentExample {
    fn text_nonempty(&self) -> bool {
        !self.text.trim().is_empty()
    }
}

impl HasText for QaExample {
    fn text_nonempty(&self) -> bool {
        !self.question.trim().is_empty()
    }
}

impl HasText for RerankRow {
    fn text_nonempty(&self) -> bool {
        !self.phrase.trim().is_empty() && !self.candidates.is_empty()
    }
}

fn read_jsonl<T: DeserializeOwned + HasText>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let row: T = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if !row.text_nonempty() {
            return Err(err("empty text or no candidates".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}

pub fn load_alignment_manifest(path: impl AsRef<Path>) -> Result<Vec<AlignmentExample>> {
    read_jsonl(path.as_ref())
}

pub fn load_qa_manifest(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    read_jsonl(path.as_ref())
}

pub fn load_rerank_manifest(path: impl AsRef<Path>) -> Result<Vec<RerankTask>> {
    let path = path.as_ref();
    let rows: Vec<RerankRow> = read_jsonl(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let candidates = row
                .candidates
                .iter()
                .map(|b| b.to_region(CoordSpace::Absolute, None))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(err)?;
            let gold = row
                .gold_box
                .iter()
                .chain(&row.gold_boxes)
                .map(|b| b.to_region(CoordSpace::Absolute, None).map(Region::without_score))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(err)?;
            Ok(RerankTask {
                image_id: row.image_id,
                image_path: row.image_path,
                phrase: row.phrase,
                positive_tokens: row.positive_tokens,
                candidates,
                gold,
            })
        })
        .collect()
}

/// Per-example result in a run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleOutcome {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crg_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_score: Option<f64>,
    pub unguided: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<RankedCandidate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExampleOutcome {
    fn failed(id: &str, error: &Error) -> Self {
        Self {
            id: id.to_string(),
            crg_score: None,
            baseline_score: None,
            unguided: false,
            ranking: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub task: String,
    pub alpha: f64,
    pub strategy: MaskStrategy,
    pub support: Support,
    pub reports: Vec<EvalReport>,
    pub examples: Vec<ExampleOutcome>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.metric == name).map(|r| r.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Context<'a, P: ?Sized> {
    provider: &'a P,
    config: GuidanceConfig,
    options: &'a HarnessOptions,
    detections: HashMap<String, RegionSet>,
}

impl<'a, P: LogitProvider + ?Sized> Context<'a, P> {
    fn new(provider: &'a P, config: &GuidanceConfig, options: &'a HarnessOptions) -> Result<Self> {
        config.validate()?;
        let detections = match &options.detections {
            Some(path) => filter_and_group(&load_detections(path)?, options.threshold)?
                .into_iter()
                .map(|set| (set.image_id.clone(), set))
                .collect(),
            None => HashMap::new(),
        };
        Ok(Self {
            provider,
            config: *config,
            options,
            detections,
        })
    }

    fn image(&self, rel: &str) -> Result<ImageBuffer> {
        ImageBuffer::load(self.options.data_root.join(rel))
    }

    /// Regions clamped to `img`, or `None` when the example must run unguided.
    fn regions(
        &self,
        img: &ImageBuffer,
        boxes: &Option<Vec<BoxSpec>>,
        detections_ref: &Option<String>,
    ) -> Result<Option<Vec<Region>>> {
        let raw: Vec<Region> = match (boxes, detections_ref) {
            (Some(boxes), _) => boxes
                .iter()
                .map(|b| b.to_region(CoordSpace::Absolute, None))
                .collect::<std::result::Result<_, _>>()
                .map_err(Error::InvalidConfig)?,
            (None, Some(key)) => self
                .detections
                .get(key)
                .map(|set| set.regions.clone())
                .unwrap_or_default(),
            (None, None) => Vec::new(),
        };
        let clamped: Vec<Region> = raw.iter().filter_map(|r| r.clamp_to(img.width(), img.height()).ok()).collect();
        Ok(if clamped.is_empty() && self.config.strategy.requires_regions() {
            None
        } else {
            Some(clamped)
        })
    }

    /// Config for an example: unguided when it has no regions.
    fn example_config(&self, regions: &Option<Vec<Region>>) -> (GuidanceConfig, bool) {
        match regions {
            Some(_) => (self.config, false),
            None => (self.config.with_alpha(0.0), !self.config.is_unguided()),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.options.workers.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
    }
}

fn support_of(outcomes: &[ExampleOutcome]) -> Result<Support> {
    let total = outcomes.len();
    let excluded = outcomes.iter().filter(|o| o.error.is_some()).count();
    if excluded as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: excluded, total });
    }
    Ok(Support {
        total,
        scored: total - excluded,
        excluded,
        unguided: outcomes.iter().filter(|o| o.error.is_none() && o.unguided).count(),
    })
}

fn push_both(reports: &mut Vec<EvalReport>, name: &str, crg: f64, baseline: f64, support: &Support) {
    reports.push(EvalReport::new(format!("crg.{name}"), crg, support.clone()));
    reports.push(EvalReport::new(format!("baseline.{name}"), baseline, support.clone()));
}

/// Image-text alignment by guided caption log-probability.
///
/// Labeled data yields AUROC and mean-threshold F1; rows sharing a
/// `group_id` with exactly one positive yield paired accuracy. Baseline
/// (unguided) metrics are reported next to the guided ones.
pub fn run_alignment(
    manifest: &[AlignmentExample],
    provider: &(impl LogitProvider + ?Sized),
    config: &GuidanceConfig,
    options: &HarnessOptions,
) -> Result<RunReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ctx = Context::new(provider, config, options)?;
    let outcomes: Vec<ExampleOutcome> = ctx.pool()?.install(|| {
        manifest
            .par_iter()
            .map(|ex| {
                let run = || -> Result<ExampleOutcome> {
                    let img = ctx.image(&ex.image_path)?;
                    let regions = ctx.regions(&img, &ex.boxes, &ex.detections_ref)?;
                    let (cfg, unguided) = ctx.example_config(&regions);
                    let seq = guided_sequence(
                        ctx.provider,
                        &img,
                        regions.as_deref().unwrap_or(&[]),
                        &cfg,
                        &ctx.options.prompt,
                        &ex.text,
                    )?;
                    Ok(ExampleOutcome {
                        id: ex.id.clone(),
                        crg_score: Some(seq.crg_logprob()),
                        baseline_score: Some(seq.baseline_logprob()),
                        unguided,
                        ranking: None,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| {
                    log::warn!("alignment example {}: {e}", ex.id);
                    ExampleOutcome::failed(&ex.id, &e)
                })
            })
            .collect()
    });
    let support = support_of(&outcomes)?;
    let mut reports = Vec::new();

    let scored: Vec<(&AlignmentExample, &ExampleOutcome)> = manifest
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.error.is_none())
        .collect();
    let labeled = |pick: fn(&ExampleOutcome) -> f64| -> Vec<LabeledScore> {
        scored
            .iter()
            .filter_map(|(ex, o)| ex.label.map(|l| LabeledScore::new(pick(o), l)))
            .collect()
    };
    let crg_labeled = labeled(|o| o.crg_score.unwrap_or(f64::NAN));
    let base_labeled = labeled(|o| o.baseline_score.unwrap_or(f64::NAN));
    if let (Ok(a), Ok(b)) = (auroc(&crg_labeled), auroc(&base_labeled)) {
        push_both(&mut reports, "auroc", a, b, &support);
        let fc = f1_at_mean_threshold(&crg_labeled)?;
        let fb = f1_at_mean_threshold(&base_labeled)?;
        reports.push(EvalReport::new("crg.f1", fc.f1, support.clone()).with_threshold(fc.threshold));
        reports.push(EvalReport::new("baseline.f1", fb.f1, support.clone()).with_threshold(fb.threshold));
    }

    let mut groups: BTreeMap<&str, Vec<(bool, f64, f64)>> = BTreeMap::new();
    for (ex, o) in &scored {
        if let (Some(g), Some(label)) = (&ex.group_id, ex.label) {
            groups.entry(g.as_str()).or_default().push((
                label,
                o.crg_score.unwrap_or(f64::NAN),
                o.baseline_score.unwrap_or(f64::NAN),
            ));
        }
    }
    let paired = |pick: fn(&(bool, f64, f64)) -> f64| -> Vec<PairedGroup> {
        groups
            .values()
            .filter(|members| members.iter().filter(|m| m.0).count() == 1 && members.iter().any(|m| !m.0))
            .map(|members| {
                let correct = members.iter().find(|m| m.0).map(pick).unwrap_or(f64::NAN);
                PairedGroup::new(correct, members.iter().filter(|m| !m.0).map(pick).collect())
            })
            .collect()
    };
    let (crg_groups, base_groups) = (paired(|m| m.1), paired(|m| m.2));
    if !crg_groups.is_empty() {
        push_both(
            &mut reports,
            "paired_accuracy",
            paired_accuracy(&crg_groups)?,
            paired_accuracy(&base_groups)?,
            &support,
        );
    }

    Ok(RunReport {
        task: "alignment".into(),
        alpha: config.alpha,
        strategy: config.strategy,
        support,
        reports,
        examples: outcomes,
    })
}

/// Yes/no QA scored by the probability of the affirmative token.
///
/// Questions sharing a group (default: the image) compete: the group is
/// right when its one true question has the highest Yes probability. A
/// group without both kinds of question is judged per question against
/// 0.5. Pairs and sets of four are right only when all their groups are.
pub fn run_qa(
    manifest: &[QaExample],
    provider: &(impl LogitProvider + ?Sized),
    config: &GuidanceConfig,
    options: &HarnessOptions,
) -> Result<RunReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ctx = Context::new(provider, config, options)?;
    let outcomes: Vec<ExampleOutcome> = ctx.pool()?.install(|| {
        manifest
            .par_iter()
            .map(|ex| {
                let run = || -> Result<ExampleOutcome> {
                    let img = ctx.image(&ex.image_path)?;
                    let regions = ctx.regions(&img, &ex.boxes, &ex.detections_ref)?;
                    let (cfg, unguided) = ctx.example_config(&regions);
                    let p = yes_probabilities(
                        ctx.provider,
                        &img,
                        regions.as_deref().unwrap_or(&[]),
                        &cfg,
                        &ex.question,
                    )?;
                    Ok(ExampleOutcome {
                        id: ex.id.clone(),
                        crg_score: Some(p.crg),
                        baseline_score: Some(p.baseline),
                        unguided,
                        ranking: None,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| {
                    log::warn!("qa example {}: {e}", ex.id);
                    ExampleOutcome::failed(&ex.id, &e)
                })
            })
            .collect()
    });
    let support = support_of(&outcomes)?;

    struct Member {
        label: bool,
        crg: f64,
        baseline: f64,
    }
    struct Group<'m> {
        pair_id: Option<&'m str>,
        quad_id: Option<&'m str>,
        members: Vec<Member>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (ex, o) in manifest.iter().zip(&outcomes) {
        if o.error.is_some() {
            continue;
        }
        let key = ex.group_id.as_deref().unwrap_or(&ex.image_path);
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                pair_id: ex.pair_id.as_deref(),
                quad_id: ex.quad_id.as_deref(),
                members: Vec::new(),
            });
            groups.len() - 1
        });
        groups[slot].members.push(Member {
            label: ex.label,
            crg: o.crg_score.unwrap_or(f64::NAN),
            baseline: o.baseline_score.unwrap_or(f64::NAN),
        });
    }
    let to_paired = |pick: fn(&Member) -> f64| -> Vec<PairedGroup> {
        let mut out = Vec::new();
        for g in &groups {
            let positives: Vec<&Member> = g.members.iter().filter(|m| m.label).collect();
            let has_negative = g.members.iter().any(|m| !m.label);
            let tag = |mut pg: PairedGroup| {
                pg.pair_id = g.pair_id.map(str::to_string);
                pg.quad_id = g.quad_id.map(str::to_string);
                pg
            };
            if positives.len() == 1 && has_negative {
                out.push(tag(PairedGroup::new(
                    pick(positives[0]),
                    g.members.iter().filter(|m| !m.label).map(pick).collect(),
                )));
            } else {
                for m in &g.members {
                    let pg = if m.label {
                        PairedGroup::new(pick(m), vec![0.5])
                    } else {
                        PairedGroup::new(0.5, vec![pick(m)])
                    };
                    out.push(tag(pg));
                }
            }
        }
        out
    };
    let mut reports = Vec::new();
    let crg_groups = to_paired(|m| m.crg);
    let base_groups = to_paired(|m| m.baseline);
    if !crg_groups.is_empty() {
        let c = grouped_accuracy(&crg_groups)?;
        let b = grouped_accuracy(&base_groups)?;
        push_both(&mut reports, "accuracy_individual", c.individual, b.individual, &support);
        if let (Some(cp), Some(bp)) = (c.pairs, b.pairs) {
            push_both(&mut reports, "accuracy_pairs", cp, bp, &support);
        }
        if let (Some(cq), Some(bq)) = (c.set_of_four, b.set_of_four) {
            push_both(&mut reports, "accuracy_set_of_4", cq, bq, &support);
        }
    }
    Ok(RunReport {
        task: "qa".into(),
        alpha: config.alpha,
        strategy: config.strategy,
        support,
        reports,
        examples: outcomes,
    })
}

/// The gold box overlapping `pred` most, so matching any gold box counts.
fn best_gold(pred: &Region, gold: &[Region]) -> Region {
    let mut best = gold[0];
    for g in &gold[1..] {
        if iou(pred, g) > iou(pred, &best) {
            best = *g;
        }
    }
    best
}

fn detector_top1(task: &RerankTask) -> Region {
    let mut best = 0;
    for (i, c) in task.candidates.iter().enumerate().skip(1) {
        if c.score().unwrap_or(-1.0) > task.candidates[best].score().unwrap_or(-1.0) {
            best = i;
        }
    }
    task.candidates[best]
}

/// Re-ranks proposals per phrase and scores the top box against gold.
///
/// Reports accuracy@0.5 over all tasks with gold and over the slice with
/// more than one candidate. The baseline is the detector's top-scored box.
pub fn run_rerank(
    manifest: &[RerankTask],
    provider: &(impl LogitProvider + ?Sized),
    config: &GuidanceConfig,
    options: &HarnessOptions,
) -> Result<RunReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ctx = Context::new(provider, config, options)?;
    let outcomes: Vec<ExampleOutcome> = ctx.pool()?.install(|| {
        manifest
            .par_iter()
            .map(|task| {
                let run = || -> Result<ExampleOutcome> {
                    let img = ctx.image(&task.image_path)?;
                    let ranking = rerank(ctx.provider, &img, task, &ctx.config, &ctx.options.prompt)?;
                    let top = &ranking[0];
                    Ok(ExampleOutcome {
                        id: task.image_id.clone(),
                        crg_score: top.contrast,
                        baseline_score: top.baseline_logprob,
                        unguided: false,
                        ranking: Some(ranking),
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| {
                    log::warn!("rerank task {}: {e}", task.image_id);
                    ExampleOutcome::failed(&task.image_id, &e)
                })
            })
            .collect()
    });
    let support = support_of(&outcomes)?;
    let mut all = (Vec::new(), Vec::new());
    let mut multi = (Vec::new(), Vec::new());
    for (task, o) in manifest.iter().zip(&outcomes) {
        let Some(ranking) = &o.ranking else {
            continue;
        };
        if task.gold.is_empty() {
            continue;
        }
        let crg = (ranking[0].region, best_gold(&ranking[0].region, &task.gold));
        let top1 = detector_top1(task);
        let base = (top1, best_gold(&top1, &task.gold));
        all.0.push(crg);
        all.1.push(base);
        if task.candidates.len() > 1 {
            multi.0.push(crg);
            multi.1.push(base);
        }
    }
    let mut reports = Vec::new();
    let with_gold = Support {
        scored: all.0.len(),
        ..support.clone()
    };
    if !all.0.is_empty() {
        push_both(
            &mut reports,
            "accuracy@0.5",
            accuracy_at_iou(&all.0, DEFAULT_IOU_THRESHOLD)?,
            accuracy_at_iou(&all.1, DEFAULT_IOU_THRESHOLD)?,
            &with_gold,
        );
    }
    if !multi.0.is_empty() {
        let multi_support = Support {
            scored: multi.0.len(),
            ..support.clone()
        };
        push_both(
            &mut reports,
            "accuracy@0.5.multi",
            accuracy_at_iou(&multi.0, DEFAULT_IOU_THRESHOLD)?,
            accuracy_at_iou(&multi.1, DEFAULT_IOU_THRESHOLD)?,
            &multi_support,
        );
    }
    Ok(RunReport {
        task: "rerank".into(),
        alpha: config.alpha,
        strategy: config.strategy,
        support,
        reports,
        examples: outcomes,
    })
}

fn span_range(span: [usize; 2]) -> Range<usize> {
    span[0]..span[1]
}

/// Mean probability of marked correct (`w_correct`) and incorrect
/// (`w_incorrect`) word spans, guided and unguided.
pub fn run_span_analysis(
    manifest: &[AlignmentExample],
    provider: &(impl LogitProvider + ?Sized),
    config: &GuidanceConfig,
    options: &HarnessOptions,
) -> Result<RunReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ctx = Context::new(provider, config, options)?;
    // (outcome, [crg, baseline] for correct, [crg, baseline] for incorrect)
    type SpanRow = (ExampleOutcome, Option<[f64; 2]>, Option<[f64; 2]>);
    let rows: Vec<SpanRow> = ctx.pool()?.install(|| {
        manifest
            .par_iter()
            .map(|ex| {
                let run = || -> Result<SpanRow> {
                    let img = ctx.image(&ex.image_path)?;
                    let regions = ctx.regions(&img, &ex.boxes, &ex.detections_ref)?;
                    let (cfg, unguided) = ctx.example_config(&regions);
                    let seq = guided_sequence(
                        ctx.provider,
                        &img,
                        regions.as_deref().unwrap_or(&[]),
                        &cfg,
                        &ctx.options.prompt,
                        &ex.text,
                    )?;
                    let means = |span: Option<[usize; 2]>| -> Result<Option<[f64; 2]>> {
                        span.map(|s| {
                            Ok([seq.span_mean(span_range(s))?, seq.baseline_span_mean(span_range(s))?])
                        })
                        .transpose()
                    };
                    let correct = means(ex.w_correct)?;
                    let incorrect = means(ex.w_incorrect)?;
                    let outcome = ExampleOutcome {
                        id: ex.id.clone(),
                        crg_score: Some(seq.crg_logprob()),
                        baseline_score: Some(seq.baseline_logprob()),
                        unguided,
                        ranking: None,
                        error: None,
                    };
                    Ok((outcome, correct, incorrect))
                };
                run().unwrap_or_else(|e| {
                    log::warn!("span example {}: {e}", ex.id);
                    (ExampleOutcome::failed(&ex.id, &e), None, None)
                })
            })
            .collect()
    });
    let outcomes: Vec<ExampleOutcome> = rows.iter().map(|r| r.0.clone()).collect();
    let support = support_of(&outcomes)?;
    let mean_of = |vals: Vec<[f64; 2]>| -> Option<[f64; 2]> {
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        Some([
            vals.iter().map(|v| v[0]).sum::<f64>() / n,
            vals.iter().map(|v| v[1]).sum::<f64>() / n,
        ])
    };
    let mut reports = Vec::new();
    if let Some([c, b]) = mean_of(rows.iter().filter_map(|r| r.1).collect()) {
        push_both(&mut reports, "mean_p_correct", c, b, &support);
    }
    if let Some([c, b]) = mean_of(rows.iter().filter_map(|r| r.2).collect()) {
        push_both(&mut reports, "mean_p_incorrect", c, b, &support);
    }
    Ok(RunReport {
        task: "span".into(),
        alpha: config.alpha,
        strategy: config.strategy,
        support,
        reports,
        examples: outcomes,
    })
}

/// A loaded manifest for any task the ablation can sweep.
#[derive(Debug, Clone)]
pub enum TaskManifest {
    Alignment(Vec<AlignmentExample>),
    Qa(Vec<QaExample>),
    Rerank(Vec<RerankTask>),
    Span(Vec<AlignmentExample>),
}

impl TaskManifest {
    /// Metric each ablation cell is compared on.
    pub fn primary_metric(&self) -> &'static str {
        match self {
            TaskManifest::Alignment(rows) => {
                if rows.iter().any(|r| r.label == Some(true)) && rows.iter().any(|r| r.label == Some(false)) {
                    "crg.auroc"
                } else {
                    "crg.paired_accuracy"
                }
            }
            TaskManifest::Qa(_) => "crg.accuracy_individual",
            TaskManifest::Rerank(_) => "crg.accuracy@0.5",
            TaskManifest::Span(_) => "crg.mean_p_correct",
        }
    }

    pub fn run(
        &self,
        provider: &(impl LogitProvider + ?Sized),
        config: &GuidanceConfig,
        options: &HarnessOptions,
    ) -> Result<RunReport> {
        match self {
            TaskManifest::Alignment(m) => run_alignment(m, provider, config, options),
            TaskManifest::Qa(m) => run_qa(m, provider, config, options),
            TaskManifest::Rerank(m) => run_rerank(m, provider, config, options),
            TaskManifest::Span(m) => run_span_analysis(m, provider, config, options),
        }
    }
}

/// `{0.0, 0.1, ..., 1.0} ∪ {2, 3, ..., 10}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10)
        .map(|i| f64::from(i) / 10.0)
        .chain((2..=10).map(f64::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub alpha: f64,
    pub strategy: MaskStrategy,
    pub metric: String,
    /// `None` when the run produced no value for the primary metric.
    pub value: Option<f64>,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationGrid {
    pub task: String,
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, alpha: f64, strategy: MaskStrategy) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,strategy,metric,value\n");
        for c in &self.cells {
            let value = c.value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", c.alpha, c.strategy, c.metric, value));
        }
        out
    }
}

/// Sweeps `alphas x strategies`, one full run per cell, alpha-major.
pub fn run_ablation(
    manifest: &TaskManifest,
    provider: &(impl LogitProvider + ?Sized),
    base_config: &GuidanceConfig,
    alphas: &[f64],
    strategies: &[MaskStrategy],
    options: &HarnessOptions,
) -> Result<AblationGrid> {
    if alphas.is_empty() || strategies.is_empty() {
        return Err(Error::EmptyInput);
    }
    let metric = manifest.primary_metric();
    let mut cells = Vec::with_capacity(alphas.len() * strategies.len());
    let mut task = String::new();
    for &alpha in alphas {
        for &strategy in strategies {
            let config = base_config.with_alpha(alpha).with_strategy(strategy);
            let run = manifest.run(provider, &config, options)?;
            task = run.task.clone();
            cells.push(AblationCell {
                alpha,
                strategy,
                metric: metric.to_string(),
                value: run.metric(metric),
                reports: run.reports,
            });
        }
    }
    Ok(AblationGrid { task, cells })
}
