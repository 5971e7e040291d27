use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crg_core::backend::{HttpBackend, HttpConfig, LogitEncoding, ToyVlm, ToyVlmSpec};
use crg_core::guidance::{
    baseline_greedy_decode, greedy_decode, guided_sequence, DecodeResult, DEFAULT_MAX_TOKENS,
};
use crg_core::harness::{
    default_alpha_grid, load_alignment_manifest, load_qa_manifest, load_rerank_manifest, run_ablation,
    run_alignment, run_qa, run_rerank, run_span_analysis, HarnessOptions, TaskManifest,
};
use crg_core::proposals::{filter_and_group, load_detections, DEFAULT_SCORE_THRESHOLD};
use crg_core::{
    fixtures, Aggregation, Error, GuidanceConfig, ImageBuffer, LogitProvider, MaskStrategy, Region, TokenId,
    CAPTION_PROMPT,
};

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DATA: u8 = 4;

/// Contrastive region guidance for vision-language models.
///
/// Exit codes: 0 success, 2 usage error, 3 backend failure, 4 data error.
/// Every global option can also be set through a `CRG_*` environment
/// variable or a TOML file passed with --config; flags win over the
/// environment, which wins over the file.
#[derive(Debug, Parser)]
#[command(name = "crg", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file with defaults for the options below (snake_case keys).
    #[arg(long, global = true, env = "CRG_CONFIG")]
    config: Option<PathBuf>,
    /// Logit provider [default: toy].
    #[arg(long, global = true, env = "CRG_BACKEND")]
    backend: Option<BackendKind>,
    /// Sidecar base URL, required with --backend http.
    #[arg(long, global = true, env = "CRG_URL")]
    url: Option<String>,
    /// Toy model definition as JSON [default: the built-in demo model].
    #[arg(long, global = true, env = "CRG_TOY_CONFIG")]
    toy_config: Option<PathBuf>,
    /// Noise seed for the toy backend [default: the seed in the toy model file].
    #[arg(long, global = true, env = "CRG_SEED")]
    seed: Option<u64>,
    /// Guidance strength; 0 disables guidance [default: 1].
    #[arg(long, global = true, env = "CRG_ALPHA")]
    alpha: Option<f64>,
    /// Masking strategy: separate, single-each, combined-box or full [default: separate].
    #[arg(long, global = true, env = "CRG_STRATEGY")]
    strategy: Option<MaskStrategy>,
    /// How single-each combines its views: logits or scores [default: logits].
    #[arg(long, global = true, env = "CRG_AGGREGATION")]
    aggregation: Option<AggregationArg>,
    /// Masking fill color as r,g,b [default: 0,0,0].
    #[arg(long, global = true, env = "CRG_FILL")]
    fill: Option<String>,
    /// Detection scores must exceed this to become regions [default: 0.3].
    #[arg(long, global = true, env = "CRG_THRESHOLD")]
    threshold: Option<f64>,
    /// Directory manifest image paths are relative to [default: the manifest's directory].
    #[arg(long, global = true, env = "CRG_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Worker threads for evaluation runs [default: 1].
    #[arg(long, global = true, env = "CRG_WORKERS")]
    workers: Option<usize>,
    /// Detections JSONL resolving `detections_ref` and --image-id.
    #[arg(long, global = true, env = "CRG_DETECTIONS")]
    detections: Option<PathBuf>,
    /// Scoring prompt for alignment, span, score and rerank [default: the caption prompt].
    #[arg(long, global = true, env = "CRG_PROMPT")]
    prompt: Option<String>,
    /// Output file [default: stdout]; for `mask`, the PNG path.
    #[arg(long, short, global = true, env = "CRG_OUTPUT")]
    output: Option<PathBuf>,
    /// Report format; csv applies to `ablate` only [default: json].
    #[arg(long, global = true, env = "CRG_FORMAT")]
    format: Option<Format>,
    /// Override the backend's end-of-sequence token id (http only).
    #[arg(long, global = true, env = "CRG_EOS_ID")]
    eos_id: Option<TokenId>,
    /// Override the backend's "Yes" token id(s), comma separated (http only).
    #[arg(long, global = true, env = "CRG_YES_ID", value_delimiter = ',')]
    yes_id: Option<Vec<TokenId>>,
    /// Logit encoding requested from the sidecar [default: f32].
    #[arg(long, global = true, env = "CRG_ENCODING")]
    encoding: Option<EncodingArg>,
    /// Per-request timeout in seconds for the http backend [default: 120].
    #[arg(long, global = true, env = "CRG_TIMEOUT_SECS")]
    timeout_secs: Option<u64>,
    /// Concurrent requests to the sidecar [default: 4].
    #[arg(long, global = true, env = "CRG_MAX_IN_FLIGHT")]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<BackendKind>,
    url: Option<String>,
    toy_config: Option<PathBuf>,
    seed: Option<u64>,
    alpha: Option<f64>,
    strategy: Option<MaskStrategy>,
    aggregation: Option<AggregationArg>,
    fill: Option<String>,
    threshold: Option<f64>,
    data_root: Option<PathBuf>,
    workers: Option<usize>,
    detections: Option<PathBuf>,
    prompt: Option<String>,
    output: Option<PathBuf>,
    format: Option<Format>,
    eos_id: Option<TokenId>,
    yes_id: Option<Vec<TokenId>>,
    encoding: Option<EncodingArg>,
    timeout_secs: Option<u64>,
    max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Toy,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AggregationArg {
    Logits,
    Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EncodingArg {
    F32,
    F16,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Qa,
    Align,
    Rerank,
    Span,
}

#[derive(Debug, Args)]
struct RegionArgs {
    /// Region as x0,y0,x1,y1 in pixels (repeatable).
    #[arg(long = "box", value_name = "X0,Y0,X1,Y1", value_parser = parse_box)]
    boxes: Vec<Region>,
    /// Take regions for this image id from --detections instead.
    #[arg(long, conflicts_with = "boxes")]
    image_id: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the masked image(s) for a set of regions as PNG.
    Mask {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Greedy-decode an answer with and without guidance.
    Decode {
        #[arg(long)]
        image: PathBuf,
        /// Question or instruction.
        #[arg(long = "question", visible_alias = "text")]
        question: String,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Score a fixed text with and without guidance.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        /// Also report the mean probability of tokens START..END.
        #[arg(long, value_name = "START,END", value_parser = parse_span)]
        span: Option<(usize, usize)>,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Re-rank candidate boxes per phrase and report accuracy@0.5.
    Rerank {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Yes/no QA accuracy (individual, pairs, set of four).
    EvalQa {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Image-text alignment: AUROC, F1 and paired accuracy.
    EvalAlign {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Sweep alpha and masking strategy over one task.
    Ablate {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated alphas [default: 0,0.1,...,1,2,...,10].
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Comma-separated strategies.
        #[arg(long, value_delimiter = ',', default_value = "separate,full")]
        strategies: Vec<MaskStrategy>,
    },
    /// Mean probability of marked correct and incorrect word spans.
    Span {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write the demo images, manifests and toy model definition to a directory.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_box(s: &str) -> Result<Region, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected x0,y0,x1,y1, got {s:?}"));
    }
    let mut c = [0i64; 4];
    for (slot, p) in c.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("not an integer: {p:?}"))?;
    }
    Region::new(c[0], c[1], c[2], c[3]).map_err(|e| e.to_string())
}

fn parse_span(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected START,END, got {s:?}"))?;
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("not an index: {p:?}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_fill(s: &str) -> anyhow::Result<[u8; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(usage(format!("--fill expects r,g,b, got {s:?}")));
    }
    let mut rgb = [0u8; 3];
    for (slot, p) in rgb.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| usage(format!("--fill channel out of range: {p:?}")))?;
    }
    Ok(rgb)
}

/// Global options after layering flags, environment and config file.
struct Settings {
    backend: BackendKind,
    url: Option<String>,
    toy_config: Option<PathBuf>,
    seed: Option<u64>,
    guidance: GuidanceConfig,
    threshold: f64,
    data_root: Option<PathBuf>,
    workers: usize,
    detections: Option<PathBuf>,
    prompt: Option<String>,
    output: Option<PathBuf>,
    format: Format,
    eos_id: Option<TokenId>,
    yes_id: Option<Vec<TokenId>>,
    encoding: EncodingArg,
    timeout_secs: u64,
    max_in_flight: usize,
}

impl Settings {
    fn resolve(args: GlobalArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let alpha = args.alpha.or(file.alpha).unwrap_or(1.0);
        let strategy = args.strategy.or(file.strategy).unwrap_or(MaskStrategy::Separate);
        let aggregation = match args.aggregation.or(file.aggregation) {
            Some(AggregationArg::Scores) => Aggregation::Scores,
            _ => Aggregation::Logits,
        };
        let fill = match args.fill.or(file.fill) {
            Some(s) => parse_fill(&s)?,
            None => [0, 0, 0],
        };
        let guidance = GuidanceConfig {
            alpha,
            strategy,
            fill,
            aggregation,
        };
        guidance.validate().map_err(|e| usage(e.to_string()))?;
        let threshold = args.threshold.or(file.threshold).unwrap_or(DEFAULT_SCORE_THRESHOLD);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(usage(format!("--threshold must be in [0, 1], got {threshold}")));
        }
        let workers = args.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            return Err(usage("--workers must be positive"));
        }
        let max_in_flight = args.max_in_flight.or(file.max_in_flight).unwrap_or(4);
        if max_in_flight == 0 {
            return Err(usage("--max-in-flight must be positive"));
        }
        Ok(Self {
            backend: args.backend.or(file.backend).unwrap_or(BackendKind::Toy),
            url: args.url.or(file.url),
            toy_config: args.toy_config.or(file.toy_config),
            seed: args.seed.or(file.seed),
            guidance,
            threshold,
            data_root: args.data_root.or(file.data_root),
            workers,
            detections: args.detections.or(file.detections),
            prompt: args.prompt.or(file.prompt),
            output: args.output.or(file.output),
            format: args.format.or(file.format).unwrap_or(Format::Json),
            eos_id: args.eos_id.or(file.eos_id),
            yes_id: args.yes_id.or(file.yes_id),
            encoding: args.encoding.or(file.encoding).unwrap_or(EncodingArg::F32),
            timeout_secs: args.timeout_secs.or(file.timeout_secs).unwrap_or(120),
            max_in_flight,
        })
    }

    fn provider(&self) -> anyhow::Result<Box<dyn LogitProvider>> {
        match self.backend {
            BackendKind::Toy => {
                let spec = match &self.toy_config {
                    Some(path) => {
                        let text =
                            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                        serde_json::from_str::<ToyVlmSpec>(&text)
                            .map_err(|e| usage(format!("toy config {}: {e}", path.display())))?
                    }
                    None => fixtures::demo_toy_spec(),
                };
                let toy = ToyVlm::new(spec).map_err(|e| usage(format!("toy config: {e}")))?;
                Ok(Box::new(match self.seed {
                    Some(seed) => toy.with_seed(seed),
                    None => toy,
                }))
            }
            BackendKind::Http => {
                let url = self
                    .url
                    .clone()
                    .ok_or_else(|| usage("--backend http requires --url (or CRG_URL)"))?;
                let mut config = HttpConfig::new(url);
                config.timeout = Duration::from_secs(self.timeout_secs);
                config.max_in_flight = self.max_in_flight;
                config.encoding = match self.encoding {
                    EncodingArg::F32 => LogitEncoding::F32,
                    EncodingArg::F16 => LogitEncoding::F16,
                };
                config.eos_id = self.eos_id;
                config.affirmative_ids = self.yes_id.clone();
                Ok(Box::new(HttpBackend::connect(config)?))
            }
        }
    }

    fn harness_options(&self, manifest: &Path) -> HarnessOptions {
        let data_root = self.data_root.clone().unwrap_or_else(|| {
            manifest
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        });
        HarnessOptions {
            data_root,
            workers: self.workers,
            detections: self.detections.clone(),
            threshold: self.threshold,
            prompt: self.prompt.clone().unwrap_or_else(|| CAPTION_PROMPT.to_string()),
        }
    }

    /// Regions from --box, or from --detections for --image-id. `None`
    /// means the detector found nothing and the run falls back to unguided.
    fn regions(&self, args: &RegionArgs) -> anyhow::Result<Option<Vec<Region>>> {
        if let Some(id) = &args.image_id {
            let path = self
                .detections
                .as_ref()
                .ok_or_else(|| usage("--image-id requires --detections"))?;
            let sets = filter_and_group(&load_detections(path)?, self.threshold)?;
            let regions = sets
                .into_iter()
                .find(|s| &s.image_id == id)
                .map(|s| s.regions)
                .unwrap_or_default();
            if regions.is_empty() {
                log::warn!("no detections above {} for {id}; running unguided", self.threshold);
                return Ok(None);
            }
            return Ok(Some(regions));
        }
        if args.boxes.is_empty() && self.guidance.strategy.requires_regions() && !self.guidance.is_unguided() {
            return Err(usage(format!(
                "strategy {} needs at least one --box or --image-id",
                self.guidance.strategy
            )));
        }
        Ok(Some(args.boxes.clone()))
    }

    fn emit(&self, body: &str) -> anyhow::Result<()> {
        match &self.output {
            Some(path) => fs::write(path, body).with_context(|| format!("writing {}", path.display()))?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(body.as_bytes())?;
                out.flush()?;
            }
        }
        Ok(())
    }

    fn emit_json(&self, value: &impl Serialize) -> anyhow::Result<()> {
        self.emit(&(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn config_for(&self, regions: &Option<Vec<Region>>) -> GuidanceConfig {
        match regions {
            Some(_) => self.guidance,
            None => self.guidance.with_alpha(0.0),
        }
    }
}

#[derive(Serialize)]
struct DecodeOutput {
    text: String,
    baseline_text: String,
    guided: DecodeResult,
    baseline: DecodeResult,
    alpha: f64,
    strategy: MaskStrategy,
    unguided: bool,
}

#[derive(Serialize)]
struct ScoreOutput {
    text: String,
    tokens: Vec<String>,
    crg_score: f64,
    baseline_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    crg_span_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_span_mean: Option<f64>,
    alpha: f64,
    strategy: MaskStrategy,
    unguided: bool,
}

fn output_paths(base: &Path, n: usize) -> Vec<PathBuf> {
    if n == 1 {
        return vec![base.to_path_buf()];
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("masked");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("png");
    (0..n)
        .map(|i| base.with_file_name(format!("{stem}-{i}.{ext}")))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(cli.global)?;
    if settings.format == Format::Csv && !matches!(cli.command, Command::Ablate { .. }) {
        return Err(usage("--format csv is only supported by ablate"));
    }
    match cli.command {
        Command::Fixtures { out } => {
            fixtures::write_bundle(&out)?;
            eprintln!("wrote fixtures to {}", out.display());
        }
        Command::Mask { image, regions } => {
            let output = settings
                .output
                .clone()
                .ok_or_else(|| usage("mask requires --output"))?;
            let regions = settings.regions(&regions)?.unwrap_or_default();
            let img = ImageBuffer::load(&image)?;
            let masked = crg_core::masking::mask_image(&img, &regions, settings.guidance.strategy, settings.guidance.fill)?;
            let paths = output_paths(&output, masked.len());
            for (view, path) in masked.iter().zip(&paths) {
                view.save_png(path)?;
            }
            let listed: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::to_string_pretty(&listed)?);
        }
        Command::Decode {
            image,
            question,
            max_tokens,
            regions,
        } => {
            let regions = settings.regions(&regions)?;
            let config = settings.config_for(&regions);
            let provider = settings.provider()?;
            let img = ImageBuffer::load(&image)?;
            let guided = greedy_decode(
                &*provider,
                &img,
                regions.as_deref().unwrap_or(&[]),
                &config,
                &question,
                max_tokens,
            )?;
            let baseline = baseline_greedy_decode(&*provider, &img, &question, max_tokens)?;
            settings.emit_json(&DecodeOutput {
                text: guided.text(),
                baseline_text: baseline.text(),
                guided,
                baseline,
                alpha: config.alpha,
                strategy: config.strategy,
                unguided: regions.is_none(),
            })?;
        }
        Command::Score {
            image,
            text,
            span,
            regions,
        } => {
            let regions = settings.regions(&regions)?;
            let config = settings.config_for(&regions);
            let provider = settings.provider()?;
            let img = ImageBuffer::load(&image)?;
            let prompt = settings.prompt.clone().unwrap_or_else(|| CAPTION_PROMPT.to_string());
            let seq = guided_sequence(
                &*provider,
                &img,
                regions.as_deref().unwrap_or(&[]),
                &config,
                &prompt,
                &text,
            )?;
            let (crg_span_mean, baseline_span_mean) = match span {
                Some((a, b)) => (Some(seq.span_mean(a..b)?), Some(seq.baseline_span_mean(a..b)?)),
                None => (None, None),
            };
            settings.emit_json(&ScoreOutput {
                text,
                tokens: seq.tokens().pieces().to_vec(),
                crg_score: seq.crg_logprob(),
                baseline_score: seq.baseline_logprob(),
                crg_span_mean,
                baseline_span_mean,
                alpha: config.alpha,
                strategy: config.strategy,
                unguided: regions.is_none(),
            })?;
        }
        Command::Rerank { manifest } => {
            let tasks = load_rerank_manifest(&manifest)?;
            let provider = settings.provider()?;
            let report = run_rerank(&tasks, &*provider, &settings.guidance, &settings.harness_options(&manifest))?;
            settings.emit_json(&report)?;
        }
        Command::EvalQa { manifest } => {
            let rows = load_qa_manifest(&manifest)?;
            let provider = settings.provider()?;
            let report = run_qa(&rows, &*provider, &settings.guidance, &settings.harness_options(&manifest))?;
            settings.emit_json(&report)?;
        }
        Command::EvalAlign { manifest } => {
            let rows = load_alignment_manifest(&manifest)?;
            let provider = settings.provider()?;
            let report = run_alignment(&rows, &*provider, &settings.guidance, &settings.harness_options(&manifest))?;
            settings.emit_json(&report)?;
        }
        Command::Span { manifest } => {
            let rows = load_alignment_manifest(&manifest)?;
            let provider = settings.provider()?;
            let report =
                run_span_analysis(&rows, &*provider, &settings.guidance, &settings.harness_options(&manifest))?;
            settings.emit_json(&report)?;
        }
        Command::Ablate {
            task,
            manifest,
            alphas,
            strategies,
        } => {
            let loaded = match task {
                TaskArg::Qa => TaskManifest::Qa(load_qa_manifest(&manifest)?),
                TaskArg::Align => TaskManifest::Alignment(load_alignment_manifest(&manifest)?),
                TaskArg::Rerank => TaskManifest::Rerank(load_rerank_manifest(&manifest)?),
                TaskArg::Span => TaskManifest::Span(load_alignment_manifest(&manifest)?),
            };
            let alphas = alphas.unwrap_or_else(default_alpha_grid);
            if let Some(bad) = alphas.iter().find(|a| !a.is_finite() || **a < 0.0) {
                return Err(usage(format!("alphas must be finite and non-negative, got {bad}")));
            }
            let provider = settings.provider()?;
            let grid = run_ablation(
                &loaded,
                &*provider,
                &settings.guidance,
                &alphas,
                &strategies,
                &settings.harness_options(&manifest),
            )?;
            match settings.format {
                Format::Csv => settings.emit(&grid.to_csv())?,
                Format::Json => settings.emit_json(&grid)?,
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_backend() => EXIT_BACKEND,
        Some(Error::InvalidConfig(_) | Error::NoRegions | Error::InvalidRegion { .. }) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
