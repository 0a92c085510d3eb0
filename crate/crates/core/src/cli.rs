//! Command-line front end: `synth`, `batch`, `metrics`, `sweep` and `rf`.
//!
//! Exit status: 0 success, 1 usage errors, 2 I/O errors, 3 numeric divergence.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{
    list_images, load_image, read_manifest, save_image, write_manifest, ManifestAppender,
    ManifestRecord, PreprocSpec,
};
use crate::error::{Error, Result};
use crate::losses::{
    CoralTargets, CovNormalizer, LayerWeight, LossConfig, PRESET_CORAL_LAYERS, PRESET_CORAL_WEIGHT,
    PRESET_FEAT_LAYERS, PRESET_LAMBDA,
};
use crate::metrics::{coral_distances, Aggregation, MetricsConfig};
use crate::net::{FeatureTap, LayerKind, Network, NetworkSpec, PoolMode};
use crate::synth::{NoiseSpec, OptimizerConfig, SynthesisConfig, Synthesizer};
use crate::tensor::Tensor;
use crate::weights::{load_weights, random_weights, ScaleRule};

#[derive(Debug, Parser)]
#[command(name = "coralgen", version, about = "Feature + CORAL image synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize one image from a content and a style image.
    Synth(SynthCmd),
    /// Generate a labeled dataset from a content tree and a style directory.
    Batch(BatchCmd),
    /// Per-layer covariance distance between two image sets.
    Metrics(MetricsCmd),
    /// One synthesis per lambda value.
    Sweep(SweepCmd),
    /// Receptive field of every conv layer.
    Rf(RfCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizerArg {
    Channels,
    Samples,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TapArg {
    PostRelu,
    PreRelu,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Gd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolArg {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Paired,
    AllPairs,
    MeanCovariance,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// DGCW weight file.
    #[arg(long, conflicts_with = "random_weights")]
    pub weights: Option<PathBuf>,
    /// Use seeded random weights instead of a weight file.
    #[arg(long, value_name = "SEED")]
    pub random_weights: Option<u64>,
    /// Divide every VGG-16 channel count by this factor.
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    #[arg(long, value_enum, default_value_t = PoolArg::Max)]
    pub pool: PoolArg,
}

impl NetArgs {
    pub fn spec(&self) -> NetworkSpec {
        let pool = match self.pool {
            PoolArg::Max => PoolMode::Max,
            PoolArg::Avg => PoolMode::Average,
        };
        NetworkSpec::vgg16_narrow(self.width_divisor).with_pool_mode(pool)
    }

    pub fn network(&self) -> Result<Network<f32>> {
        match (&self.weights, self.random_weights) {
            (Some(path), _) => load_weights(path, self.spec()),
            (None, Some(seed)) => Ok(random_weights(self.spec(), seed, ScaleRule::FanIn)),
            (None, None) => Err(Error::InvalidConfig(
                "one of --weights or --random-weights is required".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    #[arg(long, value_delimiter = ',', default_values_t = PRESET_FEAT_LAYERS.map(String::from))]
    pub feat_layers: Vec<String>,
    /// One weight per feature layer, or a single weight for all.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    pub feat_weights: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = PRESET_CORAL_LAYERS.map(String::from))]
    pub coral_layers: Vec<String>,
    /// One weight per CORAL layer, or a single weight for all.
    #[arg(long, value_delimiter = ',', default_values_t = [PRESET_CORAL_WEIGHT])]
    pub coral_weights: Vec<f64>,
    #[arg(long = "lambda", default_value_t = PRESET_LAMBDA, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = NormalizerArg::Channels)]
    pub normalizer: NormalizerArg,
    #[arg(long, value_enum, default_value_t = TapArg::PostRelu)]
    pub tap: TapArg,
}

fn weighted(layers: &[String], weights: &[f64], what: &str) -> Result<Vec<LayerWeight>> {
    let weight_at = |i: usize| match weights {
        [w] => Ok(*w),
        ws if ws.len() == layers.len() => Ok(ws[i]),
        _ => Err(Error::InvalidConfig(format!(
            "{} {what} weights for {} layers",
            weights.len(),
            layers.len()
        ))),
    };
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| Ok(LayerWeight::new(l.clone(), weight_at(i)?)))
        .collect()
}

fn tap(arg: TapArg) -> FeatureTap {
    match arg {
        TapArg::PostRelu => FeatureTap::PostRelu,
        TapArg::PreRelu => FeatureTap::PreRelu,
    }
}

fn normalizer(arg: NormalizerArg) -> CovNormalizer {
    match arg {
        NormalizerArg::Channels => CovNormalizer::Channels,
        NormalizerArg::Samples => CovNormalizer::Samples,
    }
}

impl LossArgs {
    pub fn config(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            feat_layers: weighted(&self.feat_layers, &self.feat_weights, "feature")?,
            coral_layers: weighted(&self.coral_layers, &self.coral_weights, "coral")?,
            lambda: self.lambda,
            normalizer: normalizer(self.normalizer),
            tap: tap(self.tap),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> Result<SynthesisConfig> {
        let cfg = SynthesisConfig {
            loss: self.loss.config()?,
            noise: NoiseSpec {
                sigma: self.noise_sigma,
                seed,
            },
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerConfig::adam(self.step),
                OptimizerArg::Gd => OptimizerConfig::GradientDescent { step: self.step },
            },
            iterations: self.iterations,
            clamp: None,
            log_every: self.log_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest to append to (default: `manifest.jsonl` next to the output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Trace file (default: output path with `.trace.jsonl`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Label of the content image (default: its parent directory name).
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct BatchCmd {
    /// Directory with one subdirectory of content images per label.
    #[arg(long)]
    pub content_dir: PathBuf,
    #[arg(long)]
    pub style_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Default: `manifest.jsonl` inside the output directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct MetricsCmd {
    #[arg(long)]
    pub set_a: PathBuf,
    #[arg(long)]
    pub set_b: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = PRESET_CORAL_LAYERS.map(String::from))]
    pub layers: Vec<String>,
    #[arg(long, value_enum, default_value_t = AggregationArg::Paired)]
    pub aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = NormalizerArg::Channels)]
    pub normalizer: NormalizerArg,
    #[arg(long, value_enum, default_value_t = TapArg::PostRelu)]
    pub tap: TapArg,
    /// Write records here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct RfCmd {
    /// Validate this weight file against the preset before reporting.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    /// Emit `{layer, receptive_field}` objects instead of a table.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(cmd) => cmd_synth(&cmd).map(|_| 0),
        Command::Batch(cmd) => cmd_batch(&cmd).map(|s| s.exit_code()),
        Command::Metrics(cmd) => cmd_metrics(&cmd).map(|_| 0),
        Command::Sweep(cmd) => cmd_sweep(&cmd).map(|_| 0),
        Command::Rf(cmd) => cmd_rf(&cmd).map(|_| 0),
    }
}

fn load_input(path: &Path, pre: &PreprocSpec) -> Result<Tensor<f32>> {
    Ok(pre.preprocess(&load_image(path)?))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn default_label(content: &Path) -> String {
    content
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("unlabeled")
        .to_string()
}

fn layer_names(layers: &[LayerWeight]) -> Vec<String> {
    layers.iter().map(|l| l.layer.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalLosses {
    pub feat: f64,
    pub coral: f64,
    pub total: f64,
}

/// Synthesizes `cmd.out`, writes its trace and appends a manifest record.
pub fn cmd_synth(cmd: &SynthCmd) -> Result<FinalLosses> {
    let net = cmd.net.network()?;
    let cfg = cmd.synth.config(cmd.synth.seed)?;
    let pre = PreprocSpec::for_network(&net);
    let content = load_input(&cmd.content, &pre)?;
    let style = load_input(&cmd.style, &pre)?;
    let synth = Synthesizer::new(&net, cfg)?;
    let (image, trace) = synth.synthesize(&content, &style)?;

    create_parent(&cmd.out)?;
    save_image(&pre.deprocess(&image), &cmd.out)?;
    let trace_path = cmd
        .trace
        .clone()
        .unwrap_or_else(|| cmd.out.with_extension("trace.jsonl"));
    std::fs::write(&trace_path, trace.to_jsonl()).map_err(|e| Error::io(&trace_path, e))?;

    let last = *trace.last();
    let cfg = synth.config();
    let manifest = cmd
        .manifest
        .clone()
        .unwrap_or_else(|| cmd.out.with_file_name("manifest.jsonl"));
    ManifestAppender::open(&manifest)?.append(&ManifestRecord {
        output_path: cmd.out.clone(),
        content_path: cmd.content.clone(),
        style_path: cmd.style.clone(),
        label: cmd.label.clone().unwrap_or_else(|| default_label(&cmd.content)),
        lambda: cfg.loss.lambda,
        seed: cfg.noise.seed,
        iterations: cfg.iterations,
        final_feat: last.feat,
        final_coral: last.coral,
        feat_layers: layer_names(&cfg.loss.feat_layers),
        coral_layers: layer_names(&cfg.loss.coral_layers),
    })?;
    let out = FinalLosses {
        feat: last.feat,
        coral: last.coral,
        total: last.total,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(out)
}

/// One content image of a batch with its drawn style.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub content: PathBuf,
    pub label: String,
    pub style: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
}

/// Pairs every content image (sorted by label, then path) with a style drawn
/// uniformly from `styles` by a generator seeded with `seed`.
pub fn plan_batch(content_dir: &Path, styles: &[PathBuf], out_dir: &Path, seed: u64) -> Result<Vec<BatchItem>> {
    if styles.is_empty() {
        return Err(Error::InvalidConfig("style directory contains no images".into()));
    }
    let mut labels: Vec<PathBuf> = std::fs::read_dir(content_dir)
        .map_err(|e| Error::io(content_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    labels.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for dir in labels {
        let label = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidConfig(format!("label directory {} is not UTF-8", dir.display())))?
            .to_string();
        for content in list_images(&dir)? {
            let style = styles[rng.random_range(0..styles.len())].clone();
            let stem = content.file_stem().unwrap_or_default();
            let output = out_dir.join(&label).join(stem).with_extension("png");
            let index = items.len() as u64;
            items.push(BatchItem {
                content,
                label: label.clone(),
                style,
                output,
                seed: seed.wrapping_add(index),
            });
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchSummary {
    pub generated: usize,
    pub skipped: usize,
    pub failed: usize,
    #[serde(skip)]
    pub first_failure_code: Option<i32>,
}

impl BatchSummary {
    pub fn exit_code(&self) -> i32 {
        self.first_failure_code.unwrap_or(0)
    }
}

#[derive(Debug, Serialize)]
struct FailureRecord<'a> {
    content_path: &'a Path,
    style_path: &'a Path,
    error: String,
}

pub fn cmd_batch(cmd: &BatchCmd) -> Result<BatchSummary> {
    let net = cmd.net.network()?;
    let pre = PreprocSpec::for_network(&net);
    let base = cmd.synth.config(cmd.synth.seed)?;
    let styles = list_images(&cmd.style_dir)?;
    let items = plan_batch(&cmd.content_dir, &styles, &cmd.out_dir, cmd.synth.seed)?;
    std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::io(&cmd.out_dir, e))?;
    let manifest = cmd
        .manifest
        .clone()
        .unwrap_or_else(|| cmd.out_dir.join("manifest.jsonl"));

    // Resume: keep records whose output still exists and compact the manifest.
    let kept: Vec<ManifestRecord> = if manifest.exists() {
        read_manifest(&manifest)?
            .into_iter()
            .filter(|r| r.output_path.exists())
            .collect()
    } else {
        Vec::new()
    };
    write_manifest(&manifest, &kept)?;
    let done: HashSet<PathBuf> = kept.iter().map(|r| r.output_path.clone()).collect();
    let todo: Vec<&BatchItem> = items.iter().filter(|i| !done.contains(&i.output)).collect();

    let probe = Synthesizer::new(&net, base.clone())?;
    let mut style_cache: BTreeMap<&Path, Arc<CoralTargets>> = BTreeMap::new();
    let mut style_failures: BTreeMap<&Path, String> = BTreeMap::new();
    for item in &todo {
        let key = item.style.as_path();
        if style_cache.contains_key(key) || style_failures.contains_key(key) {
            continue;
        }
        match load_input(key, &pre).and_then(|s| probe.style_targets(&s)) {
            Ok(t) => {
                style_cache.insert(key, Arc::new(t));
            }
            Err(e) => {
                style_failures.insert(key, e.to_string());
            }
        }
    }

    let appender = ManifestAppender::open(&manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cmd.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(usize, Result<()>)> = pool.install(|| {
        todo.par_iter()
            .enumerate()
            .map(|(k, item)| {
                let res = (|| {
                    let targets = match style_cache.get(item.style.as_path()) {
                        Some(t) => t,
                        None => {
                            return Err(Error::InvalidConfig(
                                style_failures.get(item.style.as_path()).cloned().unwrap_or_default(),
                            ))
                        }
                    };
                    let mut cfg = base.clone();
                    cfg.noise.seed = item.seed;
                    let synth = Synthesizer::new(&net, cfg)?;
                    let content = load_input(&item.content, &pre)?;
                    let content_targets = synth.content_targets(&content)?;
                    let (image, trace) = synth.run(&content, &content_targets, targets)?;
                    create_parent(&item.output)?;
                    save_image(&pre.deprocess(&image), &item.output)?;
                    let last = *trace.last();
                    appender.append(&ManifestRecord {
                        output_path: item.output.clone(),
                        content_path: item.content.clone(),
                        style_path: item.style.clone(),
                        label: item.label.clone(),
                        lambda: base.loss.lambda,
                        seed: item.seed,
                        iterations: base.iterations,
                        final_feat: last.feat,
                        final_coral: last.coral,
                        feat_layers: layer_names(&base.loss.feat_layers),
                        coral_layers: layer_names(&base.loss.coral_layers),
                    })
                })();
                (k, res)
            })
            .collect()
    });

    let mut summary = BatchSummary {
        skipped: items.len() - todo.len(),
        ..Default::default()
    };
    let mut failures = Vec::new();
    for (k, res) in results {
        match res {
            Ok(()) => summary.generated += 1,
            Err(e) => {
                summary.failed += 1;
                summary.first_failure_code.get_or_insert(e.exit_code());
                eprintln!("failed {}: {e}", todo[k].content.display());
                failures.push(serde_json::to_string(&FailureRecord {
                    content_path: &todo[k].content,
                    style_path: &todo[k].style,
                    error: e.to_string(),
                })?);
            }
        }
    }
    if !failures.is_empty() {
        let path = manifest.with_extension("failures.jsonl");
        let mut text = failures.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    println!("{}", serde_json::to_string(&summary)?);
    Ok(summary)
}

pub fn cmd_metrics(cmd: &MetricsCmd) -> Result<Vec<crate::metrics::LayerDistance>> {
    let net = cmd.net.network()?;
    let pre = PreprocSpec::for_network(&net);
    let load_set = |dir: &Path| -> Result<Vec<Tensor<f32>>> {
        let paths = list_images(dir)?;
        if paths.is_empty() {
            return Err(Error::InvalidConfig(format!("{} contains no images", dir.display())));
        }
        paths.iter().map(|p| load_input(p, &pre)).collect()
    };
    let cfg = MetricsConfig {
        layers: cmd.layers.clone(),
        tap: tap(cmd.tap),
        normalizer: normalizer(cmd.normalizer),
        aggregation: match cmd.aggregation {
            AggregationArg::Paired => Aggregation::Paired,
            AggregationArg::AllPairs => Aggregation::AllPairs,
            AggregationArg::MeanCovariance => Aggregation::MeanCovariance,
        },
    };
    let report = coral_distances(&net, &load_set(&cmd.set_a)?, &load_set(&cmd.set_b)?, &cfg)?;
    let mut text = String::new();
    for r in &report {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    emit(cmd.out.as_deref(), &text)?;
    Ok(report)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub feat: f64,
    pub coral: f64,
    pub output: PathBuf,
}

pub fn cmd_sweep(cmd: &SweepCmd) -> Result<Vec<SweepRecord>> {
    let net = cmd.net.network()?;
    let pre = PreprocSpec::for_network(&net);
    let cfg = cmd.synth.config(cmd.synth.seed)?;
    let content = load_input(&cmd.content, &pre)?;
    let style = load_input(&cmd.style, &pre)?;
    let points = Synthesizer::new(&net, cfg)?.sweep_lambda(&content, &style, &cmd.lambdas)?;
    std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::io(&cmd.out_dir, e))?;
    let mut records = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let output = cmd.out_dir.join(format!("{i:02}_lambda_{:e}.png", p.lambda));
        save_image(&pre.deprocess(&p.image), &output)?;
        let record = SweepRecord {
            lambda: p.lambda,
            feat: p.feat,
            coral: p.coral,
            output,
        };
        println!("{}", serde_json::to_string(&record)?);
        records.push(record);
    }
    Ok(records)
}

/// `(conv layer, receptive field)` for every conv layer of the preset.
pub fn cmd_rf(cmd: &RfCmd) -> Result<Vec<(String, usize)>> {
    let spec = NetworkSpec::vgg16_narrow(cmd.width_divisor);
    if let Some(path) = &cmd.weights {
        load_weights(path, spec.clone())?;
    }
    let mut rows = Vec::new();
    for layer in spec.layers() {
        if let LayerKind::Conv { .. } = layer.kind {
            rows.push((layer.name.clone(), spec.receptive_field(&layer.name)?));
        }
    }
    let mut text = String::new();
    for (layer, rf) in &rows {
        if cmd.json {
            text.push_str(&serde_json::json!({ "layer": layer, "receptive_field": rf }).to_string());
            text.push('\n');
        } else {
            text.push_str(&format!("{layer}\t{rf}\n"));
        }
    }
    emit(None, &text)?;
    Ok(rows)
}
