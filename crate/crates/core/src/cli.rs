//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::config::{MaskSource, PipelineConfig};
use crate::correlation::SimilaritySource;
use crate::error::{Error, Result};
use crate::evaluation::{parse_components, run_ablation, run_benchmark, DatasetConfig};
use crate::imageio::{encode_label_png, encode_rgb_png, overlay, read_rgb};
use crate::providers::{resolve_provider, ClipBackbone, Provider, RecordingProvider, TensorArchive};
use crate::segmentation::{SegmentOutcome, Segmenter, Vocabulary};

#[derive(Debug, Parser)]
#[command(
    name = "corrseg",
    version,
    about = "Training-free open-vocabulary semantic segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image into the given classes.
    Segment(SegmentArgs),
    /// Evaluate on a dataset, optionally as a cumulative ablation.
    Eval(EvalArgs),
    /// Run the pipeline once and dump every provider output to a fixture
    /// archive for offline replay.
    Extract(ExtractArgs),
}

/// Pipeline settings. Each flag overrides the matching key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// JSON pipeline config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `live`, `fixture:<dir>` or `synthetic`.
    #[arg(long)]
    pub provider: Option<String>,
    /// CLIP backbone.
    #[arg(long, value_parser = ["b16", "l14", "h14"])]
    pub clip: Option<String>,
    /// Similarity source for the attention scores.
    #[arg(long, value_parser = ["clip_qq", "clip_kk", "clip_vv", "clip_qkqk", "dino_qk", "ones"])]
    pub similarity: Option<String>,
    /// Where region masks come from.
    #[arg(long, value_parser = ["sam", "groundtruth", "none"])]
    pub mask_source: Option<String>,
    /// Keep proposals with predicted IoU above this.
    #[arg(long)]
    pub pred_iou_thresh: Option<f32>,
    /// Keep proposals with stability at or above this.
    #[arg(long)]
    pub stability_thresh: Option<f32>,
    /// Prompt points per side.
    #[arg(long)]
    pub points: Option<usize>,
    /// Three masks per prompt point.
    #[arg(long, overrides_with = "no_multimask")]
    pub multimask: bool,
    /// One mask per prompt point.
    #[arg(long, overrides_with = "multimask")]
    pub no_multimask: bool,
    /// DBSCAN radius in cosine distance.
    #[arg(long)]
    pub eps: Option<f64>,
    /// DBSCAN core-point neighbourhood size.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Softmax temperature with value reconstruction.
    #[arg(long)]
    pub tau: Option<f32>,
    /// Sliding window side in pixels.
    #[arg(long)]
    pub window: Option<usize>,
    /// Sliding window stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Resize the short image side to this before inference.
    #[arg(long)]
    pub resize_short: Option<usize>,
    /// Disable region-scoped attention.
    #[arg(long)]
    pub no_sr: bool,
    /// Disable value reconstruction from DINO similarity.
    #[arg(long)]
    pub no_vr: bool,
    /// Disable per-region mode correction.
    #[arg(long)]
    pub no_mc: bool,
    /// Disable plural name variants.
    #[arg(long)]
    pub no_nc: bool,
    /// JSON map of class name to extra name variants.
    #[arg(long)]
    pub plural_map: Option<PathBuf>,
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.provider {
            c.provider = v.clone();
        }
        if let Some(v) = &self.clip {
            c.clip = v.parse::<ClipBackbone>()?;
        }
        if let Some(v) = &self.similarity {
            c.similarity = Some(v.parse::<SimilaritySource>()?);
        }
        if let Some(v) = &self.mask_source {
            c.mask_source = v.parse::<MaskSource>()?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    c.$f = v;
                }
            )*};
        }
        set!(
            pred_iou_thresh,
            stability_thresh,
            points,
            eps,
            samples,
            tau,
            window,
            stride
        );
        if let Some(v) = self.resize_short {
            c.resize_short = Some(v);
        }
        if self.multimask {
            c.multimask = true;
        }
        if self.no_multimask {
            c.multimask = false;
        }
        c.sr &= !self.no_sr;
        c.vr &= !self.no_vr;
        c.mc &= !self.no_mc;
        c.nc &= !self.no_nc;
        if let Some(p) = &self.plural_map {
            c.plural_map = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

/// Class list sources; exactly one is required.
#[derive(Debug, Clone, Default, Args)]
#[group(required = true, multiple = false)]
pub struct VocabularyArgs {
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// JSON array of class names.
    #[arg(long)]
    pub classes_file: Option<PathBuf>,
    /// Take the class list and background settings from a dataset config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

impl VocabularyArgs {
    pub fn resolve(&self) -> Result<Vocabulary> {
        let given = [
            !self.classes.is_empty(),
            self.classes_file.is_some(),
            self.dataset.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(Error::Config(
                "give exactly one of --classes, --classes-file or --dataset".into(),
            ));
        }
        if let Some(path) = &self.dataset {
            return Ok(DatasetConfig::from_json_file(path)?.resolve()?.vocabulary());
        }
        let classes: Vec<String> = match &self.classes_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)?
            }
            None => self.classes.iter().map(|s| s.trim().to_string()).collect(),
        };
        if classes.is_empty() || classes.iter().any(String::is_empty) {
            return Err(Error::Config("class names must be non-empty".into()));
        }
        Ok(Vocabulary::new(classes))
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input image (PNG or JPEG).
    pub image: PathBuf,
    #[command(flatten)]
    pub vocabulary: VocabularyArgs,
    /// Output prefix; defaults to the image stem.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset config (JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluate only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Cumulative ablation over these components, e.g. `sr,vr,mc,nc`.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Output prefix for the report files.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input image (PNG or JPEG).
    pub image: PathBuf,
    #[command(flatten)]
    pub vocabulary: VocabularyArgs,
    /// Archive directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Run a parsed command; returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Extract(a) => cmd_extract(&a),
    }
}

fn config_line(cfg: &PipelineConfig) -> String {
    format!("config: {}\n", serde_json::to_string(cfg).expect("config serializes"))
}

fn shares(outcome: &SegmentOutcome, classes: &[String]) -> String {
    let mut counts = vec![0usize; classes.len()];
    outcome.labels.iter().for_each(|&l| counts[l as usize] += 1);
    let total = outcome.labels.len().max(1) as f64;
    let width = classes.iter().map(String::len).max().unwrap_or(0);
    classes
        .iter()
        .zip(&counts)
        .map(|(c, &n)| format!("{c:<width$}  {:>6.2}%\n", 100.0 * n as f64 / total))
        .collect()
}

fn labels_u8(outcome: &SegmentOutcome, num_classes: usize) -> Result<Vec<u8>> {
    if num_classes > 256 {
        return Err(Error::invalid(format!(
            "{num_classes} classes do not fit an 8-bit label map"
        )));
    }
    Ok(outcome.labels.iter().map(|&l| l as u8).collect())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Write all files or none: everything is encoded up front, and files
/// already written are removed if a later write fails.
fn write_all(files: &[(PathBuf, Vec<u8>)], force: bool) -> Result<()> {
    if !force {
        if let Some((p, _)) = files.iter().find(|(p, _)| p.exists()) {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output exists (use --force)"),
            ));
        }
    }
    for (i, (path, bytes)) in files.iter().enumerate() {
        if let Err(e) = std::fs::write(path, bytes) {
            for (p, _) in &files[..i] {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}

fn segment_with(
    provider: &dyn Provider,
    config: &PipelineConfig,
    vocabulary: &Vocabulary,
    image: &image::RgbImage,
) -> Result<SegmentOutcome> {
    Segmenter::new(provider, config.clone(), vocabulary)?.segment(image, None)
}

pub fn cmd_segment(a: &SegmentArgs) -> Result<String> {
    let config = a.pipeline.resolve()?;
    let vocabulary = a.vocabulary.resolve()?;
    let image = read_rgb(&a.image)?;
    let provider = resolve_provider(&config.provider, config.clip)?;
    let outcome = segment_with(provider.as_ref(), &config, &vocabulary, &image)?;

    let prefix = a.out.clone().unwrap_or_else(|| {
        PathBuf::from(
            a.image
                .file_stem()
                .map(|s| s.to_os_string())
                .unwrap_or_else(|| "out".into()),
        )
    });
    let (h, w) = outcome.labels.dim();
    let labels = labels_u8(&outcome, vocabulary.classes.len())?;
    let flat: Vec<u32> = outcome.labels.iter().copied().collect();
    let echo = serde_json::json!({ "config": config, "classes": vocabulary.classes });
    let files = vec![
        (with_suffix(&prefix, ".labels.png"), encode_label_png(&labels, h, w)?),
        (
            with_suffix(&prefix, ".overlay.png"),
            encode_rgb_png(&overlay(&image, &flat)?)?,
        ),
        (
            with_suffix(&prefix, ".config.json"),
            (serde_json::to_string_pretty(&echo)? + "\n").into_bytes(),
        ),
    ];
    write_all(&files, a.force)?;

    let mut out = config_line(&config);
    for (p, _) in &files {
        out.push_str(&format!("wrote {}\n", p.display()));
    }
    out.push_str(&shares(&outcome, &vocabulary.classes));
    Ok(out)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let config = a.pipeline.resolve()?;
    let dataset = DatasetConfig::from_json_file(&a.dataset)?.resolve()?;
    let provider = resolve_provider(&config.provider, config.clip)?;
    let (json, table) = match &a.ablate {
        Some(list) => {
            let comps = parse_components(list)?;
            let r = run_ablation(&dataset, &config, &comps, provider.as_ref(), a.limit)?;
            (r.to_json(), r.to_table())
        }
        None => {
            let r = run_benchmark(&dataset, &config, provider.as_ref(), a.limit)?;
            (r.to_json(), r.to_table())
        }
    };
    let table = config_line(&config) + &table;
    let files = vec![
        (with_suffix(&a.out, ".json"), json.into_bytes()),
        (with_suffix(&a.out, ".txt"), table.clone().into_bytes()),
    ];
    write_all(&files, a.force)?;
    Ok(table)
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<String> {
    let config = a.pipeline.resolve()?;
    let vocabulary = a.vocabulary.resolve()?;
    if !a.force
        && a.out.is_dir()
        && std::fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .next()
            .is_some()
    {
        return Err(Error::io(
            &a.out,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "directory is not empty (use --force)",
            ),
        ));
    }
    let image = read_rgb(&a.image)?;
    let recorder = RecordingProvider::new(resolve_provider(&config.provider, config.clip)?);
    let outcome = segment_with(&recorder, &config, &vocabulary, &image)?;
    let labels = labels_u8(&outcome, vocabulary.classes.len())?;
    let (h, w) = outcome.labels.dim();

    let mut archive: TensorArchive = recorder.into_archive()?;
    archive.meta.insert("config".into(), serde_json::to_value(&config)?);
    archive.meta.insert(
        "classes".into(),
        Value::Array(vocabulary.classes.iter().cloned().map(Value::from).collect()),
    );
    archive.insert_u8("result/labels", vec![h, w], labels)?;
    archive.write(&a.out, a.force)?;

    let mut out = config_line(&config);
    out.push_str(&format!("wrote {} ({} tensors)\n", a.out.display(), archive.len()));
    out.push_str(&shares(&outcome, &vocabulary.classes));
    Ok(out)
}
