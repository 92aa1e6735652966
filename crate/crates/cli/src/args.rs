use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvrec::classifiers::ClassifierKind;
use mvrec::eval::ReportFormat;
use mvrec::geometry::{AugmentCombo, MaskMode};

use crate::config::CONFIG_KEYS;

#[derive(Debug, Parser)]
#[command(
    name = "mvrec",
    version,
    about = "Few-shot defect classification from multi-view region embeddings",
    after_long_help = CONFIG_KEYS
)]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML config file; flags override its values. See `--help` for keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an instance-level manifest from raw annotations.
    #[command(after_long_help = CONFIG_KEYS)]
    DatasetBuild(DatasetBuildArgs),
    /// Write the views file for every instance of a manifest.
    #[command(after_long_help = CONFIG_KEYS)]
    Views(ViewsArgs),
    /// Check an embedding file against a manifest and views file.
    #[command(after_long_help = CONFIG_KEYS)]
    EmbedValidate(EmbedValidateArgs),
    /// Run N-way K-shot episodes and write result tables.
    #[command(after_long_help = CONFIG_KEYS)]
    Eval(Box<EvalArgs>),
    /// Write averaged instance features and class labels as CSV.
    #[command(after_long_help = CONFIG_KEYS)]
    ExportFeatures(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    /// <root>/<category>/test/<type>/*.png with ground_truth/<type>/<stem>_mask.png
    Mvtec,
    /// CSV with header image,category,class,x,y,w,h
    Bbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Backend {
    /// Read a manifest, views file and embedding file.
    #[default]
    Embeddings,
    /// Generate everything; no files needed.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskModeArg {
    Instance,
    FullForeground,
    None,
}

impl From<MaskModeArg> for MaskMode {
    fn from(m: MaskModeArg) -> Self {
        match m {
            MaskModeArg::Instance => MaskMode::Instance,
            MaskModeArg::FullForeground => MaskMode::FullForeground,
            MaskModeArg::None => MaskMode::None,
        }
    }
}

fn parse_classifier(s: &str) -> Result<ClassifierKind, String> {
    ClassifierKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ClassifierKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown classifier {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    ReportFormat::parse(s).ok_or_else(|| format!("unknown format {s:?}; expected json, csv or text"))
}

fn parse_combo_path(s: &str) -> Result<(AugmentCombo, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected COMBO=PATH")?;
    let combo = AugmentCombo::parse(name).ok_or_else(|| format!("unknown augmentation {name:?}"))?;
    Ok((combo, PathBuf::from(path)))
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    if name.is_empty() {
        return Err("empty variant name".into());
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

#[derive(Debug, Args)]
pub struct DatasetBuildArgs {
    #[arg(long, value_enum, default_value = "mvtec")]
    pub layout: Layout,
    /// Dataset root (mvtec layout).
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Image directory (bbox layout).
    #[arg(long)]
    pub images_root: Option<PathBuf>,
    /// Box annotation CSV (bbox layout).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    /// Split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// 4 or 8.
    #[arg(long)]
    pub connectivity: Option<u8>,
    #[arg(long)]
    pub min_area: Option<u64>,
    #[arg(long)]
    pub min_train_per_class: Option<usize>,
    /// Keep categories that end up with a single class.
    #[arg(long)]
    pub keep_single_class_categories: bool,
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub exclude_types: Option<Vec<String>>,
}

#[derive(Debug, Args, Default)]
pub struct AugmentArgs {
    #[arg(long)]
    pub num_scale: Option<usize>,
    /// 1 or 9.
    #[arg(long)]
    pub num_offset: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub rotation: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub flip: Option<bool>,
    #[arg(long, value_enum)]
    pub mask_mode: Option<MaskModeArg>,
}

#[derive(Debug, Args)]
pub struct ViewsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Views file to write (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize_before_average: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EmbedValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args, Default)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub sigma_inst: Option<f64>,
    #[arg(long)]
    pub sigma_view: Option<f64>,
    #[arg(long)]
    pub synthetic_seed: Option<u64>,
    #[arg(long)]
    pub synthetic_classes: Option<usize>,
    #[arg(long)]
    pub synthetic_instances: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "embeddings")]
    pub backend: Backend,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
    /// Comma-separated classifier names.
    #[arg(long, value_delimiter = ',', value_parser = parse_classifier)]
    pub classifiers: Option<Vec<ClassifierKind>>,
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sharpness while fine-tuning.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Sharpness of the training-free cache models.
    #[arg(long)]
    pub zip_beta: Option<f64>,
    /// Triplet margin.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Triplet weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Report directory (default: paths.output_dir, else ./results).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_format, default_value = "json,csv,text")]
    pub format: Vec<ReportFormat>,
    /// Also run the ablation tables.
    #[arg(long)]
    pub ablation: bool,
    /// Extra embedding file for the region-context table, as NAME=PATH.
    #[arg(long = "variant", value_parser = parse_named_path)]
    pub variants: Vec<(String, PathBuf)>,
    /// Embedding file for one augmentation combination, as COMBO=PATH.
    #[arg(long = "augment-embeddings", value_parser = parse_combo_path)]
    pub augment_embeddings: Vec<(AugmentCombo, PathBuf)>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum, default_value = "embeddings")]
    pub backend: Backend,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
    /// CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}
