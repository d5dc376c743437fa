//! Command-line front end. Flags given on the command line win over values
//! from `--config`, which win over the per-layout preset, which wins over
//! built-in defaults.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::{GrayImage, RgbImage};

use crate::data::{
    binarize_mask, index_dataset, load_samples, rgb_to_tensor, split_dataset, DatasetSpec, Layout,
    Sample, Size,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    load_checkpoint, parse_list, AttentionKind, LayerReport, Model, ModelConfig, DOWNSAMPLE,
};
use crate::tensor::{bilinear_resize, LabelMap};
use crate::train::{gradcheck, train, Gradcheck, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "npnet",
    version,
    about = "Non-pooling segmentation network: train, evaluate, analyze"
)]
struct Cli {
    /// TOML file of flag values (keys are flag names); command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the seeded train split and write a checkpoint.
    Train(TrainCmd),
    /// Score a checkpoint on the seeded test split.
    Eval(EvalCmd),
    /// Segment one image.
    Predict(PredictCmd),
    /// Per-layer parameter and MAC breakdown.
    Analyze(AnalyzeCmd),
    /// Train and score the no-attention, SE and CAM variants with shared seed and data.
    Ablate(AblateCmd),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckCmd),
}

#[derive(Debug, Clone, Copy)]
struct Widths([usize; 3]);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_list(s).map(Widths)
    }
}

#[derive(Debug, Args, Default)]
struct DataArgs {
    /// Dataset root.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Folder convention; also selects the learning-rate/batch/size preset.
    #[arg(long)]
    layout: Option<Layout>,
    /// Resize every sample to WxH (both divisible by 8).
    #[arg(long, value_name = "WxH")]
    target_size: Option<Size>,
    /// Fraction of samples in the train split.
    #[arg(long)]
    split_fraction: Option<f64>,
    /// Seed of the train/test split.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    /// Channel widths of the three basic blocks.
    #[arg(long, value_name = "A,B,C")]
    widths: Option<Widths>,
    /// Attention bottleneck reduction ratio.
    #[arg(long)]
    reduction: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for weight init and batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Also checkpoint every K epochs.
    #[arg(long, value_name = "K")]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    attention: Option<AttentionKind>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append `epoch<TAB>mean_loss<TAB>seconds` lines here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Write the per-image TSV report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictCmd {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Binary mask PNG (0 / 255), at the input image's size.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input with the foreground blended in red at alpha 0.5.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Network input size; defaults to the image's own size.
    #[arg(long, value_name = "WxH")]
    target_size: Option<Size>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Tsv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
struct AnalyzeCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    attention: Option<AttentionKind>,
    #[arg(long, value_name = "WxH")]
    input_size: Option<Size>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct AblateCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Write the comparison table here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckCmd {
    #[arg(long)]
    seed: Option<u64>,
}

/// Published learning rate, batch size and input size per dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub learning_rate: f32,
    pub batch_size: usize,
    /// `None` keeps native size.
    pub target_size: Option<Size>,
}

pub fn preset(layout: Layout) -> Preset {
    match layout {
        // Native CVC-ClinicDB frames are 384x288.
        Layout::Cvc => Preset {
            learning_rate: 1e-4,
            batch_size: 2,
            target_size: None,
        },
        Layout::Skin => Preset {
            learning_rate: 1e-3,
            batch_size: 4,
            target_size: Some(Size::new(224, 224)),
        },
        // Native lung slices are 512x512.
        Layout::Luna => Preset {
            learning_rate: 1e-3,
            batch_size: 2,
            target_size: None,
        },
        Layout::Generic => Preset {
            learning_rate: 1e-3,
            batch_size: 2,
            target_size: None,
        },
    }
}

/// Values from a `--config` file. Every key must be consumed by the command.
struct ConfigFile {
    path: PathBuf,
    table: toml::Table,
    used: Vec<String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Option<Self>> {
        let Some(path) = path else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        let table = table
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        Ok(Some(ConfigFile {
            path: path.to_path_buf(),
            table,
            used: Vec::new(),
        }))
    }

    fn fill<T: FromStr>(&mut self, slot: &mut Option<T>, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        self.used.push(key.to_string());
        if slot.is_some() {
            return Ok(());
        }
        let Some(value) = self.table.get(key) else {
            return Ok(());
        };
        let text = match value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        let parsed = text.parse().map_err(|e: T::Err| {
            Error::InvalidArgument(format!("config {}: key {key}: {e}", self.path.display()))
        })?;
        *slot = Some(parsed);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<_> = self
            .table
            .keys()
            .filter(|k| !self.used.contains(k))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "config {}: unknown keys {}",
                self.path.display(),
                unknown.join(", ")
            )))
        }
    }
}

fn fill_from<T: FromStr>(
    config: &mut Option<ConfigFile>,
    slot: &mut Option<T>,
    key: &str,
) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    match config {
        Some(c) => c.fill(slot, key),
        None => Ok(()),
    }
}

impl DataArgs {
    fn merge(&mut self, cfg: &mut Option<ConfigFile>) -> Result<()> {
        fill_from(cfg, &mut self.data_dir, "data_dir")?;
        fill_from(cfg, &mut self.layout, "layout")?;
        fill_from(cfg, &mut self.target_size, "target_size")?;
        fill_from(cfg, &mut self.split_fraction, "split_fraction")?;
        fill_from(cfg, &mut self.split_seed, "split_seed")
    }

    fn layout(&self) -> Layout {
        self.layout.unwrap_or(Layout::Generic)
    }

    fn spec(&self) -> Result<DatasetSpec> {
        let root = self
            .data_dir
            .clone()
            .ok_or_else(|| usage("--data-dir is required"))?;
        let layout = self.layout();
        let mut spec = DatasetSpec::new(root, layout);
        spec.target_size = self.target_size.or(preset(layout).target_size);
        spec.split_fraction = self.split_fraction.unwrap_or(0.8);
        spec.split_seed = self.split_seed.unwrap_or(0);
        spec.validate()?;
        Ok(spec)
    }

    /// Indexes, splits and decodes the dataset; warnings go to stderr.
    fn load(&self) -> Result<(DatasetSpec, Vec<Sample>, Vec<Sample>)> {
        let spec = self.spec()?;
        let index = index_dataset(&spec)?;
        for w in &index.warnings {
            eprintln!("warning: {w}");
        }
        let (train, test) = split_dataset(&index.records, spec.split_fraction, spec.split_seed)?;
        let (train, test) = (load_samples(&train, &spec)?, load_samples(&test, &spec)?);
        Ok((spec, train, test))
    }
}

impl ModelArgs {
    fn merge(&mut self, cfg: &mut Option<ConfigFile>) -> Result<()> {
        fill_from(cfg, &mut self.widths, "widths")?;
        fill_from(cfg, &mut self.reduction, "reduction")
    }

    fn config(&self, attention: Option<AttentionKind>) -> ModelConfig {
        let mut c = ModelConfig::default();
        if let Some(Widths(w)) = self.widths {
            c.widths = w;
        }
        if let Some(r) = self.reduction {
            c.reduction = r;
        }
        if let Some(a) = attention {
            c.attention = a;
        }
        c
    }
}

impl TrainArgs {
    fn merge(&mut self, cfg: &mut Option<ConfigFile>) -> Result<()> {
        fill_from(cfg, &mut self.epochs, "epochs")?;
        fill_from(cfg, &mut self.lr, "lr")?;
        fill_from(cfg, &mut self.batch_size, "batch_size")?;
        fill_from(cfg, &mut self.seed, "seed")?;
        fill_from(cfg, &mut self.checkpoint_every, "checkpoint_every")
    }

    fn config(&self, layout: Layout) -> TrainConfig {
        let p = preset(layout);
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.lr.unwrap_or(p.learning_rate),
            batch_size: self.batch_size.unwrap_or(p.batch_size),
            seed: self.seed.unwrap_or(d.seed),
            checkpoint_every: self.checkpoint_every,
            ..d
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::InvalidConfig(_) => EXIT_USAGE,
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        Error::Shape { .. }
        | Error::ClassOutOfRange { .. }
        | Error::Checkpoint { .. }
        | Error::Data(_)
        | Error::Image { .. }
        | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let mut cfg = ConfigFile::load(cli.config.as_deref())?;
    let code = match cli.command {
        Command::Train(mut c) => {
            c.data.merge(&mut cfg)?;
            c.model.merge(&mut cfg)?;
            c.train.merge(&mut cfg)?;
            fill_from(&mut cfg, &mut c.attention, "attention")?;
            fill_from(&mut cfg, &mut c.out, "out")?;
            fill_from(&mut cfg, &mut c.log, "log")?;
            finish(cfg)?;
            cmd_train(c)?
        }
        Command::Eval(mut c) => {
            fill_from(&mut cfg, &mut c.ckpt, "ckpt")?;
            c.data.merge(&mut cfg)?;
            fill_from(&mut cfg, &mut c.report, "report")?;
            finish(cfg)?;
            cmd_eval(c)?
        }
        Command::Predict(mut c) => {
            fill_from(&mut cfg, &mut c.ckpt, "ckpt")?;
            fill_from(&mut cfg, &mut c.input, "input")?;
            fill_from(&mut cfg, &mut c.out, "out")?;
            fill_from(&mut cfg, &mut c.overlay, "overlay")?;
            fill_from(&mut cfg, &mut c.target_size, "target_size")?;
            finish(cfg)?;
            cmd_predict(c)?
        }
        Command::Analyze(mut c) => {
            c.model.merge(&mut cfg)?;
            fill_from(&mut cfg, &mut c.attention, "attention")?;
            fill_from(&mut cfg, &mut c.input_size, "input_size")?;
            fill_from(&mut cfg, &mut c.format, "format")?;
            finish(cfg)?;
            cmd_analyze(c)?
        }
        Command::Ablate(mut c) => {
            c.data.merge(&mut cfg)?;
            c.model.merge(&mut cfg)?;
            c.train.merge(&mut cfg)?;
            fill_from(&mut cfg, &mut c.report, "report")?;
            finish(cfg)?;
            cmd_ablate(c)?
        }
        Command::Gradcheck(mut c) => {
            fill_from(&mut cfg, &mut c.seed, "seed")?;
            finish(cfg)?;
            cmd_gradcheck(c)?
        }
    };
    Ok(code)
}

fn finish(cfg: Option<ConfigFile>) -> Result<()> {
    cfg.map_or(Ok(()), ConfigFile::finish)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_train(c: TrainCmd) -> Result<i32> {
    let out = c.out.clone().ok_or_else(|| usage("--out is required"))?;
    let model_cfg = c.model.config(c.attention);
    model_cfg.validate()?;
    let mut train_cfg = c.train.config(c.data.layout());
    train_cfg.validate()?;
    train_cfg.checkpoint_path = Some(out.clone());
    let (_, samples, _) = c.data.load()?;
    eprintln!(
        "training on {} samples: lr {}, batch {}, {} epochs",
        samples.len(),
        train_cfg.learning_rate,
        train_cfg.batch_size,
        train_cfg.epochs
    );
    let mut model = Model::new(model_cfg, train_cfg.seed)?;
    let mut sink = EpochSink::open(c.log.as_deref())?;
    train(&mut model, &samples, &train_cfg, Some(&mut sink))?;
    eprintln!("wrote checkpoint {}", out.display());
    Ok(EXIT_OK)
}

/// Echoes epoch lines to stdout and appends them to the optional log file.
struct EpochSink {
    log: Option<std::fs::File>,
}

impl EpochSink {
    fn open(path: Option<&Path>) -> Result<Self> {
        let log = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p)
                        .map_err(|e| Error::io(p, e))?,
                )
            }
            None => None,
        };
        Ok(EpochSink { log })
    }
}

impl Write for EpochSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stdout().write_all(buf)?;
        if let Some(f) = &mut self.log {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stdout().flush()?;
        self.log.as_mut().map_or(Ok(()), |f| f.flush())
    }
}

fn cmd_eval(c: EvalCmd) -> Result<i32> {
    let ckpt = c
        .ckpt
        .as_deref()
        .ok_or_else(|| usage("--ckpt is required"))?;
    let model = load_checkpoint(ckpt)?;
    let (_, _, test) = c.data.load()?;
    let report = evaluate(&model, &test)?;
    print_summary(&report);
    if let Some(path) = &c.report {
        write_file(path, &report.to_tsv())?;
    }
    Ok(EXIT_OK)
}

fn print_summary(r: &MetricsReport) {
    println!("images\t{}", r.images.len());
    println!("mean\tiou {:.4}\tdice {:.4}", r.mean_iou, r.mean_dice);
    println!("pooled\tiou {:.4}\tdice {:.4}", r.pooled_iou, r.pooled_dice);
}

fn cmd_predict(c: PredictCmd) -> Result<i32> {
    let ckpt = c
        .ckpt
        .as_deref()
        .ok_or_else(|| usage("--ckpt is required"))?;
    let input = c
        .input
        .as_deref()
        .ok_or_else(|| usage("--input is required"))?;
    let out = c.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    if let Some(s) = c.target_size {
        if s.h % DOWNSAMPLE != 0 || s.w % DOWNSAMPLE != 0 {
            return Err(usage(format!(
                "--target-size {s} must be divisible by {DOWNSAMPLE}"
            )));
        }
    }
    let model = load_checkpoint(ckpt)?;
    let rgb = image::open(input)
        .map_err(|source| Error::Image {
            path: input.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let native = Size::new(rgb.height() as usize, rgb.width() as usize);
    let size = c.target_size.unwrap_or(native);
    let x = bilinear_resize(&rgb_to_tensor(&rgb), size.h, size.w)?;
    let pred = LabelMap::argmax(&model.forward(&x).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::Data(format!("{}: {detail}", input.display())),
        other => other,
    })?);
    let mask = mask_image(&pred, size, native);
    save_png(&mask, out)?;
    if let Some(path) = &c.overlay {
        save_png(&overlay(&rgb, &mask), path)?;
    }
    let fg = mask.pixels().filter(|p| p[0] == 255).count();
    println!(
        "foreground\t{fg}\t{:.4}",
        fg as f64 / (native.h * native.w) as f64
    );
    Ok(EXIT_OK)
}

/// Label map at network size rendered as 0 / 255 at the original image size.
fn mask_image(pred: &LabelMap, size: Size, native: Size) -> GrayImage {
    let small = GrayImage::from_fn(size.w as u32, size.h as u32, |x, y| {
        image::Luma([if pred.data()[y as usize * size.w + x as usize] == 1 {
            255
        } else {
            0
        }])
    });
    let labels = binarize_mask(&small, native);
    GrayImage::from_fn(native.w as u32, native.h as u32, |x, y| {
        image::Luma([if labels.data()[y as usize * native.w + x as usize] == 1 {
            255
        } else {
            0
        }])
    })
}

const OVERLAY_ALPHA: f32 = 0.5;

/// Foreground pixels blended toward pure red; background left as is.
fn overlay(rgb: &RgbImage, mask: &GrayImage) -> RgbImage {
    RgbImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y);
        if mask.get_pixel(x, y)[0] == 0 {
            return *p;
        }
        let red = [255.0, 0.0, 0.0];
        image::Rgb(std::array::from_fn(|c| {
            ((1.0 - OVERLAY_ALPHA) * p[c] as f32 + OVERLAY_ALPHA * red[c]).round() as u8
        }))
    })
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Renders the analyzer output. Totals equal `count_params` and `count_macs`.
pub fn analyze_report(model: &Model, size: Size, tsv: bool) -> Result<String> {
    let layers = model.layer_report(size.h, size.w)?;
    let params = model.count_params();
    let macs = model.count_macs(size.h, size.w)?;
    let mut out = String::new();
    if tsv {
        out.push_str(
            "layer\tkind\tin\tout\tkernel\tstride\tdilation\tout_h\tout_w\tparams\tmacs\n",
        );
        for l in &layers {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                l.name,
                l.kind.as_str(),
                l.in_channels,
                l.out_channels,
                l.kernel,
                l.stride,
                l.dilation,
                l.out_hw.0,
                l.out_hw.1,
                l.params,
                l.macs
            )
            .unwrap();
        }
        writeln!(out, "TOTAL\t\t\t\t\t\t\t\t\t{params}\t{macs}").unwrap();
        return Ok(out);
    }
    let width = layers
        .iter()
        .map(|l| l.name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    writeln!(
        out,
        "{:width$}  {:5}  {:>5}  {:>5}  {:>6}  {:>6}  {:>8}  {:>9}  {:>13}",
        "layer", "kind", "in", "out", "k/s/d", "size", "", "params", "MACs"
    )
    .unwrap();
    for l in &layers {
        writeln!(out, "{}", table_row(l, width)).unwrap();
    }
    writeln!(out, "input {size}, attention {}", model.config().attention).unwrap();
    writeln!(out, "total params {params} ({:.3} M)", params as f64 / 1e6).unwrap();
    writeln!(out, "total MACs {macs} ({:.3} G)", macs as f64 / 1e9).unwrap();
    Ok(out)
}

fn table_row(l: &LayerReport, width: usize) -> String {
    let ksd = if l.kernel == 0 {
        String::new()
    } else {
        format!("{}/{}/{}", l.kernel, l.stride, l.dilation)
    };
    format!(
        "{:width$}  {:5}  {:>5}  {:>5}  {:>6}  {:>6}  {:>8}  {:>9}  {:>13}",
        l.name,
        l.kind.as_str(),
        l.in_channels,
        l.out_channels,
        ksd,
        format!("{}x{}", l.out_hw.1, l.out_hw.0),
        "",
        l.params,
        l.macs
    )
}

fn cmd_analyze(c: AnalyzeCmd) -> Result<i32> {
    let cfg = c.model.config(c.attention);
    let model = Model::new(cfg, 0)?;
    let size = c.input_size.unwrap_or(Size::new(224, 224));
    print!(
        "{}",
        analyze_report(&model, size, c.format == Some(Format::Tsv))?
    );
    Ok(EXIT_OK)
}

/// One row per attention variant: `no`, `senet`, `cam`.
pub fn ablation_table(rows: &[(AttentionKind, MetricsReport)]) -> String {
    let mut out = String::from("attention\tIOU\tDice\n");
    for (kind, r) in rows {
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}",
            kind.ablation_label(),
            r.mean_iou,
            r.mean_dice
        )
        .unwrap();
    }
    out
}

fn cmd_ablate(c: AblateCmd) -> Result<i32> {
    let train_cfg = c.train.config(c.data.layout());
    train_cfg.validate()?;
    let (_, train_set, test_set) = c.data.load()?;
    let mut rows = Vec::new();
    for kind in AttentionKind::ALL {
        let cfg = c.model.config(Some(kind));
        cfg.validate()?;
        let mut model = Model::new(cfg, train_cfg.seed)?;
        eprintln!("ablation: training attention={kind}");
        train(&mut model, &train_set, &train_cfg, None)?;
        rows.push((kind, evaluate(&model, &test_set)?));
    }
    let table = ablation_table(&rows);
    print!("{table}");
    if let Some(path) = &c.report {
        write_file(path, &table)?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(c: GradcheckCmd) -> Result<i32> {
    let report = gradcheck(&Gradcheck::new(c.seed.unwrap_or(0)))?;
    print!("{}", report.to_text());
    if report.passed() {
        println!("all operators pass");
        Ok(EXIT_OK)
    } else {
        println!("gradient check FAILED");
        Ok(EXIT_NUMERIC)
    }
}
