//! Batch front-end: grids, importance maps, similarity metrics, convergence
//! reports and synthetic annotators, all from files on disk.

mod error;
mod files;
mod render;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridlab_core::{
    aggregate, build_grids, compare, convergence_many, stimulus_id, synth_annotators, ConvergenceConfig, GridMode,
    Metric, MetricOptions, PipelineParams, Raster, TextBox, DEFAULT_STATIC_N, DEFAULT_TILE_SIZE,
};
use serde_json::{json, Value};

pub use error::{CliError, Result};
pub use files::write_atomic;
pub use render::{convergence_svg, overlay};

#[derive(Debug, Parser)]
#[command(name = "gridlab", version, about = "Static and adaptive grids for chart annotation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a static or adaptive grid for a PNG image.
    Grid(GridArgs),
    /// Average annotations into an importance map (JSON + PNG).
    Aggregate(AggregateArgs),
    /// Compare two importance maps.
    Metrics(MetricsArgs),
    /// Participants needed before the running average matches the full one.
    Converge(ConvergeArgs),
    /// Generate synthetic annotators around a set of true blocks.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Static,
    Adaptive,
}

impl From<ModeArg> for GridMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => GridMode::Static,
            ModeArg::Adaptive => GridMode::Adaptive,
        }
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Input PNG.
    pub image: PathBuf,
    #[arg(long, value_enum, default_value = "adaptive")]
    pub mode: ModeArg,
    /// Output GridSpec JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Overlay PNG; defaults to `<out stem>.overlay.png`.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Solver report JSON (per-region status, objective and timing).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile_size: u32,
    #[arg(long, default_value_t = DEFAULT_STATIC_N)]
    pub static_n: u32,
    /// JSON sidecar `[{"x":..,"y":..,"w":..,"h":..}]`; skips text detection.
    #[arg(long)]
    pub text_boxes: Option<PathBuf>,
    /// Solver budget per region in milliseconds.
    #[arg(long)]
    pub budget_ms: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_block_w: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_block_h: Option<u32>,
    /// Overrides the content-derived stimulus id.
    #[arg(long)]
    pub stimulus_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Directory of annotation JSON files.
    pub annotations: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Output map JSON; the PNG goes next to it unless `--png` is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricOptionArgs {
    /// Threshold both maps at this value before comparing.
    #[arg(long)]
    pub binarize: Option<f64>,
    /// Average-pool both maps by this integer factor first.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub metric_scale: Option<u32>,
    /// SSIM over the whole map as one window.
    #[arg(long)]
    pub global_ssim: bool,
}

impl MetricOptionArgs {
    fn options(&self) -> Result<MetricOptions> {
        if let Some(t) = self.binarize {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Input(format!("--binarize must lie in [0, 1], got {t}")));
            }
        }
        Ok(MetricOptions {
            binarize: self.binarize,
            scale: self.metric_scale,
            global_ssim: self.global_ssim,
        })
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// First map (`.png` or JSON).
    #[arg(long)]
    pub a: PathBuf,
    /// Second map; the reference for KL.
    #[arg(long)]
    pub b: PathBuf,
    /// One metric, a comma list, or `all`.
    #[arg(long, default_value = "all")]
    pub metric: String,
    #[command(flatten)]
    pub options: MetricOptionArgs,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// Directory of annotation JSON files.
    pub annotations: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Expected stimulus id; checked against the spec.
    #[arg(long)]
    pub stimulus: Option<String>,
    #[arg(long, default_value = "all")]
    pub metric: String,
    #[arg(long, default_value_t = gridlab_core::convergence::DEFAULT_ORDERS)]
    pub orders: usize,
    #[arg(long, default_value_t = gridlab_core::convergence::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub options: MetricOptionArgs,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG chart with one curve per metric.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Comma-separated ids of the truly important blocks.
    #[arg(long, value_delimiter = ',', required = true)]
    pub truth: Vec<String>,
    /// Probability of dropping a true block.
    #[arg(long, default_value_t = 0.0)]
    pub flip_in: f64,
    /// Probability of adding each other block.
    #[arg(long, default_value_t = 0.1)]
    pub flip_out: f64,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory; one `<participant>.json` per annotator.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and maps
/// failures to exit codes with a JSON line on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Input(e.to_string().trim().to_owned());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code())
        }
    }
}

/// Runs one command and returns what it prints on stdout.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Grid(a) => cmd_grid(&a),
        Command::Aggregate(a) => cmd_aggregate(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Converge(a) => cmd_converge(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn emit(out: Option<&Path>, body: String) -> Result<String> {
    match out {
        Some(path) => {
            write_atomic(path, body.as_bytes())?;
            Ok(json!({ "written": path }).to_string())
        }
        None => Ok(body.trim_end().to_owned()),
    }
}

/// Grid-shaping parameters as both the CLI and the service derive them.
fn pipeline_params(a: &GridArgs) -> PipelineParams {
    let mut params = PipelineParams {
        tile_size: a.tile_size,
        static_n: a.static_n,
        ..Default::default()
    };
    if let Some(ms) = a.budget_ms {
        params.solver.budget = Some(Duration::from_millis(ms));
    }
    params.solver.max_block_w = a.max_block_w;
    params.solver.max_block_h = a.max_block_h;
    params
}

fn cmd_grid(a: &GridArgs) -> Result<String> {
    let bytes = files::read(&a.image)?;
    let image = Raster::decode_png(&bytes).map_err(|e| CliError::from(e).in_file(&a.image))?;
    let text_boxes = match &a.text_boxes {
        Some(path) => {
            let raw = String::from_utf8(files::read(path)?)
                .map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))?;
            Some(TextBox::parse_sidecar(&raw).map_err(|e| CliError::from(e).in_file(path))?)
        }
        None => None,
    };
    let params = pipeline_params(a);
    let id = match &a.stimulus_id {
        Some(id) if id.trim().is_empty() => return Err(CliError::Input("--stimulus-id must not be empty".into())),
        Some(id) => id.clone(),
        None => stimulus_id(&bytes, &params, text_boxes.as_deref()),
    };
    let build = build_grids(&id, &image, text_boxes, &params)?;
    let mode = GridMode::from(a.mode);
    let spec = match mode {
        GridMode::Static => &build.static_spec,
        GridMode::Adaptive => &build.adaptive.spec,
    };
    let (w, h) = (image.width(), image.height());
    spec.validate_cover(w, h)
        .map_err(|e| CliError::Internal(format!("generated grid fails the cover check: {e}")))?;

    write_atomic(&a.out, pretty(spec)?.as_bytes())?;
    let overlay_path = a.overlay.clone().unwrap_or_else(|| files::sibling(&a.out, "overlay.png"));
    write_atomic(&overlay_path, &overlay(&image, spec).encode_png()?)?;
    if let Some(path) = &a.report {
        let report = json!({
            "stimulus_id": id,
            "mode": mode,
            "blocks": spec.blocks.len(),
            "timed_out": mode == GridMode::Adaptive && build.adaptive.timed_out(),
            "regions": if mode == GridMode::Adaptive { json!(build.adaptive.regions) } else { Value::Null },
            "text_boxes": build.text_boxes,
        });
        write_atomic(path, pretty(&report)?.as_bytes())?;
    }
    Ok(json!({
        "stimulus_id": id,
        "mode": mode,
        "blocks": spec.blocks.len(),
        "timed_out": mode == GridMode::Adaptive && build.adaptive.timed_out(),
        "spec": a.out,
        "overlay": overlay_path,
    })
    .to_string())
}

fn cmd_aggregate(a: &AggregateArgs) -> Result<String> {
    let spec = files::read_spec(&a.spec)?;
    let anns = files::load_annotations(&a.annotations, &spec)?;
    let map = aggregate(&anns, &spec)?;
    write_atomic(&a.out, (map.to_json() + "\n").as_bytes())?;
    let png_path = a.png.clone().unwrap_or_else(|| files::sibling(&a.out, "png"));
    write_atomic(&png_path, &map.encode_png()?)?;
    Ok(json!({
        "stimulus_id": spec.stimulus_id,
        "mode": spec.mode,
        "participants": anns.len(),
        "json": a.out,
        "png": png_path,
    })
    .to_string())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<String> {
    let metrics = Metric::parse_list(&a.metric)?;
    let opts = a.options.options()?;
    let (ma, mb) = (files::read_map(&a.a)?, files::read_map(&a.b)?);
    let mut body = serde_json::Map::new();
    for metric in &metrics {
        let entry = match compare(*metric, &ma, &mb, &opts) {
            Ok(s) => json!({ "raw": s.raw, "similarity01": s.similarity01 }),
            // A lone metric fails outright; in a list the others still report.
            Err(e) if metrics.len() == 1 => return Err(e.into()),
            Err(e @ gridlab_core::Error::UndefinedMetric(_)) => json!({ "undefined": e.to_string() }),
            Err(e) => return Err(e.into()),
        };
        body.insert(metric.to_string(), entry);
    }
    emit(a.out.as_deref(), pretty(&body)?)
}

fn cmd_converge(a: &ConvergeArgs) -> Result<String> {
    let spec = files::read_spec(&a.spec)?;
    if let Some(expected) = &a.stimulus {
        if *expected != spec.stimulus_id {
            return Err(CliError::Input(format!(
                "--stimulus {expected} does not match the grid spec's stimulus {}",
                spec.stimulus_id
            )));
        }
    }
    let metrics = Metric::parse_list(&a.metric)?;
    let anns = files::load_annotations(&a.annotations, &spec)?;
    let cfg = ConvergenceConfig {
        orders: a.orders,
        threshold: a.threshold,
        seed: a.seed,
        metric_options: a.options.options()?,
    };
    let reports = convergence_many(&anns, &spec, &metrics, &cfg)?;
    if let Some(path) = &a.svg {
        write_atomic(path, convergence_svg(&reports).as_bytes())?;
    }
    let body = if reports.len() == 1 {
        pretty(&reports[0])?
    } else {
        pretty(&reports)?
    };
    emit(a.out.as_deref(), body)
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let spec = files::read_spec(&a.spec)?;
    let anns = synth_annotators(&spec, &a.truth, a.flip_in, a.flip_out, a.count, a.seed)?;
    for ann in &anns {
        write_atomic(&a.out.join(format!("{}.json", ann.participant_id)), pretty(ann)?.as_bytes())?;
    }
    Ok(json!({
        "stimulus_id": spec.stimulus_id,
        "mode": spec.mode,
        "annotators": anns.len(),
        "out": a.out,
    })
    .to_string())
}
