use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tilefuse::detmodel::{parse_detections_jsonl, write_detections_jsonl, DetectionSet, Frame, GtFormat};
use tilefuse::evalkit::{build_report, EvalConfig, Interpolation, CSV_HEADER};
use tilefuse::pipeline::{
    collect_timings, read_ground_truth, run_detect, run_fuse, run_plan, Adapter, PipelineConfig, StageSummary,
};
use tilefuse::raster::{image_dimensions, load_raster, render_annotations, write_raster, Annotation};
use tilefuse::sampler::{verify_coverage, TilePlan};
use tilefuse::synthgen::{mix_dataset, sample_crops, write_crops, CropSampler, CropSpec, DatasetManifest, Provenance};
use tilefuse::{Error, Result};

#[derive(Parser)]
#[command(name = "tilefuse", version, about = "Tiled detection pipeline for very large images")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for tile detection (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan Poisson disk tiles covering an image.
    Plan(PlanArgs),
    /// Run a detector adapter on every tile.
    Detect(DetectArgs),
    /// Remap tile detections to the image and fuse them.
    Fuse(FuseArgs),
    /// Score annotations against ground truth.
    Eval(EvalArgs),
    /// Draw annotations onto an image.
    Render(RenderArgs),
    /// Cut labeled crops from an annotated image.
    Synth(SynthArgs),
    /// Mix real and synthetic samples into one manifest.
    Mix(MixArgs),
}

#[derive(Args)]
struct PlanArgs {
    image: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    tile_w: Option<u32>,
    #[arg(long)]
    tile_h: Option<u32>,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    image: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// `oracle:GTFILE`, a configured adapter name, or a command template with
    /// `{input}` and `{output}` (optionally `NAME=TEMPLATE`).
    #[arg(long)]
    adapter: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Tile-local detection files, fused in the given order.
    #[arg(required = true)]
    detections: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Run NMS inside each tile before remapping.
    #[arg(long)]
    per_tile_nms: bool,
}

#[derive(Args)]
struct EvalArgs {
    annotations: PathBuf,
    ground_truth: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// `jsonl` or `yolo-txt`.
    #[arg(long, default_value = "jsonl")]
    gt_format: GtFormat,
    /// Image whose size normalizes yolo-txt ground truth.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    eleven_point: bool,
    #[arg(long)]
    include_classes_without_gt: bool,
    #[arg(long, default_value_t = 0)]
    true_negatives: u64,
    /// Stage summary files whose elapsed times go into `timings_ms`.
    #[arg(long = "timings", value_name = "SUMMARY")]
    timings: Vec<PathBuf>,
    /// Also write a CSV row with this percentage label (e.g. 0.6-0.4).
    #[arg(long, requires = "percentage")]
    csv: Option<PathBuf>,
    #[arg(long)]
    percentage: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    image: PathBuf,
    annotations: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    image: PathBuf,
    /// Ground truth or fused annotations (JSONL, or yolo-txt by extension).
    labels: PathBuf,
    /// Output directory; receives images/, labels/ and manifest.json.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 640)]
    crop: u32,
    #[arg(long, default_value_t = 1)]
    n_samples: usize,
    #[arg(long, default_value_t = 0.3)]
    min_box_overlap: f64,
    #[arg(long, default_value = "uniform")]
    sampler: CropSampler,
    #[arg(long)]
    keep_background: bool,
}

#[derive(Args)]
struct MixArgs {
    /// Real pool: manifest JSON or a directory with images/ and labels/.
    #[arg(long)]
    real: PathBuf,
    /// Synthetic pool: manifest JSON or a directory with images/ and labels/.
    #[arg(long)]
    synth: PathBuf,
    /// Share of real samples in [0, 1].
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    total: usize,
    #[arg(short, long)]
    output: PathBuf,
}

struct Ctx {
    cfg: PipelineConfig,
    jobs: usize,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn read_detections(path: &Path, frame: Frame) -> Result<DetectionSet> {
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io {
            context: format!("opening {}", path.display()),
            source: e,
        },
    })?;
    parse_detections_jsonl(BufReader::new(f), frame)
}

fn label_format(path: &Path) -> GtFormat {
    if path.extension().is_some_and(|e| e == "txt") {
        GtFormat::YoloTxt
    } else {
        GtFormat::Jsonl
    }
}

fn plan(ctx: &Ctx, a: &PlanArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = ctx.cfg.clone();
    cfg.tile_w = a.tile_w.unwrap_or(cfg.tile_w);
    cfg.tile_h = a.tile_h.unwrap_or(cfg.tile_h);
    cfg.radius = a.radius.or(cfg.radius);
    cfg.validate()?;
    let (w, h) = image_dimensions(&a.image)?;
    let plan = run_plan(w, h, &cfg)?;
    let cov = verify_coverage(&plan);
    plan.write(&a.output)?;
    StageSummary::new("plan", ms(start))
        .count("tiles", plan.tiles.len())
        .count("covered", usize::from(cov.covered))
        .write(&StageSummary::path_for(&a.output))
}

fn detect(ctx: &Ctx, a: &DetectArgs) -> Result<()> {
    let start = Instant::now();
    let plan = TilePlan::read(&a.plan)?;
    let adapter = Adapter::resolve(&a.adapter, &ctx.cfg, plan.image_w, plan.image_h)?;
    let image = if adapter.needs_pixels() {
        Some(load_raster(&a.image)?)
    } else {
        let dims = image_dimensions(&a.image)?;
        if dims != (plan.image_w, plan.image_h) {
            return Err(Error::Config(format!(
                "image is {}x{} but the plan is for {}x{}",
                dims.0, dims.1, plan.image_w, plan.image_h
            )));
        }
        None
    };
    let set = run_detect(image.as_ref(), &plan, &adapter, ctx.jobs)?;
    write_text(&a.output, &write_detections_jsonl(&set))?;
    StageSummary::new("detect", ms(start))
        .count("tiles", plan.tiles.len())
        .count("detections", set.len())
        .write(&StageSummary::path_for(&a.output))
}

fn fuse(ctx: &Ctx, a: &FuseArgs) -> Result<()> {
    let start = Instant::now();
    let plan = TilePlan::read(&a.plan)?;
    let inputs = a
        .detections
        .iter()
        .map(|p| read_detections(p, Frame::TileLocal))
        .collect::<Result<Vec<_>>>()?;
    let out = run_fuse(&plan, &inputs, &ctx.cfg.fusion, a.per_tile_nms)?;
    write_text(&a.output, &write_detections_jsonl(&out.set))?;
    StageSummary::new("fuse", ms(start))
        .count("input_detections", out.input_detections)
        .count("dropped_outside", out.dropped_outside)
        .count("fused", out.set.len())
        .write(&StageSummary::path_for(&a.output))
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let dets = read_detections(&a.annotations, Frame::Global)?;
    let (w, h) = match (&a.image, a.gt_format) {
        (Some(img), _) => image_dimensions(img)?,
        (None, GtFormat::YoloTxt) => {
            return Err(Error::Config("yolo-txt ground truth needs --image".into()))
        }
        (None, GtFormat::Jsonl) => (0, 0),
    };
    let gts = read_ground_truth(&a.ground_truth, a.gt_format, w, h)?;
    let cfg = EvalConfig {
        iou_threshold: a.iou_threshold.unwrap_or(ctx.cfg.iou_threshold),
        interpolation: if a.eleven_point {
            Interpolation::ElevenPoint
        } else {
            Interpolation::AllPoints
        },
        include_classes_without_gt: a.include_classes_without_gt,
        true_negatives: a.true_negatives,
    };
    let timings: BTreeMap<String, f64> = collect_timings(&a.timings)?;
    let report = build_report(&dets, &gts, &cfg, &timings)?;
    write_text(&a.output, &report.to_json())?;
    if let (Some(csv), Some(pct)) = (&a.csv, &a.percentage) {
        write_text(csv, &format!("{CSV_HEADER}\n{}\n", report.csv_row(pct)))?;
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let raster = load_raster(&a.image)?;
    let dets = read_detections(&a.annotations, Frame::Global)?;
    let boxes: Vec<Annotation> = dets
        .items
        .iter()
        .map(|d| Annotation {
            bbox: d.bbox,
            class_id: d.class_id,
            score: Some(d.score),
        })
        .collect();
    write_raster(&render_annotations(&raster, &boxes), &a.output)
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let raster = load_raster(&a.image)?;
    let labels = read_ground_truth(&a.labels, label_format(&a.labels), raster.width(), raster.height())?;
    let spec = CropSpec {
        crop_w: a.crop,
        crop_h: a.crop,
        n_samples: a.n_samples,
        min_box_overlap: a.min_box_overlap,
        seed: ctx.cfg.seed,
        sampler: a.sampler,
        keep_background: a.keep_background,
    };
    let crops = sample_crops(&raster, &labels, &spec)?;
    let manifest = write_crops(&crops, &a.output, spec.seed)?;
    manifest.write(&a.output.join("manifest.json"))
}

fn load_pool(path: &Path, provenance: Provenance) -> Result<DatasetManifest> {
    if path.is_dir() {
        DatasetManifest::from_dir(path, provenance)
    } else if path.exists() {
        DatasetManifest::read(path)
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

fn mix(ctx: &Ctx, a: &MixArgs) -> Result<()> {
    let real = load_pool(&a.real, Provenance::Real)?;
    let synth = load_pool(&a.synth, Provenance::Synthetic)?;
    let m = mix_dataset(&real, &synth, a.ratio, a.total, ctx.cfg.seed)?;
    m.write(&a.output)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let jobs = match cli.jobs {
        Some(0) => return Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = Ctx { cfg, jobs };
    match &cli.cmd {
        Cmd::Plan(a) => plan(&ctx, a),
        Cmd::Detect(a) => detect(&ctx, a),
        Cmd::Fuse(a) => fuse(&ctx, a),
        Cmd::Eval(a) => eval(&ctx, a),
        Cmd::Render(a) => render(a),
        Cmd::Synth(a) => synth(&ctx, a),
        Cmd::Mix(a) => mix(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
