//! Stage orchestration behind the `tilefuse` binary: configuration, the
//! detector adapter protocol, tile fan-out and stage summaries.
//!
//! An external adapter is a command template such as
//! `yolo-detect --weights m.pt {input} {output}`. For every tile the window is
//! written to a temporary PNG, `{input}` and `{output}` are substituted, and
//! the command runs without a shell. It must exit 0 and leave tile-local JSONL
//! at `{output}`; a missing output file counts as zero detections. Per line,
//! `source` and `tile_id` are optional and overwritten by the runner.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detmodel::{
    parse_ground_truth, remap_set, Detection, DetectionSet, Frame, GroundTruth, GtFormat,
};
use crate::error::{Error, Result};
use crate::evalkit::DEFAULT_IOU_THRESHOLD;
use crate::fusion::{ensemble_fuse, nms_per_tile, FusionConfig};
use crate::geometry::{BBox, TileWindow};
use crate::raster::{read_window, write_raster, Raster};
use crate::sampler::{default_radius, plan_tiles, PoissonConfig, TilePlan, DEFAULT_K};

pub const DEFAULT_TILE: u32 = 640;
pub const ORACLE_PREFIX: &str = "oracle:";
pub const ORACLE_SOURCE: &str = "oracle";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub name: String,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tile_w: u32,
    pub tile_h: u32,
    /// Poisson disk radius; `None` means `min(tile_w, tile_h) / 2`.
    pub radius: Option<f64>,
    pub k: u32,
    pub seed: u64,
    pub fusion: FusionConfig,
    pub iou_threshold: f64,
    pub adapters: Vec<AdapterSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tile_w: DEFAULT_TILE,
            tile_h: DEFAULT_TILE,
            radius: None,
            k: DEFAULT_K,
            seed: 0,
            fusion: FusionConfig::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            adapters: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_w == 0 || self.tile_h == 0 {
            return Err(Error::Config(format!(
                "tile size {}x{} must be nonempty",
                self.tile_w, self.tile_h
            )));
        }
        self.poisson()?;
        self.fusion.validate()?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        for a in &self.adapters {
            check_template(&a.command)?;
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        self.radius
            .unwrap_or_else(|| default_radius(self.tile_w, self.tile_h))
    }

    pub fn poisson(&self) -> Result<PoissonConfig> {
        PoissonConfig::new(self.radius(), self.k, self.seed)
    }
}

fn check_template(template: &str) -> Result<Vec<String>> {
    let argv = shlex::split(template)
        .ok_or_else(|| Error::Config(format!("unbalanced quoting in {template:?}")))?;
    if argv.is_empty() {
        return Err(Error::Config("empty adapter command".into()));
    }
    for p in ["{input}", "{output}"] {
        if !template.contains(p) {
            return Err(Error::Config(format!("adapter command {template:?} lacks {p}")));
        }
    }
    Ok(argv)
}

/// Tile plan for an image of the given size.
pub fn run_plan(image_w: u32, image_h: u32, cfg: &PipelineConfig) -> Result<TilePlan> {
    plan_tiles(image_w, image_h, cfg.tile_w, cfg.tile_h, &cfg.poisson()?)
}

#[derive(Debug, Clone)]
pub enum Adapter {
    /// Emits, for every tile, each ground-truth box that overlaps it, in tile
    /// coordinates and unclipped, with score 1.
    Oracle { gts: Vec<GroundTruth> },
    External { name: String, argv: Vec<String> },
}

impl Adapter {
    /// Resolves `oracle:GTFILE`, the name of a configured adapter, or an
    /// inline command template. `NAME=TEMPLATE` names an inline template;
    /// a bare template is named `external`.
    pub fn resolve(spec: &str, cfg: &PipelineConfig, image_w: u32, image_h: u32) -> Result<Self> {
        if let Some(path) = spec.strip_prefix(ORACLE_PREFIX) {
            let path = Path::new(path);
            let format = if path.extension().is_some_and(|e| e == "txt") {
                GtFormat::YoloTxt
            } else {
                GtFormat::Jsonl
            };
            let gts = read_ground_truth(path, format, image_w, image_h)?;
            return Ok(Adapter::Oracle { gts });
        }
        if let Some(a) = cfg.adapters.iter().find(|a| a.name == spec) {
            return Self::external(&a.name, &a.command);
        }
        match spec.split_once('=') {
            Some((name, template)) if !name.is_empty() && !name.contains(char::is_whitespace) => {
                Self::external(name, template)
            }
            _ if spec.contains("{input}") => Self::external("external", spec),
            _ => Err(Error::Config(format!(
                "adapter {spec:?} is neither oracle:FILE, a configured name, nor a command template"
            ))),
        }
    }

    pub fn external(name: &str, template: &str) -> Result<Self> {
        Ok(Adapter::External {
            name: name.to_string(),
            argv: check_template(template)?,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Adapter::Oracle { .. } => ORACLE_SOURCE,
            Adapter::External { name, .. } => name,
        }
    }

    pub fn needs_pixels(&self) -> bool {
        matches!(self, Adapter::External { .. })
    }
}

pub fn read_ground_truth(path: &Path, format: GtFormat, image_w: u32, image_h: u32) -> Result<Vec<GroundTruth>> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::io(format!("opening {}", path.display()), e),
    })?;
    parse_ground_truth(BufReader::new(file), format, image_w, image_h)
}

fn oracle_tile(gts: &[GroundTruth], tile: &TileWindow) -> Result<Vec<Detection>> {
    let frame = tile.as_bbox();
    let (dx, dy) = (-f64::from(tile.x0), -f64::from(tile.y0));
    gts.iter()
        .filter(|g| g.bbox.intersection(&frame).is_some())
        .map(|g| {
            let local = g.bbox.translate(dx, dy)?;
            Ok(Detection::new(local, g.class_id, 1.0, ORACLE_SOURCE)?.with_tile(tile.id))
        })
        .collect()
}

#[derive(Deserialize)]
struct AdapterLine {
    class_id: u32,
    score: f64,
    bbox: [f64; 4],
}

fn parse_adapter_output(path: &Path, tile_id: u32, source: &str) -> Result<Vec<Detection>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: AdapterLine =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?;
        let det = BBox::try_from(raw.bbox)
            .and_then(|b| Detection::new(b, raw.class_id, raw.score, source))
            .map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?;
        out.push(det.with_tile(tile_id));
    }
    Ok(out)
}

fn external_tile(
    name: &str,
    argv: &[String],
    image: &Raster,
    tile: &TileWindow,
    workdir: &Path,
) -> Result<Vec<Detection>> {
    let input = workdir.join(format!("tile_{}.png", tile.id));
    let output = workdir.join(format!("tile_{}.jsonl", tile.id));
    write_raster(&read_window(image, tile)?, &input)?;
    let subst = |s: &String| {
        s.replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy())
    };
    let run = Command::new(subst(&argv[0]))
        .args(argv[1..].iter().map(subst))
        .stdin(Stdio::null())
        .output();
    let out = match run {
        Ok(o) => o,
        Err(e) => {
            return Err(Error::AdapterFailed {
                tile_id: tile.id,
                code: None,
                stderr: format!("cannot start {:?}: {e}", argv[0]),
            })
        }
    };
    if !out.status.success() {
        return Err(Error::AdapterFailed {
            tile_id: tile.id,
            code: out.status.code(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    let dets = parse_adapter_output(&output, tile.id, name).map_err(|e| Error::InTile {
        tile_id: tile.id,
        source: Box::new(e),
    })?;
    // keep the temp dir small on big plans
    let _ = fs::remove_file(&input);
    let _ = fs::remove_file(&output);
    Ok(dets)
}

/// Runs `adapter` on every tile with up to `jobs` workers. The result lists
/// tiles in ascending id order whatever order the workers finish in; when
/// several tiles fail, the lowest tile id is reported.
pub fn run_detect(image: Option<&Raster>, plan: &TilePlan, adapter: &Adapter, jobs: usize) -> Result<DetectionSet> {
    plan.validate()?;
    let workdir = tempfile::Builder::new()
        .prefix("tilefuse-detect-")
        .tempdir()
        .map_err(|e| Error::io("creating temp dir", e))?;
    let raster = match (adapter, image) {
        (Adapter::External { .. }, Some(r)) => {
            if (r.width(), r.height()) != (plan.image_w, plan.image_h) {
                return Err(Error::Config(format!(
                    "image is {}x{} but the plan is for {}x{}",
                    r.width(),
                    r.height(),
                    plan.image_w,
                    plan.image_h
                )));
            }
            Some(r)
        }
        (Adapter::External { .. }, None) => {
            return Err(Error::Config("external adapters need the image".into()))
        }
        (Adapter::Oracle { .. }, _) => None,
    };
    let one = |tile: &TileWindow| -> Result<Vec<Detection>> {
        match adapter {
            Adapter::Oracle { gts } => oracle_tile(gts, tile),
            Adapter::External { name, argv } => {
                external_tile(name, argv, raster.expect("checked above"), tile, workdir.path())
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_tile: Vec<Result<Vec<Detection>>> = pool.install(|| plan.tiles.par_iter().map(one).collect());
    let mut items = Vec::new();
    for r in per_tile {
        items.extend(r?);
    }
    Ok(DetectionSet { frame: Frame::TileLocal, items })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOutcome {
    pub set: DetectionSet,
    pub input_detections: usize,
    pub dropped_outside: usize,
}

/// Remaps every tile-local set, then fuses them in the given order.
pub fn run_fuse(
    plan: &TilePlan,
    inputs: &[DetectionSet],
    fusion: &FusionConfig,
    per_tile_nms: bool,
) -> Result<FuseOutcome> {
    plan.validate()?;
    let mut global = Vec::with_capacity(inputs.len());
    let mut dropped_outside = 0;
    for set in inputs {
        let set = if per_tile_nms {
            nms_per_tile(set, fusion)?
        } else {
            set.clone()
        };
        let r = remap_set(&set, plan)?;
        dropped_outside += r.dropped;
        global.push(r.set);
    }
    Ok(FuseOutcome {
        set: ensemble_fuse(&global, fusion)?,
        input_detections: inputs.iter().map(DetectionSet::len).sum(),
        dropped_outside,
    })
}

/// Timing and counts for one stage, written next to its main output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub elapsed_ms: f64,
    pub counts: BTreeMap<String, u64>,
}

impl StageSummary {
    pub fn new(stage: &str, elapsed_ms: f64) -> Self {
        Self {
            stage: stage.to_string(),
            elapsed_ms,
            counts: BTreeMap::new(),
        }
    }

    pub fn count(mut self, key: &str, n: usize) -> Self {
        self.counts.insert(key.to_string(), n as u64);
        self
    }

    /// `<output>.summary.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".summary.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Stage timings from summary files; repeated stages add up.
pub fn collect_timings(paths: &[PathBuf]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let s = StageSummary::read(p)?;
        *out.entry(s.stage).or_insert(0.0) += s.elapsed_ms;
    }
    Ok(out)
}
