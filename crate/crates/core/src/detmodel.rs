//! Detections, ground truth, their text formats, and tile-to-image remapping.
//!
//! Detections travel as JSON Lines, one object per line:
//!
//! ```text
//! {"class_id":1,"score":0.500000,"bbox":[1,2,3,4],"source":"yolov11","tile_id":7}
//! ```
//!
//! Keys are written in that order, scores with six decimals, box coordinates
//! in shortest round-trip form. `tile_id` is `null` for detections that never
//! belonged to a tile. Ground truth is either the same JSONL without `score`
//! and `source`, or YOLO text labels (`class cx cy w h`, normalized).

use std::fmt::Write as _;
use std::io::BufRead;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{remap_to_global, BBox};
use crate::sampler::TilePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    TileLocal,
    Global,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::TileLocal => "tile-local",
            Frame::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
    pub source: String,
    pub tile_id: Option<u32>,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, score: f64, source: impl Into<String>) -> Result<Self> {
        let d = Self {
            bbox,
            class_id,
            score,
            source: source.into(),
            tile_id: None,
        };
        d.check().map_err(|reason| Error::Config(reason.to_string()))?;
        Ok(d)
    }

    pub fn with_tile(mut self, tile_id: u32) -> Self {
        self.tile_id = Some(tile_id);
        self
    }

    fn check(&self) -> std::result::Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err("score out of range [0, 1]");
        }
        if self.source.is_empty() {
            return Err("empty source");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub frame: Frame,
    pub items: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(frame: Frame, items: Vec<Detection>) -> Result<Self> {
        let set = Self { frame, items };
        if frame == Frame::TileLocal {
            if let Some(pos) = set.items.iter().position(|d| d.tile_id.is_none()) {
                return Err(Error::Config(format!(
                    "tile-local detection {pos} has no tile_id"
                )));
            }
        }
        Ok(set)
    }

    pub fn empty(frame: Frame) -> Self {
        Self {
            frame,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub(crate) fn require(&self, frame: Frame) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame.name(),
                found: self.frame.name(),
            });
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct DetectionLine {
    class_id: u32,
    score: f64,
    bbox: [f64; 4],
    source: String,
    #[serde(default)]
    tile_id: Option<u32>,
}

#[derive(Deserialize)]
struct GroundTruthLine {
    class_id: u32,
    bbox: [f64; 4],
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::parse(i + 1, e.to_string()))),
    })
}

/// Parses detection JSONL. Blank lines are skipped; errors carry the 1-based
/// line number. In the tile-local frame every line must carry a `tile_id`.
pub fn parse_detections_jsonl<R: BufRead>(reader: R, frame: Frame) -> Result<DetectionSet> {
    let mut items = Vec::new();
    for entry in lines(reader) {
        let (no, line) = entry?;
        let raw: DetectionLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(no, e.to_string()))?;
        let bbox = BBox::try_from(raw.bbox).map_err(|e| Error::parse(no, e.to_string()))?;
        let det = Detection {
            bbox,
            class_id: raw.class_id,
            score: raw.score,
            source: raw.source,
            tile_id: raw.tile_id,
        };
        det.check().map_err(|reason| Error::parse(no, reason))?;
        if frame == Frame::TileLocal && det.tile_id.is_none() {
            return Err(Error::parse(no, "tile-local detection without tile_id"));
        }
        items.push(det);
    }
    Ok(DetectionSet { frame, items })
}

fn push_coord(out: &mut String, v: f64) {
    // Display for f64 is the shortest string that parses back to the same value
    // and never uses exponent notation, so it is valid JSON as-is.
    let _ = write!(out, "{v}");
}

pub fn write_detection_line(out: &mut String, d: &Detection) {
    let _ = write!(out, "{{\"class_id\":{},\"score\":{:.6},\"bbox\":[", d.class_id, d.score);
    for (i, v) in d.bbox.to_array().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_coord(out, *v);
    }
    out.push_str("],\"source\":");
    out.push_str(&serde_json::to_string(&d.source).expect("strings serialize"));
    match d.tile_id {
        Some(t) => {
            let _ = write!(out, ",\"tile_id\":{t}}}");
        }
        None => out.push_str(",\"tile_id\":null}"),
    }
    out.push('\n');
}

pub fn write_detections_jsonl(set: &DetectionSet) -> String {
    let mut out = String::new();
    for d in &set.items {
        write_detection_line(&mut out, d);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtFormat {
    Jsonl,
    YoloTxt,
}

impl std::str::FromStr for GtFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(GtFormat::Jsonl),
            "yolo-txt" | "yolo" => Ok(GtFormat::YoloTxt),
            other => Err(Error::Config(format!("unknown ground-truth format {other:?}"))),
        }
    }
}

/// Parses ground truth. YOLO labels are denormalized with the image size.
pub fn parse_ground_truth<R: BufRead>(
    reader: R,
    format: GtFormat,
    image_w: u32,
    image_h: u32,
) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for entry in lines(reader) {
        let (no, line) = entry?;
        let gt = match format {
            GtFormat::Jsonl => {
                let raw: GroundTruthLine =
                    serde_json::from_str(&line).map_err(|e| Error::parse(no, e.to_string()))?;
                let bbox = BBox::try_from(raw.bbox).map_err(|e| Error::parse(no, e.to_string()))?;
                GroundTruth {
                    bbox,
                    class_id: raw.class_id,
                }
            }
            GtFormat::YoloTxt => parse_yolo_line(no, &line, image_w, image_h)?,
        };
        out.push(gt);
    }
    Ok(out)
}

fn parse_yolo_line(no: usize, line: &str, image_w: u32, image_h: u32) -> Result<GroundTruth> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::parse(no, format!("expected 5 fields, found {}", fields.len())));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| Error::parse(no, format!("bad class id {:?}", fields[0])))?;
    let mut v = [0f64; 4];
    for (slot, text) in v.iter_mut().zip(&fields[1..]) {
        let x: f64 = text
            .parse()
            .map_err(|_| Error::parse(no, format!("bad number {text:?}")))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::parse(no, format!("value {x} outside [0, 1]")));
        }
        *slot = x;
    }
    let [cx, cy, w, h] = v;
    let (iw, ih) = (f64::from(image_w), f64::from(image_h));
    let bbox = BBox::new(
        (cx - w / 2.0) * iw,
        (cy - h / 2.0) * ih,
        (cx + w / 2.0) * iw,
        (cy + h / 2.0) * ih,
    )?;
    Ok(GroundTruth { bbox, class_id })
}

pub fn write_ground_truth_jsonl(gts: &[GroundTruth]) -> String {
    let mut out = String::new();
    for g in gts {
        let _ = write!(out, "{{\"class_id\":{},\"bbox\":[", g.class_id);
        for (i, v) in g.bbox.to_array().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_coord(&mut out, *v);
        }
        out.push_str("]}\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Remapped {
    pub set: DetectionSet,
    /// Detections that fell entirely outside the image and were dropped.
    pub dropped: usize,
}

/// Moves every detection into image coordinates using its tile's offset.
/// Boxes are clipped to the image; those clipping to nothing are dropped and
/// counted.
pub fn remap_set(set: &DetectionSet, plan: &TilePlan) -> Result<Remapped> {
    set.require(Frame::TileLocal)?;
    let mut items = Vec::with_capacity(set.items.len());
    let mut dropped = 0;
    for d in &set.items {
        let tile_id = d.tile_id.expect("tile-local detections carry tile_id");
        let tile = plan.tile(tile_id).ok_or(Error::UnknownTileId(tile_id))?;
        match remap_to_global(tile, &d.bbox, plan.image_w, plan.image_h) {
            Ok(bbox) => items.push(Detection { bbox, ..d.clone() }),
            Err(Error::ClippedToNothing { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(Remapped {
        set: DetectionSet {
            frame: Frame::Global,
            items,
        },
        dropped,
    })
}

pub fn filter_by_score(set: &DetectionSet, threshold: f64) -> DetectionSet {
    DetectionSet {
        frame: set.frame,
        items: set
            .items
            .iter()
            .filter(|d| d.score >= threshold)
            .cloned()
            .collect(),
    }
}
