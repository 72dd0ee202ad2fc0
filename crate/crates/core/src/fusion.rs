//! EIOU non-maximum suppression and late fusion of several detectors' outputs.
//!
//! Candidates are visited in a total order: score descending, area
//! descending, then `(xmin, ymin, xmax, ymax)` ascending, and finally input
//! position. A candidate survives unless an already kept box of the same class
//! (any class when `class_agnostic`) has EIOU above the threshold with it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::detmodel::{filter_by_score, Detection, DetectionSet, Frame};
use crate::error::{Error, Result};
use crate::geometry::{area, eiou};

pub const DEFAULT_EIOU_THRESHOLD: f64 = 0.4;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub eiou_threshold: f64,
    pub score_threshold: f64,
    pub source_weights: BTreeMap<String, f64>,
    /// Weight for sources missing from `source_weights`; `None` makes a
    /// missing source an error.
    pub default_weight: Option<f64>,
    pub class_agnostic: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            eiou_threshold: DEFAULT_EIOU_THRESHOLD,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            source_weights: BTreeMap::new(),
            default_weight: Some(1.0),
            class_agnostic: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eiou_threshold > -3.0 && self.eiou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "eiou_threshold {} outside (-3, 1]",
                self.eiou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        let weights = self.source_weights.values().chain(self.default_weight.iter());
        for w in weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Config(format!("source weight {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn weight_of(&self, source: &str) -> Result<f64> {
        self.source_weights
            .get(source)
            .copied()
            .or(self.default_weight)
            .ok_or_else(|| Error::UnknownSource(source.to_string()))
    }
}

/// The total visiting order used by every suppression routine here.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| area(&b.bbox).total_cmp(&area(&a.bbox)))
        .then_with(|| a.bbox.xmin().total_cmp(&b.bbox.xmin()))
        .then_with(|| a.bbox.ymin().total_cmp(&b.bbox.ymin()))
        .then_with(|| a.bbox.xmax().total_cmp(&b.bbox.xmax()))
        .then_with(|| a.bbox.ymax().total_cmp(&b.bbox.ymax()))
        .then_with(|| a.class_id.cmp(&b.class_id))
}

fn ranked(items: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    // stable: equal keys keep input order
    order.sort_by(|&i, &j| rank_order(&items[i], &items[j]));
    order
}

/// Kept indices into `items`, in visiting order.
fn suppress(items: &[Detection], threshold: f64, class_agnostic: bool) -> Vec<usize> {
    let order = ranked(items);
    if threshold < 0.0 {
        // Disjoint boxes can still exceed a negative threshold, so every kept
        // box has to be compared.
        return suppress_exhaustive(items, &order, threshold, class_agnostic);
    }
    // EIOU <= IoU, so with a nonnegative threshold only overlapping boxes can
    // suppress each other. Kept boxes are bucketed on a uniform grid.
    let cell = {
        let total: f64 = items
            .iter()
            .map(|d| d.bbox.width().max(d.bbox.height()))
            .sum();
        (total / items.len().max(1) as f64).max(1e-6)
    };
    let span = |lo: f64, hi: f64| ((lo / cell).floor() as i64, (hi / cell).floor() as i64);
    let mut buckets: HashMap<(u32, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for &i in &order {
        let d = &items[i];
        let class_key = if class_agnostic { 0 } else { d.class_id };
        let (gx0, gx1) = span(d.bbox.xmin(), d.bbox.xmax());
        let (gy0, gy1) = span(d.bbox.ymin(), d.bbox.ymax());
        let suppressed = (gy0..=gy1).any(|gy| {
            (gx0..=gx1).any(|gx| {
                buckets.get(&(class_key, gx, gy)).is_some_and(|ks| {
                    ks.iter().any(|&k| eiou(&items[k].bbox, &d.bbox) > threshold)
                })
            })
        });
        if suppressed {
            continue;
        }
        kept.push(i);
        for gy in gy0..=gy1 {
            for gx in gx0..=gx1 {
                buckets.entry((class_key, gx, gy)).or_default().push(i);
            }
        }
    }
    kept
}

fn suppress_exhaustive(
    items: &[Detection],
    order: &[usize],
    threshold: f64,
    class_agnostic: bool,
) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        let d = &items[i];
        let hit = kept.iter().any(|&k| {
            (class_agnostic || items[k].class_id == d.class_id)
                && eiou(&items[k].bbox, &d.bbox) > threshold
        });
        if !hit {
            kept.push(i);
        }
    }
    kept
}

/// Greedy EIOU non-maximum suppression over a global detection set.
pub fn nms_eiou(set: &DetectionSet, cfg: &FusionConfig) -> Result<DetectionSet> {
    set.require(Frame::Global)?;
    let kept = suppress(&set.items, cfg.eiou_threshold, cfg.class_agnostic);
    Ok(DetectionSet {
        frame: Frame::Global,
        items: kept.into_iter().map(|i| set.items[i].clone()).collect(),
    })
}

/// Literal greedy NMS: repeatedly take the best remaining box and drop every
/// remaining box it suppresses. Quadratic, with no indexing; it exists to
/// cross-check [`nms_eiou`].
pub fn nms_reference(set: &DetectionSet, cfg: &FusionConfig) -> Result<DetectionSet> {
    set.require(Frame::Global)?;
    let mut remaining: Vec<Detection> = set.items.clone();
    remaining.sort_by(rank_order);
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let best = remaining.remove(0);
        let mut rest = Vec::new();
        for cand in remaining {
            let same_class = cfg.class_agnostic || cand.class_id == best.class_id;
            if same_class && eiou(&best.bbox, &cand.bbox) > cfg.eiou_threshold {
                continue;
            }
            rest.push(cand);
        }
        remaining = rest;
        kept.push(best);
    }
    Ok(DetectionSet {
        frame: Frame::Global,
        items: kept,
    })
}

/// Weighted-score union of several detectors followed by one joint NMS.
///
/// Each score is multiplied by its source weight (capped at 1), sets are
/// concatenated in the given order, low scores are filtered, then
/// [`nms_eiou`] picks the survivors.
pub fn ensemble_fuse(sets: &[DetectionSet], cfg: &FusionConfig) -> Result<DetectionSet> {
    cfg.validate()?;
    let mut items = Vec::new();
    for set in sets {
        set.require(Frame::Global)?;
        for d in &set.items {
            let w = cfg.weight_of(&d.source)?;
            items.push(Detection {
                score: (d.score * w).min(1.0),
                ..d.clone()
            });
        }
    }
    let merged = DetectionSet {
        frame: Frame::Global,
        items,
    };
    nms_eiou(&filter_by_score(&merged, cfg.score_threshold), cfg)
}

/// Optional per-tile pass run before remapping: NMS within each
/// `(source, tile)` group. Survivors keep their input order.
///
/// This only trims work ahead of the global pass. It is not guaranteed to
/// leave the final survivors unchanged: a box removed here by a neighbour that
/// is itself later suppressed by a box from another tile would have survived
/// the global pass alone.
pub fn nms_per_tile(set: &DetectionSet, cfg: &FusionConfig) -> Result<DetectionSet> {
    set.require(Frame::TileLocal)?;
    let mut groups: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for (i, d) in set.items.iter().enumerate() {
        let tile = d.tile_id.expect("tile-local detections carry tile_id");
        groups.entry((d.source.as_str(), tile)).or_default().push(i);
    }
    let mut keep = vec![false; set.items.len()];
    for idx in groups.values() {
        let members: Vec<Detection> = idx.iter().map(|&i| set.items[i].clone()).collect();
        for k in suppress(&members, cfg.eiou_threshold, cfg.class_agnostic) {
            keep[idx[k]] = true;
        }
    }
    Ok(DetectionSet {
        frame: Frame::TileLocal,
        items: set
            .items
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(d, _)| d.clone())
            .collect(),
    })
}
