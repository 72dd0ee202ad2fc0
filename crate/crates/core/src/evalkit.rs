//! Detection evaluation at a single IoU threshold.
//!
//! Matching is greedy in fusion rank order: each detection takes the unmatched
//! same-class ground truth with the highest IoU, and the match counts only if
//! that IoU is strictly above the threshold. True negatives are not
//! enumerable for box detection and default to zero; callers that have an
//! external count can supply it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Deserialize;

use crate::detmodel::{Detection, DetectionSet, Frame, GroundTruth};
use crate::error::{Error, Result};
use crate::fusion::rank_order;
use crate::geometry::iou;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// `(detection index, ground-truth index, iou)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    AllPoints,
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// Count classes without ground truth as AP 0 instead of leaving them out
    /// of the mean.
    pub include_classes_without_gt: bool,
    pub true_negatives: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            interpolation: Interpolation::AllPoints,
            include_classes_without_gt: false,
            true_negatives: 0,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("iou_threshold {t} outside (0, 1]")))
    }
}

fn ranked(items: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| rank_order(&items[i], &items[j]));
    order
}

/// Outcome per visited detection: `Some(gt index)` when it matched.
fn greedy(dets: &[Detection], order: &[usize], gts: &[GroundTruth], threshold: f64) -> Vec<(usize, Option<(usize, f64)>)> {
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.class_id != d.class_id {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            let hit = best.filter(|&(_, v)| v > threshold);
            if let Some((gi, _)) = hit {
                taken[gi] = true;
            }
            (di, hit)
        })
        .collect()
}

pub fn match_detections(dets: &DetectionSet, gts: &[GroundTruth], iou_threshold: f64) -> Result<MatchResult> {
    dets.require(Frame::Global)?;
    check_threshold(iou_threshold)?;
    let order = ranked(&dets.items);
    let mut m = MatchResult::default();
    for (di, hit) in greedy(&dets.items, &order, gts, iou_threshold) {
        match hit {
            Some((gi, v)) => {
                m.tp += 1;
                m.pairs.push((di, gi, v));
            }
            None => m.fp += 1,
        }
    }
    m.fn_ = gts.len() as u64 - m.tp;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn summary_metrics(m: &MatchResult) -> Summary {
    let (tp, fp, fn_, tn) = (m.tp as f64, m.fp as f64, m.fn_ as f64, m.tn as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Summary {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

/// Cumulative `(recall, precision)` after each detection of `class_id`, in
/// rank order.
pub fn pr_curve(
    dets: &DetectionSet,
    gts: &[GroundTruth],
    class_id: u32,
    iou_threshold: f64,
) -> Result<Vec<(f64, f64)>> {
    dets.require(Frame::Global)?;
    check_threshold(iou_threshold)?;
    let class_gts: Vec<GroundTruth> = gts.iter().filter(|g| g.class_id == class_id).copied().collect();
    if class_gts.is_empty() {
        return Err(Error::NoGroundTruth(class_id));
    }
    let class_dets: Vec<Detection> = dets
        .items
        .iter()
        .filter(|d| d.class_id == class_id)
        .cloned()
        .collect();
    let order = ranked(&class_dets);
    let total = class_gts.len() as f64;
    let mut tp = 0.0;
    let mut seen = 0.0;
    Ok(greedy(&class_dets, &order, &class_gts, iou_threshold)
        .into_iter()
        .map(|(_, hit)| {
            seen += 1.0;
            if hit.is_some() {
                tp += 1.0;
            }
            (tp / total, tp / seen)
        })
        .collect())
}

/// Area under the precision envelope (precision made non-increasing from the
/// right), integrated over recall steps.
pub fn average_precision(curve: &[(f64, f64)]) -> f64 {
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for &(r, p) in curve {
        recall.push(r);
        precision.push(p);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        if recall[i] != recall[i - 1] {
            ap += (recall[i] - recall[i - 1]) * precision[i];
        }
    }
    ap.clamp(0.0, 1.0)
}

/// PASCAL VOC 2007 style: mean of the maximum precision at recall >= t for
/// t in {0, 0.1, ..., 1}.
pub fn average_precision_11pt(curve: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|i| {
            let t = f64::from(i) / 10.0;
            curve
                .iter()
                .filter(|(r, _)| *r >= t - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Unweighted mean of per-class AP. `None` marks a class with no ground
/// truth; those are skipped unless `include_without_gt`, in which case they
/// count as 0.
pub fn mean_ap(per_class: &BTreeMap<u32, Option<f64>>, include_without_gt: bool) -> Result<f64> {
    let values: Vec<f64> = per_class
        .values()
        .filter_map(|ap| match ap {
            Some(v) => Some(*v),
            None if include_without_gt => Some(0.0),
            None => None,
        })
        .collect();
    if values.is_empty() {
        return Err(Error::NoEvaluatedClasses);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ClassReport {
    pub ap: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
pub struct Counts {
    pub detections: u64,
    pub ground_truth: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EvalReport {
    #[serde(deserialize_with = "de_class_map")]
    pub per_class: BTreeMap<u32, ClassReport>,
    pub map: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou_threshold: f64,
    pub timings_ms: BTreeMap<String, f64>,
    pub counts: Counts,
}

fn de_class_map<'de, D>(de: D) -> std::result::Result<BTreeMap<u32, ClassReport>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    let raw: BTreeMap<String, ClassReport> = BTreeMap::deserialize(de)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|k| (k, v))
                .map_err(|_| D::Error::custom(format!("class key {k:?} is not an integer")))
        })
        .collect()
}

fn real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.6}");
}

impl EvalReport {
    /// Pretty JSON with a fixed key order and six-decimal reals.
    pub fn to_json(&self) -> String {
        let mut o = String::from("{\n  \"per_class\": {");
        for (i, (class, c)) in self.per_class.iter().enumerate() {
            o.push_str(if i == 0 { "\n" } else { ",\n" });
            let _ = write!(o, "    \"{class}\": {{\"ap\": ");
            match c.ap {
                Some(v) => real(&mut o, v),
                None => o.push_str("null"),
            }
            let _ = write!(o, ", \"tp\": {}, \"fp\": {}, \"fn\": {}}}", c.tp, c.fp, c.fn_);
        }
        o.push_str(if self.per_class.is_empty() { "},\n" } else { "\n  },\n" });
        for (key, v) in [
            ("map", self.map),
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("iou_threshold", self.iou_threshold),
        ] {
            let _ = write!(o, "  \"{key}\": ");
            real(&mut o, v);
            o.push_str(",\n");
        }
        o.push_str("  \"timings_ms\": {");
        for (i, (stage, ms)) in self.timings_ms.iter().enumerate() {
            o.push_str(if i == 0 { "\n" } else { ",\n" });
            let _ = write!(o, "    {}: ", serde_json::to_string(stage).expect("strings serialize"));
            real(&mut o, *ms);
        }
        o.push_str(if self.timings_ms.is_empty() { "},\n" } else { "\n  },\n" });
        let c = &self.counts;
        let _ = write!(
            o,
            "  \"counts\": {{\"detections\": {}, \"ground_truth\": {}, \"tp\": {}, \"fp\": {}, \"fn\": {}, \"tn\": {}}}\n}}\n",
            c.detections, c.ground_truth, c.tp, c.fp, c.fn_, c.tn
        );
        o
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One experiment-log row: percentage label, accuracy, F1, mAP.
    pub fn csv_row(&self, percentage: &str) -> String {
        format!("{percentage},{:.6},{:.6},{:.6}", self.accuracy, self.f1, self.map)
    }
}

pub const CSV_HEADER: &str = "Percentage,Accuracy,F1-score,mAP";

pub fn build_report(
    dets: &DetectionSet,
    gts: &[GroundTruth],
    cfg: &EvalConfig,
    timings_ms: &BTreeMap<String, f64>,
) -> Result<EvalReport> {
    let mut m = match_detections(dets, gts, cfg.iou_threshold)?;
    m.tn = cfg.true_negatives;
    let summary = summary_metrics(&m);

    let classes: BTreeSet<u32> = gts
        .iter()
        .map(|g| g.class_id)
        .chain(dets.items.iter().map(|d| d.class_id))
        .collect();
    let mut per_class = BTreeMap::new();
    let mut aps = BTreeMap::new();
    for &class in &classes {
        let ap = match pr_curve(dets, gts, class, cfg.iou_threshold) {
            Ok(curve) => Some(match cfg.interpolation {
                Interpolation::AllPoints => average_precision(&curve),
                Interpolation::ElevenPoint => average_precision_11pt(&curve),
            }),
            Err(Error::NoGroundTruth(_)) => None,
            Err(e) => return Err(e),
        };
        aps.insert(class, ap);
        let det_idx: BTreeSet<usize> = dets
            .items
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_id == class)
            .map(|(i, _)| i)
            .collect();
        let tp = m.pairs.iter().filter(|(di, _, _)| det_idx.contains(di)).count() as u64;
        let n_gt = gts.iter().filter(|g| g.class_id == class).count() as u64;
        per_class.insert(
            class,
            ClassReport {
                ap,
                tp,
                fp: det_idx.len() as u64 - tp,
                fn_: n_gt - tp,
            },
        );
    }
    let map = mean_ap(&aps, cfg.include_classes_without_gt)?;

    Ok(EvalReport {
        per_class,
        map,
        accuracy: summary.accuracy,
        precision: summary.precision,
        recall: summary.recall,
        f1: summary.f1,
        iou_threshold: cfg.iou_threshold,
        timings_ms: timings_ms.clone(),
        counts: Counts {
            detections: dets.items.len() as u64,
            ground_truth: gts.len() as u64,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
        },
    })
}
