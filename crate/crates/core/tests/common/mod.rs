#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::Path;

use tilefuse::detmodel::{Detection, DetectionSet, Frame, GroundTruth};
use tilefuse::geometry::{area, eiou, BBox};
use tilefuse::raster::{write_raster, Raster};
use tilefuse::rng::SplitMix64;

pub fn bx(v: [f64; 4]) -> BBox {
    BBox::try_from(v).unwrap()
}

pub fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

/// Random valid box inside `[0, span)^2` with sides in `[min_side, max_side)`.
pub fn random_box(rng: &mut SplitMix64, span: f64, min_side: f64, max_side: f64) -> BBox {
    let w = uniform(rng, min_side, max_side);
    let h = uniform(rng, min_side, max_side);
    let x = uniform(rng, 0.0, span);
    let y = uniform(rng, 0.0, span);
    bx([x, y, x + w, y + h])
}

/// Scores on a coarse grid so ties occur.
pub fn random_score(rng: &mut SplitMix64) -> f64 {
    (rng.below(20) + 1) as f64 / 20.0
}

pub fn global_set(items: Vec<Detection>) -> DetectionSet {
    DetectionSet::new(Frame::Global, items).unwrap()
}

/// Independent greedy NMS: sorts by score, area, coordinates, class and input
/// position, then keeps a box unless an already kept box of the same class
/// (or any class when `agnostic`) has EIOU above `threshold` with it.
pub fn oracle_nms(items: &[Detection], threshold: f64, agnostic: bool) -> Vec<usize> {
    let key = |d: &Detection| {
        let [x0, y0, x1, y1] = d.bbox.to_array();
        (-d.score, -area(&d.bbox), x0, y0, x1, y1, f64::from(d.class_id))
    };
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(&items[a]), key(&items[b]));
        ka.partial_cmp(&kb).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        let beaten = kept.iter().any(|&k| {
            (agnostic || items[k].class_id == items[i].class_id) && eiou(&items[k].bbox, &items[i].bbox) > threshold
        });
        if !beaten {
            kept.push(i);
        }
    }
    kept
}

/// `n` pairwise disjoint ground-truth boxes in a `size x size` image, one per
/// cell of a square grid, with classes cycling through `classes`.
pub fn planted_boxes(size: u32, n: usize, classes: u32, seed: u64) -> Vec<GroundTruth> {
    let mut rng = SplitMix64::new(seed);
    let per_side = (n as f64).sqrt().ceil() as u32 + 1;
    let cell = f64::from(size / per_side);
    let mut cells: Vec<u32> = (0..per_side * per_side).collect();
    rng.shuffle(&mut cells);
    cells
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, c)| {
            let (cx, cy) = (f64::from(c % per_side) * cell, f64::from(c / per_side) * cell);
            let w = (uniform(&mut rng, 0.15, 0.7) * cell).round();
            let h = (uniform(&mut rng, 0.15, 0.7) * cell).round();
            let x = cx + (uniform(&mut rng, 0.05, 0.25) * cell).round();
            let y = cy + (uniform(&mut rng, 0.05, 0.25) * cell).round();
            GroundTruth {
                bbox: bx([x, y, x + w, y + h]),
                class_id: i as u32 % classes,
            }
        })
        .collect()
}

/// Gray image with every ground-truth box painted in a class color.
pub fn write_planted_image(path: &Path, size: u32, gts: &[GroundTruth]) {
    let mut r = Raster::new(size, size, [90, 90, 90]).unwrap();
    for g in gts {
        let c = 40 * (g.class_id as u8 % 6);
        r.fill_box(&g.bbox, [c, 255 - c, 128]);
    }
    write_raster(&r, path).unwrap();
}

pub fn write_gt(path: &Path, gts: &[GroundTruth]) {
    std::fs::write(path, tilefuse::detmodel::write_ground_truth_jsonl(gts)).unwrap();
}
