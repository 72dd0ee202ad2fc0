//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{bx, global_set, uniform};
use tilefuse::detmodel::{
    parse_detections_jsonl, parse_ground_truth, write_detections_jsonl, Detection, DetectionSet, Frame, GroundTruth,
    GtFormat,
};
use tilefuse::evalkit::{
    average_precision, match_detections, mean_ap, pr_curve, summary_metrics, Counts, EvalReport, MatchResult,
};
use tilefuse::fusion::{nms_eiou, nms_reference, FusionConfig};
use tilefuse::raster::{load_raster, write_raster, Raster};
use tilefuse::rng::SplitMix64;
use tilefuse::sampler::{plan_tiles, poisson_disk_sample, verify_coverage, Point, PoissonConfig, TilePlan};
use tilefuse::synthgen::{mix_dataset, ratio_label, write_yolo_labels, DatasetManifest, ManifestEntry, Provenance};
use tilefuse::{eiou, iou};

const BIN: &str = env!("CARGO_BIN_EXE_tilefuse");

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(got: f64, want: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= 1e-9, format!("{what}: got {got}, want {want}"))
}

fn table_row_shape() -> Outcome {
    let report = EvalReport {
        per_class: Default::default(),
        map: 0.73,
        accuracy: 0.912236,
        precision: 0.0,
        recall: 0.0,
        f1: 0.90003,
        iou_threshold: 0.5,
        timings_ms: Default::default(),
        counts: Counts { detections: 0, ground_truth: 0, tp: 0, fp: 0, fn_: 0, tn: 0 },
    };
    let row = report.csv_row(&ratio_label(0.6));
    check(row == "0.6-0.4,0.912236,0.900030,0.730000", format!("row {row:?}"))?;
    let fields: Vec<&str> = row.split(',').collect();
    let values: Vec<f64> = fields[1..].iter().map(|f| f.parse().unwrap()).collect();
    check(values == [0.912236, 0.90003, 0.73], format!("parsed {values:?}"))?;
    let back = EvalReport::from_json(&report.to_json()).map_err(|e| e.to_string())?;
    check(back.csv_row("0.6-0.4") == row, "report JSON does not carry the row")?;
    Ok(row)
}

fn nms_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xACCE97);
    let mut survivors = 0;
    for case in 0..1_000 {
        let n = rng.below(9) as usize;
        let items: Vec<Detection> = (0..n)
            .map(|_| {
                let b = common::random_box(&mut rng, 30.0, 1.0, 25.0);
                Detection::new(b, rng.below(3) as u32, common::random_score(&mut rng), "s").unwrap()
            })
            .collect();
        let cfg = FusionConfig {
            eiou_threshold: uniform(&mut rng, -1.5, 1.0),
            class_agnostic: rng.below(2) == 0,
            ..Default::default()
        };
        let set = global_set(items);
        let fast = nms_eiou(&set, &cfg).map_err(|e| e.to_string())?;
        let slow = nms_reference(&set, &cfg).map_err(|e| e.to_string())?;
        check(fast == slow, format!("instance {case} differs"))?;
        survivors += fast.len();
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("1000 instances identical, {survivors} survivors, {secs:.2} s < 5 s"))
}

/// Buckets points on a grid of side `r` so that any pair closer than `r`
/// sits in neighbouring buckets.
struct Buckets {
    r: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl Buckets {
    fn new(points: &[Point], r: f64) -> Self {
        let mut map: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(((p.x / r) as i64, (p.y / r) as i64)).or_default().push(i);
        }
        Self { r, map }
    }

    fn near(&self, x: f64, y: f64) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = ((x / self.r) as i64, (y / self.r) as i64);
        (cy - 1..=cy + 1)
            .flat_map(move |gy| (cx - 1..=cx + 1).map(move |gx| (gx, gy)))
            .filter_map(|k| self.map.get(&k))
            .flatten()
            .copied()
    }
}

/// Every pixel center of the image, checked against a 2D coverage count
/// built from the tiles.
fn pixel_scan_covered(plan: &TilePlan) -> bool {
    let (w, h) = (plan.image_w as usize, plan.image_h as usize);
    let mut diff = vec![0i32; (w + 1) * (h + 1)];
    for t in &plan.tiles {
        let (x0, y0, x1, y1) = (t.x0 as usize, t.y0 as usize, (t.x0 + t.w) as usize, (t.y0 + t.h) as usize);
        diff[y0 * (w + 1) + x0] += 1;
        diff[y0 * (w + 1) + x1] -= 1;
        diff[y1 * (w + 1) + x0] -= 1;
        diff[y1 * (w + 1) + x1] += 1;
    }
    let mut above = vec![0i32; w];
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run += diff[y * (w + 1) + x];
            above[x] += run;
            if above[x] <= 0 {
                return false;
            }
        }
    }
    true
}

fn poisson_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(4096);
    let (mut total_points, mut probes) = (0usize, 0usize);
    for run in 0..100u64 {
        let (w, h) = if run < 10 {
            (4096, 4096)
        } else {
            (64 + rng.below(4033) as u32, 64 + rng.below(4033) as u32)
        };
        let tile = [320, 640, 1280, 128 + rng.below(1153) as u32][rng.below(4) as usize];
        let r = f64::from(tile) / 2.0 * uniform(&mut rng, 0.5, 1.0);
        let cfg = PoissonConfig::new(r, 30, run).map_err(|e| e.to_string())?;
        let pts = poisson_disk_sample(f64::from(w), f64::from(h), &cfg).map_err(|e| e.to_string())?;
        total_points += pts.len();

        let grid = Buckets::new(&pts, r);
        for (i, p) in pts.iter().enumerate() {
            for j in grid.near(p.x, p.y) {
                if j != i {
                    let d2 = (p.x - pts[j].x).powi(2) + (p.y - pts[j].y).powi(2);
                    check(d2 >= r * r, format!("run {run}: points {i},{j} at {} < r={r}", d2.sqrt()))?;
                }
            }
        }
        for _ in 0..10_000 {
            let (x, y) = (uniform(&mut rng, 0.0, f64::from(w)), uniform(&mut rng, 0.0, f64::from(h)));
            let covered = grid.near(x, y).any(|j| (pts[j].x - x).powi(2) + (pts[j].y - y).powi(2) < r * r);
            check(covered, format!("run {run}: ({x}, {y}) is farther than r from every sample"))?;
        }
        probes += 10_000;

        let plan = plan_tiles(w, h, tile, tile, &cfg).map_err(|e| e.to_string())?;
        check(pixel_scan_covered(&plan), format!("run {run}: pixel scan found a hole"))?;
        check(verify_coverage(&plan).covered, format!("run {run}: verify_coverage disagrees"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("100 runs, {total_points} points, {probes} probes, all plans covered, {secs:.1} s < 60 s"))
}

fn metric_fixtures() -> Outcome {
    let (a, b) = (bx([0.0, 0.0, 2.0, 2.0]), bx([1.0, 1.0, 3.0, 3.0]));
    close(iou(&a, &b), 1.0 / 7.0, "iou")?;
    close(eiou(&a, &b), 1.0 / 7.0 - 2.0 / 18.0, "eiou")?;
    check((eiou(&a, &b) - 0.031746).abs() < 5e-7, "eiou differs from 0.031746 at printed precision")?;
    close(eiou(&bx([0.0, 0.0, 1.0, 1.0]), &bx([9.0, 9.0, 10.0, 10.0])), -0.81, "eiou far")?;

    let gt = vec![GroundTruth { bbox: bx([0.0, 0.0, 10.0, 10.0]), class_id: 0 }];
    let hit = |s: f64| Detection::new(bx([0.0, 0.0, 10.0, 10.0]), 0, s, "d").unwrap();
    let miss = |s: f64| Detection::new(bx([50.0, 50.0, 60.0, 60.0]), 0, s, "d").unwrap();
    let ap = |dets: Vec<Detection>| -> Result<f64, String> {
        let curve = pr_curve(&global_set(dets), &gt, 0, 0.5).map_err(|e| e.to_string())?;
        Ok(average_precision(&curve))
    };
    close(ap(vec![hit(0.9)])?, 1.0, "AP [TP]")?;
    close(ap(vec![hit(0.9), miss(0.5)])?, 1.0, "AP [TP, FP]")?;
    close(ap(vec![miss(0.9), hit(0.5)])?, 0.5, "AP [FP, TP]")?;

    let m = mean_ap(&[(0, Some(0.6)), (1, Some(0.8))].into(), false).map_err(|e| e.to_string())?;
    close(m, 0.7, "mAP")?;
    let m = mean_ap(&[(0, Some(0.6)), (1, Some(0.8)), (2, None)].into(), false).map_err(|e| e.to_string())?;
    close(m, 0.7, "mAP excluding a class without GT")?;

    let s = summary_metrics(&MatchResult { tp: 3, fp: 1, fn_: 1, tn: 0, pairs: Vec::new() });
    close(s.precision, 0.75, "precision")?;
    close(s.recall, 0.75, "recall")?;
    close(s.f1, 0.75, "f1")?;
    close(s.accuracy, 0.6, "accuracy")?;
    let m = match_detections(&global_set(vec![Detection::new(a, 0, 0.9, "d").unwrap()]), &[GroundTruth { bbox: b, class_id: 0 }], 0.5)
        .map_err(|e| e.to_string())?;
    check((m.tp, m.fp, m.fn_) == (0, 1, 1), "IoU 1/7 must not match")?;
    Ok("iou 1/7, eiou 0.031746 and -0.81, AP {1, 1, 0.5}, mAP 0.7, P/R/F1 0.75, accuracy 0.6 within 1e-9".into())
}

fn tilefuse(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("tilefuse {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()),
    )
}

fn run_pipeline(dir: &Path, jobs: &str) -> Result<(), String> {
    tilefuse(dir, &["plan", "scene.png", "-o", "plan.json", "--seed", "2025", "--tile-w", "640", "--tile-h", "640", "--radius", "320"])?;
    tilefuse(dir, &["detect", "scene.png", "--plan", "plan.json", "--adapter", "oracle:gt.jsonl", "-o", "det.jsonl", "--jobs", jobs])?;
    tilefuse(dir, &["fuse", "--plan", "plan.json", "det.jsonl", "-o", "fused.jsonl"])?;
    tilefuse(dir, &["eval", "fused.jsonl", "gt.jsonl", "-o", "report.json"])
}

fn scene(dir: &Path, gts: &[GroundTruth]) {
    common::write_planted_image(&dir.join("scene.png"), 4096, gts);
    common::write_gt(&dir.join("gt.jsonl"), gts);
}

fn end_to_end(gts: &[GroundTruth], dir: &Path) -> Outcome {
    for (i, a) in gts.iter().enumerate() {
        for b in &gts[i + 1..] {
            check(iou(&a.bbox, &b.bbox) == 0.0, "planted boxes overlap")?;
        }
    }
    let start = Instant::now();
    run_pipeline(dir, "4")?;
    let secs = start.elapsed().as_secs_f64();

    let read = |f: &str| std::fs::read_to_string(dir.join(f)).map_err(|e| e.to_string());
    let report = EvalReport::from_json(&read("report.json")?).map_err(|e| e.to_string())?;
    let plan = TilePlan::from_json(&read("plan.json")?).map_err(|e| e.to_string())?;
    let raw = read("det.jsonl")?.lines().count();
    let fused = parse_detections_jsonl(read("fused.jsonl")?.as_bytes(), Frame::Global).map_err(|e| e.to_string())?;

    check(verify_coverage(&plan).covered, "plan does not cover the image")?;
    check(raw > gts.len(), "no cross-tile duplicates were produced; the test would be vacuous")?;
    for (name, v) in [("precision", report.precision), ("recall", report.recall), ("mAP", report.map)] {
        check(v >= 0.99, format!("{name} {v:.6} < 0.99"))?;
    }
    // every GT box is claimed by exactly one fused detection of its class
    for (i, g) in gts.iter().enumerate() {
        let claims = fused.items.iter().filter(|d| d.class_id == g.class_id && iou(&d.bbox, &g.bbox) > 0.5).count();
        check(claims == 1, format!("GT {i} is matched by {claims} fused detections"))?;
    }
    let classes: std::collections::BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    check(classes.len() == 5, "expected 5 classes")?;
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} tiles, {raw} raw -> {} fused, P {:.6} R {:.6} mAP {:.6}, no double matches, {secs:.2} s < 60 s",
        plan.tiles.len(),
        fused.len(),
        report.precision,
        report.recall,
        report.map
    ))
}

fn determinism(gts: &[GroundTruth], first: &Path) -> Outcome {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let third = tempfile::tempdir().map_err(|e| e.to_string())?;
    scene(second.path(), gts);
    scene(third.path(), gts);
    run_pipeline(second.path(), "1")?;
    run_pipeline(third.path(), "8")?;
    for f in ["plan.json", "fused.jsonl", "report.json"] {
        let a = std::fs::read(second.path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(third.path().join(f)).map_err(|e| e.to_string())?;
        let c = std::fs::read(first.join(f)).map_err(|e| e.to_string())?;
        check(a == b, format!("{f} differs between --jobs 1 and --jobs 8"))?;
        check(a == c, format!("{f} differs between runs"))?;
    }
    Ok("plan.json, fused.jsonl and report.json byte-identical at --jobs 1, 4 and 8".into())
}

fn round_trips() -> Outcome {
    let mut rng = SplitMix64::new(31);
    let mut lines = 0;
    for _ in 0..100 {
        let items: Vec<Detection> = (0..rng.below(30))
            .map(|_| {
                let score = rng.below(1_000_001) as f64 / 1e6;
                Detection::new(common::random_box(&mut rng, 4096.0, 1e-3, 640.0), rng.below(20) as u32, score, "m")
                    .unwrap()
                    .with_tile(rng.below(100) as u32)
            })
            .collect();
        let set = DetectionSet::new(Frame::TileLocal, items).unwrap();
        let text = write_detections_jsonl(&set);
        let back = parse_detections_jsonl(text.as_bytes(), Frame::TileLocal).map_err(|e| e.to_string())?;
        check(back == set, "detection JSONL changed on round trip")?;
        lines += set.len();
    }

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gts: Vec<GroundTruth> = (0..20)
            .map(|_| {
                let (bw, bh) = (uniform(&mut rng, 1.0, 320.0), uniform(&mut rng, 1.0, 320.0));
                let (x, y) = (uniform(&mut rng, 0.0, 640.0 - bw), uniform(&mut rng, 0.0, 640.0 - bh));
                GroundTruth { bbox: bx([x, y, x + bw, y + bh]), class_id: rng.below(5) as u32 }
            })
            .collect();
        let back = parse_ground_truth(write_yolo_labels(&gts, 640, 640).as_bytes(), GtFormat::YoloTxt, 640, 640)
            .map_err(|e| e.to_string())?;
        for (a, b) in gts.iter().zip(&back) {
            check(a.class_id == b.class_id, "class changed")?;
            for (u, v) in a.bbox.to_array().iter().zip(b.bbox.to_array()) {
                worst = worst.max((u - v).abs() / 640.0);
            }
        }
    }
    check(worst <= 1e-4, format!("yolo error {worst:e} of the crop size"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data: Vec<u8> = (0..300 * 200 * 3).map(|_| rng.below(256) as u8).collect();
    let raster = Raster::from_rgb8(300, 200, data).unwrap();
    let p = dir.path().join("r.png");
    write_raster(&raster, &p).map_err(|e| e.to_string())?;
    check(load_raster(&p).map_err(|e| e.to_string())? == raster, "PNG pixels changed")?;
    Ok(format!("{lines} detections exact, yolo max error {worst:.1e} of crop size, PNG pixel-exact"))
}

fn mixing() -> Outcome {
    let pool = |n: usize, provenance: Provenance, tag: &str| DatasetManifest {
        entries: (0..n)
            .map(|i| ManifestEntry {
                image: format!("{tag}/images/{i:04}.png").into(),
                label: format!("{tag}/labels/{i:04}.txt").into(),
                provenance,
            })
            .collect(),
        ratio_label: String::new(),
        seed: 0,
    };
    let real = pool(500, Provenance::Real, "real");
    let synth = pool(500, Provenance::Synthetic, "synth");
    let mut labels = Vec::new();
    for (ratio, want_real, want_label) in
        [(0.0, 0, "0-1.0"), (0.2, 100, "0.2-0.8"), (0.4, 200, "0.4-0.6"), (0.6, 300, "0.6-0.4"), (0.8, 400, "0.8-0.2")]
    {
        for seed in [1u64, 2] {
            let m = mix_dataset(&real, &synth, ratio, 500, seed).map_err(|e| e.to_string())?;
            let again = mix_dataset(&real, &synth, ratio, 500, seed).map_err(|e| e.to_string())?;
            check(m.to_json() == again.to_json(), format!("ratio {ratio} seed {seed} not reproducible"))?;
            let n_real = m.entries.iter().filter(|e| e.provenance == Provenance::Real).count();
            check(n_real == want_real && m.entries.len() == 500, format!("ratio {ratio}: {n_real} real of {}", m.entries.len()))?;
            check(m.ratio_label == want_label, format!("label {}", m.ratio_label))?;
        }
        let a = mix_dataset(&real, &synth, ratio, 500, 1).unwrap().to_json();
        let b = mix_dataset(&real, &synth, ratio, 500, 2).unwrap().to_json();
        check(a != b, "different seeds gave the same manifest")?;
        labels.push(want_label);
    }
    Ok(format!("{} over 500 entries, floor counts exact, manifests reproducible per seed", labels.join(" ")))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let gts = common::planted_boxes(4096, 200, 5, 7);
    let e2e_dir = tempfile::tempdir().expect("temp dir");
    scene(e2e_dir.path(), &gts);

    let criteria: Vec<Criterion> = vec![
        ("table-row-shape", Box::new(table_row_shape)),
        ("nms-oracle-equivalence", Box::new(nms_oracle)),
        ("poisson-disk-properties", Box::new(poisson_properties)),
        ("metric-fixtures", Box::new(metric_fixtures)),
        ("end-to-end-oracle", Box::new(|| end_to_end(&gts, e2e_dir.path()))),
        ("pipeline-determinism", Box::new(|| determinism(&gts, e2e_dir.path()))),
        ("round-trips", Box::new(round_trips)),
        ("mixing-determinism", Box::new(mixing)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
