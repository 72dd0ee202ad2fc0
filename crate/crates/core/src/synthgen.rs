//! Labeled crops cut from large annotated images, and proportional mixing of
//! real and synthetic samples into a training manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detmodel::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{area, BBox, TileWindow};
use crate::raster::{read_window, write_raster, Raster};
use crate::rng::SplitMix64;
use crate::sampler::{poisson_disk_sample, PoissonConfig, DEFAULT_K};

pub const DEFAULT_CROP: u32 = 640;
pub const DEFAULT_MIN_BOX_OVERLAP: f64 = 0.3;
/// Uniform sampling gives up after `n_samples * RETRY_FACTOR` draws.
pub const RETRY_FACTOR: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropSampler {
    Uniform,
    Poisson,
}

impl std::str::FromStr for CropSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CropSampler::Uniform),
            "poisson" => Ok(CropSampler::Poisson),
            other => Err(Error::Config(format!("unknown crop sampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    pub crop_w: u32,
    pub crop_h: u32,
    pub n_samples: usize,
    pub min_box_overlap: f64,
    pub seed: u64,
    pub sampler: CropSampler,
    /// Keep crops that end up with no boxes instead of redrawing them.
    pub keep_background: bool,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            crop_w: DEFAULT_CROP,
            crop_h: DEFAULT_CROP,
            n_samples: 1,
            min_box_overlap: DEFAULT_MIN_BOX_OVERLAP,
            seed: 0,
            sampler: CropSampler::Uniform,
            keep_background: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub origin: (u32, u32),
    pub image: Raster,
    pub labels: Vec<GroundTruth>,
}

/// Ground truth of `gts` seen through `window`, in window coordinates. A box
/// is kept when at least `min_overlap` of its area lies inside the window.
pub fn crop_labels(gts: &[GroundTruth], window: &TileWindow, min_overlap: f64) -> Vec<GroundTruth> {
    let frame = window.as_bbox();
    let (dx, dy) = (-f64::from(window.x0), -f64::from(window.y0));
    gts.iter()
        .filter_map(|g| {
            let clipped = g.bbox.intersection(&frame)?;
            if area(&clipped) / area(&g.bbox) < min_overlap {
                return None;
            }
            let local = clipped.translate(dx, dy).ok()?;
            // translation can round a hair past the window edge
            let local = BBox::new(
                local.xmin().max(0.0),
                local.ymin().max(0.0),
                local.xmax().min(f64::from(window.w)),
                local.ymax().min(f64::from(window.h)),
            )
            .ok()?;
            Some(GroundTruth {
                bbox: local,
                class_id: g.class_id,
            })
        })
        .collect()
}

/// Cuts labeled crops out of `image`.
///
/// Uniform mode draws origins uniformly until `n_samples` crops carry at least
/// one box, within a budget of `n_samples * RETRY_FACTOR` draws. Poisson mode
/// takes origins from a Poisson disk sample of the origin domain with radius
/// `min(crop_w, crop_h) / 2`, in sampling order, and returns at most
/// `n_samples` crops since the disk packing bounds how many exist.
pub fn sample_crops(image: &Raster, gts: &[GroundTruth], spec: &CropSpec) -> Result<Vec<Crop>> {
    let (iw, ih) = (image.width(), image.height());
    if spec.crop_w == 0 || spec.crop_h == 0 || spec.crop_w > iw || spec.crop_h > ih {
        return Err(Error::ImageTooSmall {
            image_w: iw,
            image_h: ih,
            crop_w: spec.crop_w,
            crop_h: spec.crop_h,
        });
    }
    if !(spec.min_box_overlap > 0.0 && spec.min_box_overlap <= 1.0) {
        return Err(Error::Config(format!(
            "min_box_overlap {} outside (0, 1]",
            spec.min_box_overlap
        )));
    }
    if spec.n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let (span_x, span_y) = (iw - spec.crop_w + 1, ih - spec.crop_h + 1);

    let origins: Box<dyn Iterator<Item = (u32, u32)>> = match spec.sampler {
        CropSampler::Uniform => {
            let mut rng = SplitMix64::new(spec.seed);
            let budget = spec.n_samples * RETRY_FACTOR;
            Box::new((0..budget).map(move |_| {
                let x = rng.below(u64::from(span_x)) as u32;
                let y = rng.below(u64::from(span_y)) as u32;
                (x, y)
            }))
        }
        CropSampler::Poisson => Box::new(poisson_origins(span_x, span_y, spec)?.into_iter()),
    };

    let mut crops = Vec::with_capacity(spec.n_samples);
    let mut attempts = 0;
    for (x0, y0) in origins {
        if crops.len() == spec.n_samples {
            break;
        }
        attempts += 1;
        let window = TileWindow {
            id: crops.len() as u32,
            x0,
            y0,
            w: spec.crop_w,
            h: spec.crop_h,
        };
        let labels = crop_labels(gts, &window, spec.min_box_overlap);
        if labels.is_empty() && !spec.keep_background {
            continue;
        }
        crops.push(Crop {
            origin: (x0, y0),
            image: read_window(image, &window)?,
            labels,
        });
    }
    let short = match spec.sampler {
        CropSampler::Uniform => crops.len() < spec.n_samples,
        CropSampler::Poisson => crops.is_empty(),
    };
    if short {
        return Err(Error::RetryBudgetExhausted {
            attempts,
            kept: crops.len(),
            requested: spec.n_samples,
        });
    }
    Ok(crops)
}

/// Integer origins from a Poisson disk sample, keeping the minimum distance
/// after rounding to the pixel grid.
fn poisson_origins(span_x: u32, span_y: u32, spec: &CropSpec) -> Result<Vec<(u32, u32)>> {
    let r = f64::from(spec.crop_w.min(spec.crop_h)) / 2.0;
    let cfg = PoissonConfig::new(r, DEFAULT_K, spec.seed)?;
    let points = poisson_disk_sample(f64::from(span_x), f64::from(span_y), &cfg)?;
    let mut kept: Vec<(u32, u32)> = Vec::with_capacity(points.len());
    for p in points {
        let o = (p.x.floor() as u32, p.y.floor() as u32);
        let far = kept.iter().all(|&(x, y)| {
            let dx = f64::from(x) - f64::from(o.0);
            let dy = f64::from(y) - f64::from(o.1);
            dx * dx + dy * dy >= r * r
        });
        if far {
            kept.push(o);
        }
    }
    Ok(kept)
}

/// YOLO text labels: `class cx cy w h`, normalized, six decimals.
pub fn write_yolo_labels(gts: &[GroundTruth], crop_w: u32, crop_h: u32) -> String {
    let (w, h) = (f64::from(crop_w), f64::from(crop_h));
    let mut out = String::new();
    for g in gts {
        let (cx, cy) = g.bbox.center();
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            g.class_id,
            cx / w,
            cy / h,
            g.bbox.width() / w,
            g.bbox.height() / h
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub ratio_label: String,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the manifest after checking every referenced file exists.
    pub fn write(&self, path: &Path) -> Result<()> {
        for e in &self.entries {
            for f in [&e.image, &e.label] {
                if !f.exists() {
                    return Err(Error::MissingFile(f.clone()));
                }
            }
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// Pairs `images/<stem>.*` with `labels/<stem>.txt` under `root`, sorted by
    /// image file name. Images without a label file are skipped.
    pub fn from_dir(root: &Path, provenance: Provenance) -> Result<Self> {
        let root = absolute(root)?;
        let images = root.join("images");
        let labels = root.join("labels");
        let listing = fs::read_dir(&images).map_err(|e| Error::io(format!("listing {}", images.display()), e))?;
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let entries = paths
            .into_iter()
            .filter_map(|image| {
                let stem = image.file_stem()?.to_owned();
                let label = labels.join(stem).with_extension("txt");
                label.exists().then_some(ManifestEntry {
                    image,
                    label,
                    provenance,
                })
            })
            .collect();
        Ok(Self {
            entries,
            ratio_label: match provenance {
                Provenance::Real => "1.0-0".into(),
                Provenance::Synthetic => "0-1.0".into(),
            },
            seed: 0,
        })
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(p.to_path_buf()),
        _ => Error::io(format!("resolving {}", p.display()), e),
    })
}

/// Writes crops as `images/crop_NNNNN.png` and `labels/crop_NNNNN.txt` under
/// `root` and returns a synthetic manifest for them. Manifest paths are
/// absolute.
pub fn write_crops(crops: &[Crop], root: &Path, seed: u64) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
    let root = absolute(root)?;
    let images = root.join("images");
    let labels = root.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    let mut entries = Vec::with_capacity(crops.len());
    for (i, c) in crops.iter().enumerate() {
        let stem = format!("crop_{i:05}");
        let image = images.join(format!("{stem}.png"));
        let label = labels.join(format!("{stem}.txt"));
        write_raster(&c.image, &image)?;
        let text = write_yolo_labels(&c.labels, c.image.width(), c.image.height());
        fs::write(&label, text).map_err(|e| Error::io(format!("writing {}", label.display()), e))?;
        entries.push(ManifestEntry {
            image,
            label,
            provenance: Provenance::Synthetic,
        });
    }
    Ok(DatasetManifest {
        entries,
        ratio_label: "0-1.0".into(),
        seed,
    })
}

fn ratio_part(v: f64) -> String {
    let v = (v * 1e6).round() / 1e6;
    if v == 0.0 {
        "0".into()
    } else if v == 1.0 {
        "1.0".into()
    } else {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').to_string()
    }
}

/// Label such as `"0.6-0.4"`: real share, then synthetic share.
pub fn ratio_label(ratio_real: f64) -> String {
    format!("{}-{}", ratio_part(ratio_real), ratio_part(1.0 - ratio_real))
}

/// Number of real entries for a mix: `floor(ratio_real * total)`, computed so
/// that ratios like 0.29 are not pushed below their decimal value by binary
/// rounding.
pub fn real_count(ratio_real: f64, total: usize) -> usize {
    let exact = ratio_real * total as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() <= 1e-9 * total.max(1) as f64 {
        nearest as usize
    } else {
        exact.floor() as usize
    }
}

fn pick(pool: &[ManifestEntry], n: usize, rng: &mut SplitMix64) -> Vec<ManifestEntry> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    // partial Fisher-Yates: the first n slots become a uniform sample
    for i in 0..n {
        let j = i + rng.below((idx.len() - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| pool[i].clone()).collect()
}

pub fn mix_dataset(
    real: &DatasetManifest,
    synth: &DatasetManifest,
    ratio_real: f64,
    total: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&ratio_real) {
        return Err(Error::Config(format!("ratio_real {ratio_real} outside [0, 1]")));
    }
    let n_real = real_count(ratio_real, total);
    let n_synth = total - n_real;
    for (pool, needed, available) in [
        ("real", n_real, real.entries.len()),
        ("synthetic", n_synth, synth.entries.len()),
    ] {
        if needed > available {
            return Err(Error::InsufficientPool {
                pool,
                needed,
                available,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut entries = pick(&real.entries, n_real, &mut rng);
    entries.extend(pick(&synth.entries, n_synth, &mut rng));
    rng.shuffle(&mut entries);
    Ok(DatasetManifest {
        entries,
        ratio_label: ratio_label(ratio_real),
        seed,
    })
}
