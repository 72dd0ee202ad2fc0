//! Poisson disk sampling over a rectangular domain and the tile plans built
//! from it.
//!
//! Sampling follows Bridson's algorithm: a background grid with cell side
//! `r/sqrt(2)` (so each cell holds at most one sample), a seeded uniform first
//! point, and `k` candidates per active sample drawn area-uniformly from the
//! annulus `[r, 2r)`. Bridson on its own stops once every active sample has
//! failed `k` draws, which can leave small voids. A gap-fill sweep then visits
//! every grid cell and inserts a sample wherever some point of the cell is
//! still at distance `>= r` from all samples, restarting the active-list
//! growth from it. The result is a maximal sample: every point of the domain
//! is within distance `< r` of a sample.
//!
//! Maximality is what makes tile plans cover the image. If `r <= tile/2`,
//! every pixel center lies within `< r` of a sampled tile center and therefore
//! inside that center's window.

use std::f64::consts::{SQRT_2, TAU};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TileWindow;
use crate::rng::SplitMix64;

pub const DEFAULT_K: u32 = 30;

/// Sub-rectangles of a grid cell smaller than `radius * MIN_REFINE` are not
/// refined further during gap filling.
const MIN_REFINE: f64 = 1e-7;
/// Relative tolerance separating "clearly covered" from "clearly open"
/// candidate points during gap filling.
const MARGIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonConfig {
    pub radius: f64,
    pub k: u32,
    pub seed: u64,
}

impl PoissonConfig {
    pub fn new(radius: f64, k: u32, seed: u64) -> Result<Self> {
        let cfg = Self { radius, k, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Config(format!(
                "poisson radius must be positive, got {}",
                self.radius
            )));
        }
        if self.k < 1 {
            return Err(Error::Config("poisson k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    fn dist2(&self, x: f64, y: f64) -> f64 {
        (self.x - x).powi(2) + (self.y - y).powi(2)
    }
}

struct Grid {
    cell: f64,
    cols: usize,
    rows: usize,
    slots: Vec<u32>,
}

const EMPTY: u32 = u32::MAX;

impl Grid {
    fn new(w: f64, h: f64, r: f64) -> Self {
        let cell = r / SQRT_2;
        let cols = ((w / cell).ceil() as usize).max(1);
        let rows = ((h / cell).ceil() as usize).max(1);
        Self {
            cell,
            cols,
            rows,
            slots: vec![EMPTY; cols * rows],
        }
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let cx = ((x / self.cell) as usize).min(self.cols - 1);
        let cy = ((y / self.cell) as usize).min(self.rows - 1);
        (cx, cy)
    }

    /// Indices of samples in the 5x5 block of cells around `(cx, cy)`; this
    /// reaches every sample within distance `r` of any point in the cell.
    fn neighbors(&self, cx: usize, cy: usize, out: &mut Vec<u32>) {
        out.clear();
        let x_lo = cx.saturating_sub(2);
        let x_hi = (cx + 2).min(self.cols - 1);
        let y_lo = cy.saturating_sub(2);
        let y_hi = (cy + 2).min(self.rows - 1);
        for gy in y_lo..=y_hi {
            for gx in x_lo..=x_hi {
                let s = self.slots[gy * self.cols + gx];
                if s != EMPTY {
                    out.push(s);
                }
            }
        }
    }
}

struct Sampler {
    w: f64,
    h: f64,
    r: f64,
    r2: f64,
    k: u32,
    rng: SplitMix64,
    grid: Grid,
    points: Vec<Point>,
    active: Vec<u32>,
    scratch: Vec<u32>,
}

impl Sampler {
    fn new(w: f64, h: f64, cfg: &PoissonConfig) -> Self {
        Self {
            w,
            h,
            r: cfg.radius,
            r2: cfg.radius * cfg.radius,
            k: cfg.k,
            rng: SplitMix64::new(cfg.seed),
            grid: Grid::new(w, h, cfg.radius),
            points: Vec::new(),
            active: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn in_domain(&self, x: f64, y: f64) -> bool {
        (0.0..self.w).contains(&x) && (0.0..self.h).contains(&y)
    }

    /// Inserts `(x, y)` if it is in the domain, its cell is free and every
    /// existing sample is at distance `>= r`.
    fn try_insert(&mut self, x: f64, y: f64) -> bool {
        if !self.in_domain(x, y) {
            return false;
        }
        let (cx, cy) = self.grid.cell_of(x, y);
        if self.grid.slots[cy * self.grid.cols + cx] != EMPTY {
            return false;
        }
        let mut near = std::mem::take(&mut self.scratch);
        self.grid.neighbors(cx, cy, &mut near);
        let clear = near
            .iter()
            .all(|&i| self.points[i as usize].dist2(x, y) >= self.r2);
        self.scratch = near;
        if !clear {
            return false;
        }
        let idx = self.points.len() as u32;
        self.points.push(Point { x, y });
        self.grid.slots[cy * self.grid.cols + cx] = idx;
        self.active.push(idx);
        true
    }

    fn grow(&mut self) {
        while !self.active.is_empty() {
            let slot = self.rng.below(self.active.len() as u64) as usize;
            let p = self.points[self.active[slot] as usize];
            let mut placed = false;
            for _ in 0..self.k {
                let theta = TAU * self.rng.next_f64();
                // area-uniform over the annulus [r, 2r)
                let rad = self.r * (1.0 + 3.0 * self.rng.next_f64()).sqrt();
                if self.try_insert(p.x + rad * theta.cos(), p.y + rad * theta.sin()) {
                    placed = true;
                    break;
                }
            }
            if !placed {
                self.active.swap_remove(slot);
            }
        }
    }

    fn fill_gaps(&mut self) {
        let mut near = Vec::new();
        for cy in 0..self.grid.rows {
            for cx in 0..self.grid.cols {
                loop {
                    let cell = self.grid.cell;
                    let rect = Rect {
                        x0: cx as f64 * cell,
                        y0: cy as f64 * cell,
                        x1: ((cx + 1) as f64 * cell).min(self.w),
                        y1: ((cy + 1) as f64 * cell).min(self.h),
                    };
                    if rect.x1 <= rect.x0 || rect.y1 <= rect.y0 {
                        break;
                    }
                    self.grid.neighbors(cx, cy, &mut near);
                    let centers: Vec<Point> =
                        near.iter().map(|&i| self.points[i as usize]).collect();
                    match find_open_point(&rect, &centers, self.r, self.w, self.h) {
                        Some(p) if self.try_insert(p.x, p.y) => self.grow(),
                        _ => break,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

/// Finds a point of `rect` (inside the half-open domain) whose distance to
/// every center is at least `r`, or `None` when `rect` is covered by the open
/// disks up to refinement precision.
///
/// The uncovered part of a rectangle, if nonempty, has a vertex among the
/// rectangle corners, circle/edge intersections and circle/circle
/// intersections, so those are the only candidates that need testing. When
/// the best candidate sits on a circle (margin within tolerance of zero) the
/// rectangle is split and the halves re-examined.
fn find_open_point(rect: &Rect, centers: &[Point], r: f64, dom_w: f64, dom_h: f64) -> Option<Point> {
    let tol = r * MARGIN_TOL;
    let relevant: Vec<Point> = centers
        .iter()
        .copied()
        .filter(|c| {
            let nx = c.x.clamp(rect.x0, rect.x1);
            let ny = c.y.clamp(rect.y0, rect.y1);
            c.dist2(nx, ny) < (r + tol).powi(2)
        })
        .collect();
    if relevant.is_empty() {
        let p = Point {
            x: 0.5 * (rect.x0 + rect.x1),
            y: 0.5 * (rect.y0 + rect.y1),
        };
        return Some(p);
    }

    // A rectangle inside a single disk is covered.
    let corners = [
        (rect.x0, rect.y0),
        (rect.x1, rect.y0),
        (rect.x0, rect.y1),
        (rect.x1, rect.y1),
    ];
    let r2 = r * r;
    if relevant
        .iter()
        .any(|c| corners.iter().all(|&(x, y)| c.dist2(x, y) < r2))
    {
        return None;
    }

    let margin = |x: f64, y: f64| -> f64 {
        relevant
            .iter()
            .map(|c| c.dist2(x, y).sqrt())
            .fold(f64::INFINITY, f64::min)
            - r
    };
    let inside = |x: f64, y: f64| x >= rect.x0 && x <= rect.x1 && y >= rect.y0 && y <= rect.y1;
    // The domain is half-open. A vertex on its far edge is pulled just inside
    // rather than dropped: dropping it can hide a gap whose only vertices lie
    // on that edge, while the pulled point has margin ~0 and forces a split.
    let below = |v: f64, limit: f64| if v < limit { v } else { f64::from_bits(limit.to_bits() - 1) };

    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(16 + relevant.len() * relevant.len());
    candidates.extend_from_slice(&corners);
    candidates.push((0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1)));
    for c in &relevant {
        for &x in &[rect.x0, rect.x1] {
            let d = r2 - (x - c.x).powi(2);
            if d >= 0.0 {
                let s = d.sqrt();
                candidates.push((x, c.y - s));
                candidates.push((x, c.y + s));
            }
        }
        for &y in &[rect.y0, rect.y1] {
            let d = r2 - (y - c.y).powi(2);
            if d >= 0.0 {
                let s = d.sqrt();
                candidates.push((c.x - s, y));
                candidates.push((c.x + s, y));
            }
        }
    }
    for (i, a) in relevant.iter().enumerate() {
        for b in &relevant[i + 1..] {
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let d2 = dx * dx + dy * dy;
            if d2 == 0.0 || d2 > 4.0 * r2 {
                continue;
            }
            let d = d2.sqrt();
            let along = 0.5 * d;
            let off = (r2 - along * along).max(0.0).sqrt();
            let (mx, my) = (a.x + dx * 0.5, a.y + dy * 0.5);
            let (ux, uy) = (-dy / d, dx / d);
            candidates.push((mx + ux * off, my + uy * off));
            candidates.push((mx - ux * off, my - uy * off));
        }
    }

    let mut best: Option<(f64, f64, f64)> = None;
    for &(x, y) in &candidates {
        if !inside(x, y) {
            continue;
        }
        let (x, y) = (below(x, dom_w), below(y, dom_h));
        let m = margin(x, y);
        if best.map_or(true, |(bm, _, _)| m > bm) {
            best = Some((m, x, y));
        }
    }
    let (best_margin, bx, by) = best?;
    if best_margin > tol {
        return Some(Point { x: bx, y: by });
    }
    if best_margin < -tol {
        return None;
    }
    if (rect.x1 - rect.x0).max(rect.y1 - rect.y0) < r * MIN_REFINE {
        return None;
    }
    let mx = 0.5 * (rect.x0 + rect.x1);
    let my = 0.5 * (rect.y0 + rect.y1);
    let quads = [
        Rect { x0: rect.x0, y0: rect.y0, x1: mx, y1: my },
        Rect { x0: mx, y0: rect.y0, x1: rect.x1, y1: my },
        Rect { x0: rect.x0, y0: my, x1: mx, y1: rect.y1 },
        Rect { x0: mx, y0: my, x1: rect.x1, y1: rect.y1 },
    ];
    quads
        .iter()
        .find_map(|q| find_open_point(q, &relevant, r, dom_w, dom_h))
}

/// Maximal Poisson disk sample of `[0, domain_w) x [0, domain_h)`.
///
/// Every pair of returned points is at distance `>= cfg.radius`. The sequence
/// is a pure function of the arguments.
pub fn poisson_disk_sample(domain_w: f64, domain_h: f64, cfg: &PoissonConfig) -> Result<Vec<Point>> {
    cfg.validate()?;
    if !(domain_w.is_finite() && domain_w > 0.0 && domain_h.is_finite() && domain_h > 0.0) {
        return Err(Error::Config(format!(
            "sampling domain must be positive, got {domain_w}x{domain_h}"
        )));
    }
    let mut s = Sampler::new(domain_w, domain_h, cfg);
    let x = domain_w * s.rng.next_f64();
    let y = domain_h * s.rng.next_f64();
    s.try_insert(x, y);
    s.grow();
    s.fill_gaps();
    Ok(s.points)
}

/// Fixed-size windows centered on Poisson disk samples of the image domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub image_w: u32,
    pub image_h: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub radius: f64,
    pub k: u32,
    pub seed: u64,
    pub tiles: Vec<TileWindow>,
}

impl TilePlan {
    pub fn config(&self) -> PoissonConfig {
        PoissonConfig {
            radius: self.radius,
            k: self.k,
            seed: self.seed,
        }
    }

    pub fn tile(&self, id: u32) -> Option<&TileWindow> {
        self.tiles.get(id as usize).filter(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tiles.iter().enumerate() {
            if t.id as usize != i {
                return Err(Error::Config(format!(
                    "tile at position {i} has id {}",
                    t.id
                )));
            }
            if !t.fits_in(self.image_w, self.image_h) {
                return Err(Error::Config(format!(
                    "tile {} ({},{},{},{}) is outside the {}x{} image",
                    t.id, t.x0, t.y0, t.w, t.h, self.image_w, self.image_h
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: TilePlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

/// Default radius for a tile size: the largest radius that still guarantees
/// full coverage.
pub fn default_radius(tile_w: u32, tile_h: u32) -> f64 {
    f64::from(tile_w.min(tile_h)) / 2.0
}

fn place(center: f64, size: u32, extent: u32) -> u32 {
    let max_origin = f64::from(extent - size);
    (center - f64::from(size) / 2.0).round().clamp(0.0, max_origin) as u32
}

pub fn plan_tiles(
    image_w: u32,
    image_h: u32,
    tile_w: u32,
    tile_h: u32,
    cfg: &PoissonConfig,
) -> Result<TilePlan> {
    if image_w == 0 || image_h == 0 || tile_w == 0 || tile_h == 0 {
        return Err(Error::Config(format!(
            "image {image_w}x{image_h} and tile {tile_w}x{tile_h} must be nonempty"
        )));
    }
    let w = tile_w.min(image_w);
    let h = tile_h.min(image_h);
    let centers = poisson_disk_sample(f64::from(image_w), f64::from(image_h), cfg)?;
    let mut windows: Vec<(u32, u32)> = centers
        .iter()
        .map(|p| (place(p.y, h, image_h), place(p.x, w, image_w)))
        .collect();
    windows.sort_unstable();
    windows.dedup();
    let tiles = windows
        .into_iter()
        .enumerate()
        .map(|(i, (y0, x0))| TileWindow {
            id: i as u32,
            x0,
            y0,
            w,
            h,
        })
        .collect();
    Ok(TilePlan {
        image_w,
        image_h,
        tile_w,
        tile_h,
        radius: cfg.radius,
        k: cfg.k,
        seed: cfg.seed,
        tiles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub covered: bool,
    /// First uncovered pixel center in row-major order.
    pub first_uncovered: Option<(f64, f64)>,
}

/// Checks that every pixel center `(x + 0.5, y + 0.5)` lies in some tile.
///
/// A window `[x0, x0 + w]` contains the center of pixel `i` exactly when
/// `x0 <= i < x0 + w`, so the scan works on integer intervals: rows are
/// grouped into bands between tile edges, and each band merges the column
/// intervals of the tiles spanning it.
pub fn verify_coverage(plan: &TilePlan) -> Coverage {
    let (iw, ih) = (plan.image_w, plan.image_h);
    let mut cuts: Vec<u32> = vec![0, ih];
    for t in &plan.tiles {
        cuts.push(t.y0.min(ih));
        cuts.push((t.y0 + t.h).min(ih));
    }
    cuts.sort_unstable();
    cuts.dedup();

    for band in cuts.windows(2) {
        let (y_lo, y_hi) = (band[0], band[1]);
        if y_lo >= y_hi {
            continue;
        }
        let mut spans: Vec<(u32, u32)> = plan
            .tiles
            .iter()
            .filter(|t| t.y0 <= y_lo && y_lo < t.y0 + t.h)
            .map(|t| (t.x0, t.x0 + t.w))
            .collect();
        spans.sort_unstable();
        let mut reach = 0u32;
        for (a, b) in spans {
            if a > reach {
                break;
            }
            reach = reach.max(b);
        }
        if reach < iw {
            return Coverage {
                covered: false,
                first_uncovered: Some((f64::from(reach) + 0.5, f64::from(y_lo) + 0.5)),
            };
        }
    }
    Coverage {
        covered: true,
        first_uncovered: None,
    }
}
