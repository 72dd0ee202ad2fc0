//! Tiled detection on very large images: Poisson disk tile planning, remapping
//! of per-tile detections, EIOU-NMS ensemble fusion, evaluation, rendering and
//! synthetic crop generation.

pub mod detmodel;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod geometry;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod sampler;
pub mod synthgen;

pub use detmodel::{Detection, DetectionSet, Frame, GroundTruth};
pub use error::{Error, Result};
pub use evalkit::{EvalConfig, EvalReport};
pub use fusion::FusionConfig;
pub use geometry::{eiou, iou, BBox, TileWindow};
pub use sampler::{plan_tiles, PoissonConfig, TilePlan};
