//! In-memory 8-bit RGB rasters with window extraction and box rendering.

use std::io::ErrorKind;
use std::path::Path;

use image::{ImageError, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BBox, TileWindow};

/// Row-major RGB8 pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

pub type Rgb = [u8; 3];

/// Outline colors, indexed by `class_id % PALETTE.len()`.
pub const PALETTE: [Rgb; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

pub const OUTLINE_PX: i64 = 2;

impl Raster {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "raster must be at least 1x1, got {width}x{height}"
            )));
        }
        let data = fill
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_rgb8(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize * 3 {
            return Err(Error::Config(format!(
                "{} bytes do not form a {width}x{height} RGB raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> Option<Rgb> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let o = self.offset(x, y);
        Some([self.data[o], self.data[o + 1], self.data[o + 2]])
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: Rgb) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
        true
    }

    /// Fills the pixels whose centers lie inside `b`, clipped to the raster.
    pub fn fill_box(&mut self, b: &BBox, rgb: Rgb) {
        let Some((x0, y0, x1, y1)) = self.pixel_span(b) else {
            return;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.set_pixel(x as u32, y as u32, rgb);
            }
        }
    }

    /// Inclusive pixel range touched by `b`, clipped to the raster.
    fn pixel_span(&self, b: &BBox) -> Option<(i64, i64, i64, i64)> {
        let x0 = (b.xmin().floor() as i64).max(0);
        let y0 = (b.ymin().floor() as i64).max(0);
        let x1 = (b.xmax().ceil() as i64 - 1).min(i64::from(self.width) - 1);
        let y1 = (b.ymax().ceil() as i64 - 1).min(i64::from(self.height) - 1);
        (x0 <= x1 && y0 <= y1).then_some((x0, y0, x1, y1))
    }

    fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("raster buffer has width*height*3 bytes")
    }
}

fn decode_error(e: ImageError) -> Error {
    match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        other => Error::CorruptImage(other.to_string()),
    }
}

fn open_checked(path: &Path) -> Result<ImageReader<std::io::BufReader<std::fs::File>>> {
    let reader = ImageReader::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::io(format!("opening {}", path.display()), e),
    })?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Tiff) => Ok(reader),
        Some(other) => Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => Err(Error::UnsupportedFormat(format!("{}", path.display()))),
    }
}

/// Decodes a PNG or TIFF file into RGB8. Grayscale and alpha inputs are
/// converted; other formats are rejected. The format comes from the file
/// content, falling back to the extension.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = open_checked(path)?.decode().map_err(decode_error)?.to_rgb8();
    let (width, height) = img.dimensions();
    Raster::from_rgb8(width, height, img.into_raw())
}

/// Reads only the header to get `(width, height)`.
pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    open_checked(path)?.into_dimensions().map_err(decode_error)
}

/// Writes an RGB8 PNG.
pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    raster
        .to_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::io(format!("writing {}", path.display()), io),
            other => Error::CorruptImage(other.to_string()),
        })
}

pub fn read_window(r: &Raster, t: &TileWindow) -> Result<Raster> {
    if !t.fits_in(r.width, r.height) {
        return Err(Error::OutOfBounds {
            x0: t.x0,
            y0: t.y0,
            w: t.w,
            h: t.h,
            width: r.width,
            height: r.height,
        });
    }
    let row = t.w as usize * 3;
    let mut data = Vec::with_capacity(row * t.h as usize);
    for y in t.y0..t.y0 + t.h {
        let o = r.offset(t.x0, y);
        data.extend_from_slice(&r.data[o..o + row]);
    }
    Raster::from_rgb8(t.w, t.h, data)
}

/// One box to draw. The score is carried for callers that label boxes; the
/// outline itself depends only on the box and class.
#[derive(Debug, Clone, Copy)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: Option<f64>,
}

pub fn palette_color(class_id: u32) -> Rgb {
    PALETTE[class_id as usize % PALETTE.len()]
}

/// Returns a copy of `r` with a 2-pixel outline drawn inside each box.
///
/// A box covers the pixels from `floor(xmin)` to `ceil(xmax) - 1` (same for
/// y); the outline is the outermost two rings of that range. Rings falling
/// outside the image are simply not drawn.
pub fn render_annotations(r: &Raster, boxes: &[Annotation]) -> Raster {
    let mut out = r.clone();
    for a in boxes {
        let color = palette_color(a.class_id);
        let bx0 = a.bbox.xmin().floor() as i64;
        let by0 = a.bbox.ymin().floor() as i64;
        let bx1 = a.bbox.xmax().ceil() as i64 - 1;
        let by1 = a.bbox.ymax().ceil() as i64 - 1;
        let Some((x0, y0, x1, y1)) = out.pixel_span(&a.bbox) else {
            continue;
        };
        for y in y0..=y1 {
            let edge_row = y < by0 + OUTLINE_PX || y > by1 - OUTLINE_PX;
            for x in x0..=x1 {
                if edge_row || x < bx0 + OUTLINE_PX || x > bx1 - OUTLINE_PX {
                    out.set_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    out
}
