//! Axis-aligned box algebra in continuous pixel coordinates.
//!
//! Origin is the top-left corner, x grows rightward and y downward. A box is
//! the closed rectangle `[xmin, xmax] x [ymin, ymax]` and its area is the exact
//! extent product (no `+1` pixel convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with strictly positive, finite extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            xmin,
            ymin,
            xmax,
            ymax,
            reason,
        };
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if xmax <= xmin || ymax <= ymin {
            return Err(invalid("zero or negative extent"));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    #[inline]
    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    #[inline]
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    #[inline]
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    #[inline]
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    #[inline]
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// Shift by `(dx, dy)`. Fails only if the shifted coordinates stop being
    /// representable with positive extent.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.xmin + dx,
            self.ymin + dy,
            self.xmax + dx,
            self.ymax + dy,
        )
    }

    /// Overlap with `other`, or `None` when the overlap has zero area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        BBox::new(xmin, ymin, xmax, ymax).ok()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Integer window of an image, fully in bounds of the image it was planned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileWindow {
    pub id: u32,
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl TileWindow {
    pub fn fits_in(&self, image_w: u32, image_h: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && u64::from(self.x0) + u64::from(self.w) <= u64::from(image_w)
            && u64::from(self.y0) + u64::from(self.h) <= u64::from(image_h)
    }

    pub fn as_bbox(&self) -> BBox {
        BBox {
            xmin: f64::from(self.x0),
            ymin: f64::from(self.y0),
            xmax: f64::from(self.x0) + f64::from(self.w),
            ymax: f64::from(self.y0) + f64::from(self.h),
        }
    }
}

pub fn area(b: &BBox) -> f64 {
    b.width() * b.height()
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    w * h
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest axis-aligned box containing both inputs.
pub fn enclosing(a: &BBox, b: &BBox) -> BBox {
    BBox {
        xmin: a.xmin.min(b.xmin),
        ymin: a.ymin.min(b.ymin),
        xmax: a.xmax.max(b.xmax),
        ymax: a.ymax.max(b.ymax),
    }
}

/// Efficient IoU: IoU minus center-distance, width and height penalties, each
/// normalized by the enclosing box. Lies in `(-3, 1]` and equals 1 only for
/// identical boxes.
pub fn eiou(a: &BBox, b: &BBox) -> f64 {
    let c = enclosing(a, b);
    let (cw, ch) = (c.width(), c.height());
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let center_dist2 = (ax - bx).powi(2) + (ay - by).powi(2);
    let diag2 = cw * cw + ch * ch;
    let dw = a.width() - b.width();
    let dh = a.height() - b.height();
    iou(a, b) - center_dist2 / diag2 - (dw * dw) / (cw * cw) - (dh * dh) / (ch * ch)
}

/// Translate a tile-local box by the tile origin and clip it to the image.
pub fn remap_to_global(tile: &TileWindow, b: &BBox, image_w: u32, image_h: u32) -> Result<BBox> {
    let dx = f64::from(tile.x0);
    let dy = f64::from(tile.y0);
    let (w, h) = (f64::from(image_w), f64::from(image_h));
    let xmin = (b.xmin + dx).clamp(0.0, w);
    let ymin = (b.ymin + dy).clamp(0.0, h);
    let xmax = (b.xmax + dx).clamp(0.0, w);
    let ymax = (b.ymax + dy).clamp(0.0, h);
    BBox::new(xmin, ymin, xmax, ymax).map_err(|_| Error::ClippedToNothing { image_w, image_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(v: [f64; 4]) -> BBox {
        BBox::try_from(v).unwrap()
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&bx([0.0, 0.0, 2.0, 2.0])), 4.0);
        assert_eq!(area(&bx([0.0, 0.0, 1.0, 3.0])), 3.0);
        assert_eq!(area(&bx([1.5, 1.5, 2.5, 4.0])), 2.5);
    }

    #[test]
    fn iou_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 2.0, 3.0, 3.0])), 0.0);
        let v = iou(&a, &bx([1.0, 1.0, 3.0, 3.0]));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn enclosing_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(enclosing(&a, &bx([1.0, 1.0, 3.0, 3.0])), bx([0.0, 0.0, 3.0, 3.0]));
        let outer = bx([-1.0, -1.0, 5.0, 5.0]);
        assert_eq!(enclosing(&a, &outer), outer);
        assert_eq!(
            enclosing(&bx([0.0, 0.0, 1.0, 1.0]), &bx([9.0, 9.0, 10.0, 10.0])),
            bx([0.0, 0.0, 10.0, 10.0])
        );
    }

    #[test]
    fn eiou_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(eiou(&a, &a), 1.0);
        // overlap 1, union 7, enclosing [0,0,3,3]: diag^2 18, center distance^2 2
        let v = eiou(&a, &bx([1.0, 1.0, 3.0, 3.0]));
        assert!((v - (1.0 / 7.0 - 2.0 / 18.0)).abs() < 1e-12);
        assert!((v - 0.031746).abs() < 1e-6);
        let far = eiou(&bx([0.0, 0.0, 1.0, 1.0]), &bx([9.0, 9.0, 10.0, 10.0]));
        assert!((far + 0.81).abs() < 1e-12);
    }

    #[test]
    fn remap_examples() {
        let t = TileWindow { id: 0, x0: 100, y0: 200, w: 640, h: 640 };
        let g = remap_to_global(&t, &bx([10.0, 10.0, 50.0, 50.0]), 4096, 4096).unwrap();
        assert_eq!(g, bx([110.0, 210.0, 150.0, 250.0]));

        let origin = TileWindow { id: 0, x0: 0, y0: 0, w: 64, h: 64 };
        let b = bx([3.25, 4.5, 10.0, 11.0]);
        assert_eq!(remap_to_global(&origin, &b, 64, 64).unwrap(), b);

        let edge = TileWindow { id: 0, x0: 950, y0: 0, w: 50, h: 50 };
        let g = remap_to_global(&edge, &bx([40.0, 10.0, 120.0, 50.0]), 1000, 1000).unwrap();
        assert_eq!(g, bx([990.0, 10.0, 1000.0, 50.0]));
    }

    #[test]
    fn remap_outside_image_is_an_error() {
        let t = TileWindow { id: 0, x0: 0, y0: 0, w: 50, h: 50 };
        let err = remap_to_global(&t, &bx([-20.0, 5.0, -10.0, 15.0]), 100, 100).unwrap_err();
        assert!(matches!(err, Error::ClippedToNothing { .. }));
    }

    #[test]
    fn serde_uses_flat_array() {
        let b = bx([1.0, 2.0, 3.0, 4.5]);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.5]");
        assert!(serde_json::from_str::<BBox>("[1,2,1,4]").is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn eiou_symmetric_and_below_iou(a in arb_box(), b in arb_box()) {
            let e = eiou(&a, &b);
            prop_assert!((e - eiou(&b, &a)).abs() < 1e-12);
            prop_assert!(e <= iou(&a, &b));
            prop_assert!(e > -3.0 && e <= 1.0);
            if a != b {
                prop_assert!(e < iou(&a, &b));
            }
        }

        #[test]
        fn remap_inverse_without_clipping(
            b in arb_box(), x0 in 0u32..500, y0 in 0u32..500
        ) {
            let t = TileWindow { id: 3, x0, y0, w: 200, h: 200 };
            let g = remap_to_global(&t, &b, 2000, 2000).unwrap();
            let back = g.translate(-f64::from(x0), -f64::from(y0)).unwrap();
            for (u, v) in back.to_array().iter().zip(b.to_array()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
