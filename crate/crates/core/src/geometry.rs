//! Pixel-space primitives: boxes, centers, distances and IoU.
//!
//! Coordinates use a top-left origin with `y` growing downward, so objects
//! on the conveyor enter near `y = 0` and leave near `y = height`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
            return Err(Error::InvalidPoint { x, y });
        }
        Ok(Self { x, y })
    }

    /// Euclidean distance between two points.
    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned bounding box `(x1, y1, x2, y2)` with `x1 < x2` and `y1 < y2`.
///
/// Zero-area and non-finite boxes are rejected at construction, so every
/// `BBox` in the system has positive area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let err = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(err("coordinates must be finite"));
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(err("coordinates must be non-negative"));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(err("box has zero or negative area"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box of the given size centred on `(cx, cy)`, clipped to the image.
    ///
    /// Returns `None` if nothing of the box is left inside the image.
    pub fn centered_clipped(
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
        image: &ImageGeometry,
    ) -> Option<Self> {
        let x1 = (cx - width / 2.0).max(0.0);
        let y1 = (cy - height / 2.0).max(0.0);
        let x2 = (cx + width / 2.0).min(image.width());
        let y2 = (cy + height / 2.0).min(image.height());
        Self::new(x1, y1, x2, y2).ok()
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Midpoint of the box.
    #[inline]
    pub fn center(&self) -> Point {
        Point {
            x: (self.x1 + self.x2) / 2.0,
            y: (self.y1 + self.y2) / 2.0,
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = self.x2.min(other.x2) - self.x1.max(other.x1);
        let ih = self.y2.min(other.y2) - self.y1.max(other.y1);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// True if the box lies entirely inside the image.
    pub fn within(&self, image: &ImageGeometry) -> bool {
        self.x2 <= image.width() && self.y2 <= image.height()
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
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Image size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct ImageGeometry {
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct RawGeometry {
    width: f64,
    height: f64,
}

impl TryFrom<RawGeometry> for ImageGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        ImageGeometry::new(raw.width, raw.height)
    }
}

impl ImageGeometry {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }
}

impl Default for ImageGeometry {
    /// 800x600, the frame size the default thresholds are tuned for.
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 600.0,
        }
    }
}

/// Midpoint of `b`.
pub fn center(b: &BBox) -> Point {
    b.center()
}

/// Euclidean distance between `a` and `b`.
pub fn distance(a: &Point, b: &Point) -> f64 {
    a.distance(b)
}

/// Intersection over union of `a` and `b`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(center(&bb(0., 0., 10., 10.)), Point { x: 5., y: 5. });
        assert_eq!(center(&bb(100., 190., 120., 210.)), Point { x: 110., y: 200. });
        assert_eq!(center(&bb(3., 7., 9., 15.)), Point { x: 6., y: 11. });
    }

    #[test]
    fn distance_examples() {
        let p = |x, y| Point::new(x, y).unwrap();
        assert_eq!(distance(&p(100., 100.), &p(100., 100.)), 0.0);
        assert!((distance(&p(100., 100.), &p(105., 110.)) - 125f64.sqrt()).abs() < 1e-12);
        assert!((distance(&p(100., 100.), &p(105., 110.)) - 11.1803).abs() < 1e-4);
        assert_eq!(distance(&p(0., 0.), &p(0., 30.)), 30.0);
    }

    #[test]
    fn iou_examples() {
        let a = bb(0., 0., 10., 10.);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &bb(5., 0., 15., 10.)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &bb(20., 20., 30., 30.)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bb(10., 0., 20., 10.)), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(5., 5., 5., 10.).is_err());
        assert!(BBox::new(5., 5., 10., 5.).is_err());
        assert!(BBox::new(6., 5., 5., 10.).is_err());
        assert!(BBox::new(-1., 0., 5., 10.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 10.).is_err());
        assert!(BBox::new(0., 0., f64::INFINITY, 10.).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(ImageGeometry::new(0., 600.).is_err());
        assert!(ImageGeometry::new(800., -1.).is_err());
        assert!(ImageGeometry::new(800., 600.).is_ok());
        assert!(Point::new(-0.5, 1.0).is_err());
    }

    #[test]
    fn bbox_serde_is_array_and_validates() {
        let b = bb(1., 2., 3., 4.5);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.5]");
        let back: BBox = serde_json::from_str("[1,2,3,4.5]").unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<BBox>("[3,2,1,4]").is_err());
    }

    #[test]
    fn clipping_at_image_edges() {
        let img = ImageGeometry::default();
        let b = BBox::centered_clipped(100., 590., 30., 40., &img).unwrap();
        assert_eq!(b.y2(), 600.0);
        assert_eq!(b.y1(), 570.0);
        assert!(BBox::centered_clipped(100., 640., 30., 40., &img).is_none());
    }
}
