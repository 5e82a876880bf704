//! Axis-aligned boxes, the clamped center/side-distance parameterization and
//! overlap measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn w(&self) -> f64 {
        self.width as f64
    }

    pub fn h(&self) -> f64 {
        self.height as f64
    }

    /// True when the point lies in the closed image rectangle `[0,w]×[0,h]`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.w()).contains(&x) && (0.0..=self.h()).contains(&y)
    }
}

/// Corner-form box from `(x1, y1)` to `(x2, y2)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting inverted or non-finite corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("box coordinate".into()));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::InvalidArgument(format!(
                "inverted box ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// From MOT-style `(left, top, width, height)`.
    pub fn from_ltwh(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(left, top, left + width, top + height)
    }

    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
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

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn cxcywh(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width(), self.height()]
    }

    /// Clips the box to `[0,w]×[0,h]`.
    pub fn clip(&self, img: ImageSize) -> BBox {
        let cx = |v: f64| v.clamp(0.0, img.w());
        let cy = |v: f64| v.clamp(0.0, img.h());
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    /// Corners divided by the image extent.
    pub fn normalized(&self, img: ImageSize) -> [f64; 4] {
        [
            self.x1 / img.w(),
            self.y1 / img.h(),
            self.x2 / img.w(),
            self.y2 / img.h(),
        ]
    }

    fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou − (hull − union)/hull`. Zero for a degenerate hull.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        return 0.0;
    }
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

/// Center point clamped into the image plus distances to the four sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterSidesBox {
    pub cx: f64,
    pub cy: f64,
    pub dl: f64,
    pub dt: f64,
    pub dr: f64,
    pub db: f64,
}

/// Encodes a box as a clamped center and side distances.
///
/// The true center is clamped to `[0,w]×[0,h]`; when the whole box lies
/// outside the image the clamped center is further pulled onto the nearest
/// box side so all four distances stay non-negative.
pub fn encode_box(b: &BBox, img: ImageSize) -> CenterSidesBox {
    let (tx, ty) = b.center();
    let cx = tx.clamp(0.0, img.w()).clamp(b.x1, b.x2);
    let cy = ty.clamp(0.0, img.h()).clamp(b.y1, b.y2);
    CenterSidesBox {
        cx,
        cy,
        dl: cx - b.x1,
        dt: cy - b.y1,
        dr: b.x2 - cx,
        db: b.y2 - cy,
    }
}

pub fn decode_box(c: &CenterSidesBox) -> BBox {
    BBox {
        x1: c.cx - c.dl,
        y1: c.cy - c.dt,
        x2: c.cx + c.dr,
        y2: c.cy + c.db,
    }
}
