//! Axis-aligned box arithmetic: area, intersection-over-union and the
//! normalized 7-dimensional location feature fed to the region embedding.
//!
//! Coordinates are continuous reals, so a box spans `[x1, x2) x [y1, y2)` and
//! its area is `(x2 - x1) * (y2 - y1)` with no pixel off-by-one adjustment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checks `x2 > x1`, `y2 > y1`, finiteness and non-negativity.
    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Geometry(format!("non-finite coordinate in {self:?}")));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::Geometry(format!("negative coordinate in {self:?}")));
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::Geometry(format!("degenerate box {self:?}")));
        }
        Ok(())
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

    /// Area of the overlap with `other`; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Whether the box lies inside a `width x height` canvas.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// [`iou`] without validation, for boxes already known to be valid.
pub(crate) fn iou_unchecked(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `[x1/W, y1/H, x2/W, y2/H, w/W, h/H, (w*h)/(W*H)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationFeature(pub [f64; 7]);

impl LocationFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn location_feature(bbox: &BoundingBox, width: f64, height: f64) -> Result<LocationFeature> {
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::Geometry(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }
    bbox.validate()?;
    let checks = [
        ("x1", bbox.x1, width),
        ("y1", bbox.y1, height),
        ("x2", bbox.x2, width),
        ("y2", bbox.y2, height),
    ];
    for (name, value, limit) in checks {
        if value > limit {
            return Err(Error::Geometry(format!(
                "{name}={value} exceeds image bound {limit}"
            )));
        }
    }
    let nx1 = bbox.x1 / width;
    let ny1 = bbox.y1 / height;
    let nx2 = bbox.x2 / width;
    let ny2 = bbox.y2 / height;
    let w = nx2 - nx1;
    let h = ny2 - ny1;
    Ok(LocationFeature([nx1, ny1, nx2, ny2, w, h, w * h]))
}
