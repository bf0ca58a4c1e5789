//! Axis-aligned bounding boxes in image coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TregError};

/// Box in center form: `(cx, cy)` center and `(w, h)` extents, all in pixels.
/// Extents are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !(cx.is_finite() && cy.is_finite()) {
            return Err(TregError::Precondition(format!(
                "degenerate box: cx={cx} cy={cy} w={w} h={h}"
            )));
        }
        Ok(BBox { cx, cy, w, h })
    }

    /// Build from corner form `(x1, y1, x2, y2)`; requires `x1 < x2`, `y1 < y2`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x1, y1, x2, y2) = self.corners();
        x >= x1 && x <= x2 && y >= y1 && y <= y2
    }

    /// Box scaled by `s` around its own center.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        BBox::new(self.cx, self.cy, self.w * s, self.h * s)
    }

    /// Box translated by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_round_trip() {
        let b = BBox::new(10.0, 20.0, 4.0, 6.0).unwrap();
        let (x1, y1, x2, y2) = b.corners();
        assert_eq!((x1, y1, x2, y2), (8.0, 17.0, 12.0, 23.0));
        let b2 = BBox::from_corners(x1, y1, x2, y2).unwrap();
        assert_eq!(b, b2);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BBox::from_corners(3.0, 0.0, 3.0, 5.0).is_err());
    }
}
