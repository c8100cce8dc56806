use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Axis-aligned box in pixel coordinates, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Parameter(format!(
                "degenerate box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w as u64 * h as u64
    }
}

/// Smallest box containing every set pixel.
pub fn tight_bbox(m: &Mask) -> Result<BBox> {
    let mut it = m.iter_ones();
    let (x, y) = it.next().ok_or(Error::EmptyMask)?;
    let (mut x0, mut x1, mut y0, mut y1) = (x, x, y, y);
    for (x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Ok(BBox {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32 + 1,
        y1: y1 as u32 + 1,
    })
}

pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}
