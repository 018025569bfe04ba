//! Run-length encoded binary masks and hand-box regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major run-length mask. Runs alternate background/foreground and
/// always start with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn new(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        let mask = RleMask {
            width,
            height,
            counts,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn empty(width: u32, height: u32) -> Self {
        RleMask {
            width,
            height,
            counts: vec![width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let pixels = self.width as u64 * self.height as u64;
        if total != pixels {
            return Err(Error::Validation(format!(
                "mask runs cover {total} pixels, image has {pixels}"
            )));
        }
        Ok(())
    }

    pub fn from_bitmap(width: u32, height: u32, pixels: &[bool]) -> Result<Self> {
        if pixels.len() != (width * height) as usize {
            return Err(Error::Shape(format!(
                "bitmap has {} pixels, expected {width}x{height}",
                pixels.len()
            )));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &p in pixels {
            if p != current {
                counts.push(run);
                run = 0;
                current = p;
            }
            run += 1;
        }
        counts.push(run);
        Ok(RleMask {
            width,
            height,
            counts,
        })
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity((self.width * self.height) as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        out
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// Foreground runs as half-open `[start, end)` pixel index ranges.
    fn runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    pub fn intersection_area(&self, other: &RleMask) -> u64 {
        let a: Vec<_> = self.runs().collect();
        let b: Vec<_> = other.runs().collect();
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// `None` when both masks are empty.
    pub fn iou(&self, other: &RleMask) -> Result<Option<f64>> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape(format!(
                "mask dimensions {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        Ok((union > 0).then(|| inter as f64 / union as f64))
    }
}

/// Axis-aligned box in pixel coordinates, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let ok = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x0 <= self.x1
            && self.y0 <= self.y1
            && self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= width as f64
            && self.y1 <= height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "box {:?} is malformed or outside {width}x{height}",
                <[f64; 4]>::from(*self)
            )))
        }
    }

    fn contains_cell(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
        self.x0 <= x0 && x1 <= self.x1 && self.y0 <= y0 && y1 <= self.y1
    }
}

/// IoU between the union regions of two box sets; `None` if both are empty.
///
/// Exact via coordinate compression over all box edges.
pub fn region_iou(a: &[BBox], b: &[BBox]) -> Option<f64> {
    let mut xs: Vec<f64> = a.iter().chain(b).flat_map(|r| [r.x0, r.x1]).collect();
    let mut ys: Vec<f64> = a.iter().chain(b).flat_map(|r| [r.y0, r.y1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let (mut inter, mut union) = (0.0, 0.0);
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let in_a = a.iter().any(|r| r.contains_cell(xw[0], xw[1], yw[0], yw[1]));
            let in_b = b.iter().any(|r| r.contains_cell(xw[0], xw[1], yw[0], yw[1]));
            let area = (xw[1] - xw[0]) * (yw[1] - yw[0]);
            if in_a && in_b {
                inter += area;
            }
            if in_a || in_b {
                union += area;
            }
        }
    }
    (union > 0.0).then(|| inter / union)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: u32, h: u32, x0: u32, x1: u32, y0: u32, y1: u32) -> RleMask {
        let px: Vec<bool> = (0..h)
            .flat_map(|y| (0..w).map(move |x| x >= x0 && x < x1 && y >= y0 && y < y1))
            .collect();
        RleMask::from_bitmap(w, h, &px).unwrap()
    }

    #[test]
    fn bitmap_round_trip() {
        let m = rect_mask(7, 5, 1, 4, 2, 5);
        assert_eq!(m.area(), 9);
        let back = RleMask::from_bitmap(7, 5, &m.to_bitmap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rle_iou_matches_pixel_count() {
        let a = rect_mask(10, 4, 0, 6, 0, 4);
        let b = rect_mask(10, 4, 3, 9, 1, 3);
        let (pa, pb) = (a.to_bitmap(), b.to_bitmap());
        let inter = pa.iter().zip(&pb).filter(|(x, y)| **x && **y).count();
        let union = pa.iter().zip(&pb).filter(|(x, y)| **x || **y).count();
        let iou = a.iou(&b).unwrap().unwrap();
        assert!((iou - inter as f64 / union as f64).abs() < 1e-15);
    }

    #[test]
    fn empty_masks_have_no_iou() {
        let e = RleMask::empty(4, 4);
        assert_eq!(e.iou(&e).unwrap(), None);
        assert_eq!(e.iou(&rect_mask(4, 4, 0, 1, 0, 1)).unwrap(), Some(0.0));
    }

    #[test]
    fn mismatched_dims() {
        assert!(RleMask::empty(4, 4).iou(&RleMask::empty(4, 5)).is_err());
        assert!(RleMask::new(2, 2, vec![1, 2]).is_err());
    }

    #[test]
    fn half_overlapping_boxes() {
        let a = [BBox::new(0.0, 0.0, 2.0, 1.0)];
        let b = [BBox::new(1.0, 0.0, 3.0, 1.0)];
        assert!((region_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn box_union_counts_overlap_once() {
        let a = [BBox::new(0.0, 0.0, 2.0, 2.0), BBox::new(1.0, 1.0, 3.0, 3.0)];
        let b = [BBox::new(0.0, 0.0, 3.0, 3.0)];
        assert!((region_iou(&a, &b).unwrap() - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(region_iou(&[], &[]), None);
        assert_eq!(region_iou(&a, &[]), Some(0.0));
    }
}
