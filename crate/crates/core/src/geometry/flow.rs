use nalgebra::Matrix3;
use rayon::prelude::*;

use super::homography::warp_point;
use crate::error::{Error, Result};
use crate::mask::RleMask;

/// Per-pixel background displacement `warp(p) - p`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyFlow {
    pub h: Matrix3<f64>,
    pub width: u32,
    pub height: u32,
    pub offsets: Vec<[f64; 2]>,
    /// Pixels carrying zero flow: the supplied foreground, plus any pixel
    /// the homography sends to infinity.
    pub foreground: Vec<bool>,
}

impl HomographyFlow {
    pub fn offset(&self, x: u32, y: u32) -> [f64; 2] {
        self.offsets[(y * self.width + x) as usize]
    }
}

pub fn background_flow(
    h: &Matrix3<f64>,
    width: u32,
    height: u32,
    foreground: Option<&RleMask>,
) -> Result<HomographyFlow> {
    if width == 0 || height == 0 {
        return Err(Error::Validation("flow field needs positive dimensions".into()));
    }
    if !h.iter().all(|v| v.is_finite()) || h.determinant().abs() <= 1e-12 {
        return Err(Error::Degenerate("homography is singular".into()));
    }
    let mut fg = match foreground {
        Some(m) => {
            if (m.width, m.height) != (width, height) {
                return Err(Error::Shape(format!(
                    "mask is {}x{}, flow is {width}x{height}",
                    m.width, m.height
                )));
            }
            m.to_bitmap()
        }
        None => vec![false; width as usize * height as usize],
    };
    let mut offsets = vec![[0.0; 2]; fg.len()];
    offsets
        .par_chunks_mut(width as usize)
        .zip(fg.par_chunks_mut(width as usize))
        .enumerate()
        .for_each(|(y, (row, mask))| {
            for (x, (o, m)) in row.iter_mut().zip(mask.iter_mut()).enumerate() {
                if *m {
                    continue;
                }
                let p = [x as f64, y as f64];
                match warp_point(h, p) {
                    Some(q) => *o = [q[0] - p[0], q[1] - p[1]],
                    None => *m = true,
                }
            }
        });
    Ok(HomographyFlow {
        h: *h,
        width,
        height,
        offsets,
        foreground: fg,
    })
}
