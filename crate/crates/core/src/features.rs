//! Precomputed embedding tracks for audio or motion.
//!
//! `low` holds one embedding per frame. `high` holds one embedding per
//! high-level window; window `c` starts at frame `c * hop` and spans
//! [`HIGH_WINDOW_FRAMES`] frames. A frame reads the window that starts at or
//! before it, clamped to the last window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per high-level window (4 s at 30 fps).
pub const HIGH_WINDOW_FRAMES: usize = 120;
pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Motion,
}

impl Modality {
    pub fn tag(self) -> u32 {
        match self {
            Modality::Audio => 0,
            Modality::Motion => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Modality::Audio),
            1 => Some(Modality::Motion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub modality: Modality,
    pub fps: f64,
    low_dim: usize,
    low: Vec<f64>,
    high_dim: usize,
    high: Vec<f64>,
    hop: usize,
}

impl FeatureTrack {
    pub fn new(
        modality: Modality,
        fps: f64,
        low_dim: usize,
        low: Vec<f64>,
        high_dim: usize,
        high: Vec<f64>,
        hop: usize,
    ) -> Result<Self> {
        if low_dim == 0 || high_dim == 0 {
            return Err(Error::Shape("embedding widths must be positive".into()));
        }
        if low.len() % low_dim != 0 || high.len() % high_dim != 0 {
            return Err(Error::Shape(format!(
                "{} low values are not rows of {low_dim}, or {} high values are not rows of {high_dim}",
                low.len(),
                high.len()
            )));
        }
        if low.is_empty() || high.is_empty() {
            return Err(Error::Validation("feature track needs at least one frame and one window".into()));
        }
        if hop == 0 {
            return Err(Error::Validation("window hop must be positive".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Validation(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = low.iter().chain(&high).position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value at flat index {i}")));
        }
        Ok(FeatureTrack {
            modality,
            fps,
            low_dim,
            low,
            high_dim,
            high,
            hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.low.len() / self.low_dim
    }

    pub fn low_dim(&self) -> usize {
        self.low_dim
    }

    pub fn high_dim(&self) -> usize {
        self.high_dim
    }

    pub fn windows(&self) -> usize {
        self.high.len() / self.high_dim
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn low_row(&self, frame: usize) -> &[f64] {
        &self.low[frame * self.low_dim..(frame + 1) * self.low_dim]
    }

    pub fn high_row(&self, window: usize) -> &[f64] {
        &self.high[window * self.high_dim..(window + 1) * self.high_dim]
    }

    pub fn window_for_frame(&self, frame: usize) -> usize {
        (frame / self.hop).min(self.windows() - 1)
    }

    /// Same track with every low and high row multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> FeatureTrack {
        let mut out = self.clone();
        out.low.iter_mut().chain(out.high.iter_mut()).for_each(|v| *v *= factor);
        out
    }
}

/// Cosine similarity; 0 when either vector has zero length.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_lookup_clamps() {
        let t = FeatureTrack::new(Modality::Audio, 30.0, 1, vec![0.0; 20], 1, vec![0.0; 3], 4).unwrap();
        assert_eq!(t.window_for_frame(0), 0);
        assert_eq!(t.window_for_frame(7), 1);
        assert_eq!(t.window_for_frame(19), 2);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureTrack::new(Modality::Audio, 30.0, 1, vec![f64::NAN], 1, vec![0.0], 4).is_err());
        assert!(FeatureTrack::new(Modality::Audio, 30.0, 2, vec![0.0; 3], 1, vec![0.0], 4).is_err());
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[2.0, 0.0], &[3.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }
}
