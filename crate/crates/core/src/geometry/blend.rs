use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BLEND_FRAMES: usize = 8;
/// Mean per-joint error, in normalized image units, below which a
/// transition counts as linear.
pub const DEFAULT_LINEAR_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    /// Normalized `(x, y)` per joint.
    pub joints: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

impl Pose2D {
    pub fn new(joints: Vec<[f64; 2]>, confidence: Vec<f64>) -> Result<Self> {
        let p = Pose2D { joints, confidence };
        p.validate()?;
        Ok(p)
    }

    /// Pose with confidence 1 on every joint.
    pub fn certain(joints: Vec<[f64; 2]>) -> Self {
        let confidence = vec![1.0; joints.len()];
        Pose2D { joints, confidence }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != self.confidence.len() {
            return Err(Error::Shape(format!(
                "{} joints but {} confidences",
                self.joints.len(),
                self.confidence.len()
            )));
        }
        if !self.joints.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Validation("pose has non-finite coordinates".into()));
        }
        if !self.confidence.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::Validation("confidence outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// `n` poses strictly between `start` and `end`; pose `m` sits at
/// `(m + 1) / (n + 1)` of the way.
pub fn linear_pose_blend(start: &Pose2D, end: &Pose2D, n: usize) -> Result<Vec<Pose2D>> {
    start.validate()?;
    end.validate()?;
    if start.joints.len() != end.joints.len() {
        return Err(Error::Shape(format!(
            "start has {} joints, end has {}",
            start.joints.len(),
            end.joints.len()
        )));
    }
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    Ok((0..n)
        .map(|m| {
            let t = (m + 1) as f64 / (n + 1) as f64;
            Pose2D {
                joints: start
                    .joints
                    .iter()
                    .zip(&end.joints)
                    .map(|(a, b)| [lerp(a[0], b[0], t), lerp(a[1], b[1], t)])
                    .collect(),
                confidence: start
                    .confidence
                    .iter()
                    .zip(&end.confidence)
                    .map(|(a, b)| lerp(*a, *b, t))
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendCheck {
    pub error: f64,
    pub linear_ok: bool,
}

/// Mean Euclidean joint distance over all frames and joints.
pub fn blend_error(blended: &[Pose2D], ground_truth: &[Pose2D], threshold: f64) -> Result<BlendCheck> {
    if blended.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} blended frames vs {} ground-truth frames",
            blended.len(),
            ground_truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (f, (b, g)) in blended.iter().zip(ground_truth).enumerate() {
        if b.joints.len() != g.joints.len() {
            return Err(Error::Shape(format!("frame {f}: joint counts differ")));
        }
        for (p, q) in b.joints.iter().zip(&g.joints) {
            sum += (p[0] - q[0]).hypot(p[1] - q[1]);
        }
        count += b.joints.len();
    }
    if count == 0 {
        return Err(Error::Validation("no joints to compare".into()));
    }
    let error = sum / count as f64;
    if !error.is_finite() {
        return Err(Error::Validation("non-finite joint coordinates".into()));
    }
    Ok(BlendCheck {
        error,
        linear_ok: error < threshold,
    })
}
