//! Per-joint 15D motion features.
//!
//! Each frame/joint entry is laid out as
//! `[position(3), linear velocity(3), 6D rotation(6), angular velocity(3)]`.
//! Positions are root-relative and taken as given. Velocities are per
//! second (finite differences scaled by the frame rate), and the last frame
//! repeats the previous velocity so the output stays aligned 1:1 with the
//! input frames.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Width of one joint entry.
pub const FEATURE_DIM: usize = 15;
pub const POSITION: usize = 0;
pub const LINEAR_VELOCITY: usize = 3;
pub const ROTATION_6D: usize = 6;
pub const ANGULAR_VELOCITY: usize = 12;

/// Orthonormality / determinant tolerance for input rotations.
pub const ROTATION_TOL: f64 = 1e-6;

/// Raw joint positions and rotations, frame-major then joint-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    fps: f64,
    joints: usize,
    positions: Vec<Vector3<f64>>,
    rotations: Vec<Matrix3<f64>>,
}

impl JointSequence {
    pub fn new(
        fps: f64,
        joints: usize,
        positions: Vec<Vector3<f64>>,
        rotations: Vec<Matrix3<f64>>,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Validation(format!("fps must be positive, got {fps}")));
        }
        if joints == 0 {
            return Err(Error::Validation("joint count must be positive".into()));
        }
        if positions.len() % joints != 0 || positions.len() != rotations.len() {
            return Err(Error::Shape(format!(
                "{} positions and {} rotations do not form whole frames of {joints} joints",
                positions.len(),
                rotations.len()
            )));
        }
        let frames = positions.len() / joints;
        if frames < 2 {
            return Err(Error::Validation(format!(
                "at least 2 frames are required, got {frames}"
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Validation(format!(
                "non-finite position at frame {}, joint {}",
                i / joints,
                i % joints
            )));
        }
        for (i, r) in rotations.iter().enumerate() {
            validate_rotation(r).map_err(|e| {
                Error::Validation(format!("frame {}, joint {}: {e}", i / joints, i % joints))
            })?;
        }
        Ok(JointSequence {
            fps,
            joints,
            positions,
            rotations,
        })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.positions.len() / self.joints
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn rotations(&self) -> &[Matrix3<f64>] {
        &self.rotations
    }
}

/// Dense `T x J x 15` feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion15D {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl Motion15D {
    pub fn from_raw(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * FEATURE_DIM {
            return Err(Error::Shape(format!(
                "expected {frames}x{joints}x{FEATURE_DIM} = {} values, got {}",
                frames * joints * FEATURE_DIM,
                data.len()
            )));
        }
        Ok(Motion15D {
            frames,
            joints,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn entry(&self, frame: usize, joint: usize) -> &[f64] {
        let start = (frame * self.joints + joint) * FEATURE_DIM;
        &self.data[start..start + FEATURE_DIM]
    }

    /// Copy of frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Motion15D> {
        if start + len > self.frames {
            return Err(Error::Shape(format!(
                "frame range [{start}, {}) exceeds {} frames",
                start + len,
                self.frames
            )));
        }
        let stride = self.joints * FEATURE_DIM;
        Ok(Motion15D {
            frames: len,
            joints: self.joints,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }
}

/// Checks `R^T R = I` and `det R = 1` within [`ROTATION_TOL`].
pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("rotation contains non-finite values".into()));
    }
    let residual = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if residual > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::Validation(format!(
            "not a rotation: orthogonality residual {residual:.3e}, determinant {det:.9}"
        )));
    }
    Ok(())
}

/// First two columns of `r`, column-major.
pub fn rotmat_to_6d(r: &Matrix3<f64>) -> Result<[f64; 6]> {
    validate_rotation(r)?;
    Ok([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ])
}

/// Gram-Schmidt reconstruction of a rotation from its 6D encoding.
pub fn rotation_from_6d(v: &[f64]) -> Result<Matrix3<f64>> {
    if v.len() != 6 {
        return Err(Error::Shape(format!("6D rotation needs 6 values, got {}", v.len())));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let b1 = a1
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Degenerate("first 6D column has zero length".into()))?;
    let b2 = (a2 - b1 * b1.dot(&a2))
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Degenerate("6D columns are parallel".into()))?;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

fn vee_skew(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
}

/// Matrix logarithm of a rotation as a rotation vector (axis * angle).
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = vee_skew(r);
    // atan2 keeps full precision near 0 and pi, where acos does not
    let angle = (0.5 * skew.norm()).atan2(cos);
    if angle < 1e-4 {
        // sin(x)/x ~ 1 - x^2/6
        return skew * 0.5 * (1.0 + angle * angle / 6.0);
    }
    if angle < std::f64::consts::PI - 1e-3 {
        return skew * (angle / (2.0 * angle.sin()));
    }
    // Near pi the skew part vanishes; read the axis off a a^T instead.
    let sym = (r + r.transpose()) * 0.5;
    let aat = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&a, &b| aat[(a, a)].total_cmp(&aat[(b, b)]))
        .unwrap_or(0);
    let mut axis = aat.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Rodrigues exponential of a rotation vector.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    if angle < 1e-12 {
        return Matrix3::identity() + k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Matrix3::identity() + k * a + k * k * b
}

fn check_frames(len: usize, joints: usize, fps: f64) -> Result<usize> {
    if joints == 0 || len % joints != 0 {
        return Err(Error::Shape(format!(
            "{len} entries are not whole frames of {joints} joints"
        )));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Validation(format!("fps must be positive, got {fps}")));
    }
    let frames = len / joints;
    if frames < 2 {
        return Err(Error::Validation(format!(
            "velocities need at least 2 frames, got {frames}"
        )));
    }
    Ok(frames)
}

/// `v_t = (p_{t+1} - p_t) * fps`; the last frame repeats `v_{T-2}`.
pub fn linear_velocity(
    positions: &[Vector3<f64>],
    joints: usize,
    fps: f64,
) -> Result<Vec<Vector3<f64>>> {
    let frames = check_frames(positions.len(), joints, fps)?;
    let mut out = Vec::with_capacity(positions.len());
    for t in 0..frames - 1 {
        for j in 0..joints {
            let i = t * joints + j;
            out.push((positions[i + joints] - positions[i]) * fps);
        }
    }
    out.extend_from_within((frames - 2) * joints..(frames - 1) * joints);
    Ok(out)
}

/// `w_t = log(R_t^T R_{t+1}) * fps`; the last frame repeats `w_{T-2}`.
pub fn angular_velocity(
    rotations: &[Matrix3<f64>],
    joints: usize,
    fps: f64,
) -> Result<Vec<Vector3<f64>>> {
    let frames = check_frames(rotations.len(), joints, fps)?;
    for r in rotations {
        validate_rotation(r)?;
    }
    let mut out = Vec::with_capacity(rotations.len());
    for t in 0..frames - 1 {
        for j in 0..joints {
            let i = t * joints + j;
            let rel = rotations[i].transpose() * rotations[i + joints];
            out.push(so3_log(&rel) * fps);
        }
    }
    out.extend_from_within((frames - 2) * joints..(frames - 1) * joints);
    Ok(out)
}

/// Assembles the `T x J x 15` representation.
pub fn build_15d(seq: &JointSequence) -> Result<Motion15D> {
    let joints = seq.joints();
    let lin = linear_velocity(seq.positions(), joints, seq.fps())?;
    let ang = angular_velocity(seq.rotations(), joints, seq.fps())?;
    let mut data = Vec::with_capacity(seq.positions().len() * FEATURE_DIM);
    for (i, (p, r)) in seq.positions().iter().zip(seq.rotations()).enumerate() {
        data.extend_from_slice(p.as_slice());
        data.extend_from_slice(lin[i].as_slice());
        data.extend_from_slice(&rotmat_to_6d(r)?);
        data.extend_from_slice(ang[i].as_slice());
    }
    Motion15D::from_raw(seq.frames(), joints, data)
}
