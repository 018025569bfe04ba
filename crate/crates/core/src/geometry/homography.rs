use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_DET: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Symmetric transfer error bound for an inlier, in pixels.
    pub inlier_px: f64,
    /// Target probability of drawing at least one all-inlier sample.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iters: 2000,
            inlier_px: 3.0,
            confidence: 0.999,
            seed: 7,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be positive".into()));
        }
        if !(self.inlier_px.is_finite() && self.inlier_px > 0.0) {
            return Err(Error::Validation(format!("inlier_px must be positive, got {}", self.inlier_px)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Validation(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    /// Normalized so that `h[(2, 2)] == 1`.
    pub h: Matrix3<f64>,
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Projective image of `p`, or `None` when it maps to infinity.
pub fn warp_point(h: &Matrix3<f64>, p: [f64; 2]) -> Option<[f64; 2]> {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    if v.z.abs() < MIN_DET {
        return None;
    }
    Some([v.x / v.z, v.y / v.z])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Forward error `|H src - dst|`.
pub fn reprojection_error(h: &Matrix3<f64>, m: &PointMatch) -> f64 {
    warp_point(h, m.src).map_or(f64::INFINITY, |p| dist(p, m.dst))
}

/// Larger of the forward and backward transfer errors.
pub fn symmetric_transfer_error(h: &Matrix3<f64>, h_inv: &Matrix3<f64>, m: &PointMatch) -> f64 {
    let back = warp_point(h_inv, m.dst).map_or(f64::INFINITY, |p| dist(p, m.src));
    reprojection_error(h, m).max(back)
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
    let (vx, vy) = (c[0] - a[0], c[1] - a[1]);
    let scale = (ux * ux + uy * uy).max(vx * vx + vy * vy);
    (ux * vy - uy * vx).abs() <= COLLINEAR_TOL * scale
}

fn all_collinear(points: &[[f64; 2]]) -> bool {
    let a = points[0];
    let Some(b) = points.iter().copied().max_by(|p, q| dist(a, *p).total_cmp(&dist(a, *q))) else {
        return true;
    };
    if dist(a, b) == 0.0 {
        return true;
    }
    points.iter().all(|&c| collinear(a, b, c))
}

fn sample_degenerate(points: [[f64; 2]; 4]) -> bool {
    (0..4).any(|skip| {
        let rest: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| points[i]).collect();
        collinear(rest[0], rest[1], rest[2])
    })
}

/// Similarity taking the points to zero mean and mean distance sqrt(2).
fn normalizer(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform; least squares when given more than
/// four matches.
pub fn fit_homography(matches: &[PointMatch]) -> Result<Matrix3<f64>> {
    if matches.len() < 4 {
        return Err(Error::Degenerate(format!("need at least 4 matches, got {}", matches.len())));
    }
    let t_src = normalizer(matches.iter().map(|m| m.src));
    let t_dst = normalizer(matches.iter().map(|m| m.dst));
    // pad to at least 9 rows so the SVD yields the full right basis
    let rows = (2 * matches.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let s = t_src * Vector3::new(m.src[0], m.src[1], 1.0);
        let d = t_dst * Vector3::new(m.dst[0], m.dst[1], 1.0);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        for (c, val) in [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u].into_iter().enumerate() {
            a[(r, c)] = val;
        }
        for (c, val) in [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v].into_iter().enumerate() {
            a[(r + 1, c)] = val;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("singular value decomposition failed".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nine singular values");
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("target points coincide".into()))?;
    let full = t_dst_inv * hn * t_src;
    let h33 = full[(2, 2)];
    if h33.abs() < MIN_DET {
        return Err(Error::Degenerate("homography maps the origin to infinity".into()));
    }
    let full = full / h33;
    if full.determinant().abs() <= MIN_DET || !full.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("estimated homography is singular".into()));
    }
    Ok(full)
}

fn inliers_of(h: &Matrix3<f64>, matches: &[PointMatch], px: f64) -> (Vec<usize>, f64) {
    let Some(h_inv) = h.try_inverse() else {
        return (Vec::new(), f64::INFINITY);
    };
    let mut total = 0.0;
    let idx = matches
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let e = symmetric_transfer_error(h, &h_inv, m);
            (e <= px).then(|| {
                total += e;
                i
            })
        })
        .collect();
    (idx, total)
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// RANSAC over 4-point samples with an adaptive iteration budget, then a
/// least-squares refit on the consensus set.
pub fn estimate_homography(matches: &[PointMatch], config: &RansacConfig) -> Result<HomographyEstimate> {
    config.validate()?;
    if matches.len() < 4 {
        return Err(Error::Degenerate(format!("need at least 4 matches, got {}", matches.len())));
    }
    if let Some(i) = matches.iter().position(|m| !m.src.iter().chain(&m.dst).all(|v| v.is_finite())) {
        return Err(Error::Validation(format!("match {i} has non-finite coordinates")));
    }
    let src: Vec<_> = matches.iter().map(|m| m.src).collect();
    let dst: Vec<_> = matches.iter().map(|m| m.dst).collect();
    if all_collinear(&src) || all_collinear(&dst) {
        return Err(Error::Degenerate("all points are collinear".into()));
    }

    let n = matches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut budget = config.max_iters;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        let pick = index::sample(&mut rng, n, 4).into_vec();
        let sample: Vec<PointMatch> = pick.iter().map(|&i| matches[i]).collect();
        let pts = |f: fn(&PointMatch) -> [f64; 2]| [f(&sample[0]), f(&sample[1]), f(&sample[2]), f(&sample[3])];
        if sample_degenerate(pts(|m| m.src)) || sample_degenerate(pts(|m| m.dst)) {
            continue;
        }
        let Ok(h) = fit_homography(&sample) else {
            continue;
        };
        let (inl, err) = inliers_of(&h, matches, config.inlier_px);
        let better = match &best {
            None => inl.len() >= 4,
            Some((b, be)) => inl.len() > b.len() || (inl.len() == b.len() && err < *be),
        };
        if better {
            let ratio = inl.len() as f64 / n as f64;
            budget = required_iterations(ratio, config.confidence).min(config.max_iters);
            best = Some((inl, err));
        }
    }

    let (mut inliers, _) = best.ok_or_else(|| Error::NoModel("no model with at least 4 inliers".into()))?;
    let mut h = fit_homography(&inliers.iter().map(|&i| matches[i]).collect::<Vec<_>>())?;
    for _ in 0..5 {
        let (next, _) = inliers_of(&h, matches, config.inlier_px);
        if next == inliers || next.len() < 4 {
            break;
        }
        let Ok(refit) = fit_homography(&next.iter().map(|&i| matches[i]).collect::<Vec<_>>()) else {
            break;
        };
        inliers = next;
        h = refit;
    }
    let (inliers, _) = inliers_of(&h, matches, config.inlier_px);
    if inliers.len() < 4 {
        return Err(Error::NoModel("refit lost consensus".into()));
    }
    Ok(HomographyEstimate { h, inliers, iterations })
}
