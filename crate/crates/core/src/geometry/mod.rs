//! Homographies between frames, background offset flow, and 2D pose blending.

mod blend;
mod flow;
mod homography;

pub use blend::{blend_error, linear_pose_blend, BlendCheck, Pose2D, DEFAULT_BLEND_FRAMES, DEFAULT_LINEAR_THRESHOLD};
pub use flow::{background_flow, HomographyFlow};
pub use homography::{
    estimate_homography, fit_homography, reprojection_error, symmetric_transfer_error, warp_point,
    HomographyEstimate, PointMatch, RansacConfig,
};
