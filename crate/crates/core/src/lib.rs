//! Stereo self-supervised depth estimation at desk scale.
//!
//! The crate covers the whole path from a rectified stereo pair to a
//! pseudo-LiDAR point cloud:
//!
//! - [`image`]: float rasters with bilinear sampling, gradients and resizing
//! - [`camera`]: pinhole intrinsics, disparity/depth conversion, back-projection, warping
//! - [`loss`]: SSIM/L1 reprojection loss, auto-masking, edge-aware smoothness, analytic gradient
//! - [`network`]: the 6-channel residual encoder / U-shaped decoder, parameter census and inference
//! - [`optimizer`]: coarse-to-fine gradient descent on the loss over a disparity field
//! - [`eval`]: depth metrics, scaling policies and flip-fusion post-processing
//! - [`io`]: calibration, split, depth, point-cloud and weight file formats
//! - [`bench`]: stage-by-stage throughput measurement

pub mod bench;
pub mod camera;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod loss;
pub mod network;
pub mod optimizer;

pub use camera::{
    back_project, back_project_capped, disparity_to_depth, warp_rectified, warp_to_target,
    DepthMap, DisparityMap, Intrinsics, PointCloud, Projection, RigidTransform, SourceSide,
    StereoRig,
};
pub use error::{Error, Result};
pub use image::{bilinear_sample, hflip, resize_bilinear, spatial_gradient, ImageBuffer};
pub use loss::{LossBreakdown, LossConfig, StereoScene};
