//! File formats: calibration, splits, images and depth maps, point clouds
//! and network weights.

pub mod calib;
pub mod cloud;
pub mod raster;
pub mod split;
pub mod weightfile;

pub use calib::{parse_calibration, synthesize_calibration, CalibrationSet};
pub use cloud::{pcd_bytes, ply_bytes, write_cloud, write_pcd, write_ply, CloudFormat};
pub use raster::{
    decode_image, encode_depth_png16, load_depth, load_disparity, load_image, read_depth_png16, save_depth,
    save_disparity, save_image,
};
pub use split::{parse_split, Side, SplitEntry};
pub use weightfile::{load_weights, read_weights, save_weights, write_weights};
