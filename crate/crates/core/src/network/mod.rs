//! The stereo depth network: architecture description, parameter census,
//! weight storage and CPU inference.

pub mod arch;
pub mod forward;
pub mod tensor;
pub mod weights;

pub use arch::{build_depth_network, build_encoder, ArchSpec, LayerCensus, LayerKind, LayerNode, LayerSpec, PadMode, ParamReport, Shape};
pub use forward::{forward, sigmoid_to_disparity, ForwardPass, Network, DEFAULT_MAX_DEPTH_M, DEFAULT_MIN_DEPTH_M};
pub use tensor::{Scalar, Tensor};
pub use weights::{WeightStore, WeightTensor};
