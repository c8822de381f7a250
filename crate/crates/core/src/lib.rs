//! Incremental pose-free 3D Gaussian splatting from monocular video.
//!
//! The pipeline fits a set of 3D Gaussians to each frame, tracks the next
//! camera pose by rendering those Gaussians differentiably (with analytic
//! SE(3) gradients through the rasterizer) under a photometric plus
//! reprojection-flow objective, splits long videos into overlapping segments
//! whenever Gaussian visibility retention drops, and optimizes a local
//! Gaussian scene per segment.

pub mod config;
pub mod geometry;
pub mod img;
pub mod io;
pub mod local_opt;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod segmentation;
pub mod ssim;
pub mod tracking;

pub use config::Config;
pub use geometry::{Intrinsics, Pose, Twist};
pub use img::{ImageRgb, Map2d};
pub use scene::GaussianSet;
