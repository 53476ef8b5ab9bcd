//! Dual reversed rolling-shutter (RS) imaging.
//!
//! The crate covers both directions of the problem:
//!
//! * [`simulator`] renders top-to-bottom and bottom-to-top RS images from a
//!   stack of global-shutter (GS) frames, plus the ground-truth GS frames at
//!   the extraction instants.
//! * [`geometry`], [`warp`] and [`solver`] recover a GS sequence from a dual
//!   RS pair: per-row time offsets are multiplied by an estimated velocity to
//!   give backward-warping flows, and the two warped inputs are fused.
//! * [`metrics`] scores the result (PSNR, SSIM, row-wise error profiles).
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iteration otherwise. Reductions are
//! performed in a fixed order, so results do not depend on the thread count.

pub mod error;
pub mod geometry;
pub mod metrics;
pub mod par;
pub mod simulator;
pub mod solver;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{
    build_time_cube, flow_from_velocity, target_times, GsSequence, Parameterization, TimeCube, VelocityCube,
};
pub use simulator::{
    scan_instant, synthesize_dual, synthesize_gt, synthesize_rs, DualPair, FrameStack, RsConfig, ScanDirection,
};
pub use solver::{estimate_velocity, extract_frames, ObjectiveBreakdown, SolverParams};
pub use tensor::{bilinear_sample, Cube, ImageBuf};
