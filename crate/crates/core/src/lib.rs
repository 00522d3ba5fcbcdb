//! LiDAR–camera extrinsic re-calibration toolkit.

pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod losses;
pub mod perturbation;
pub mod recalibrator;
pub mod rng;
pub mod scene_io;
pub mod simplex;
pub mod spatial;
pub mod tensor;
