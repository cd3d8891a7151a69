//! Compressed-domain feature warping with a learned correction stage for
//! video segmentation, plus everything needed to exercise it end to end at
//! desk scale: a minimal f64 autograd engine, a synthetic compressed-video
//! generator with exact motion/residual ground truth, the segmentation
//! networks, the two-phase training protocol, and evaluation tooling.

pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod warp;
