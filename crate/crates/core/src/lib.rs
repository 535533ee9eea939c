//! Dual convergent line (DCL) keypoint obfuscation toolkit.
//!
//! - [`geom`]: planar lines, intersections, back-projection to plane normals.
//! - [`obfuscate`]: DCL and random-line lifting of keypoints.
//! - [`attack`]: neighborhood-based geometry recovery and its diagnostics.
//! - [`pose`]: line-based absolute pose (minimal solver, linear solver,
//!   refinement, RANSAC).
//! - [`bench`]: synthetic scenes and experiment runners.

pub mod attack;
pub mod bench;
pub mod geom;
pub mod obfuscate;
pub mod pose;
