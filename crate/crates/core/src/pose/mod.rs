//! Absolute pose from 2D line to 3D point correspondences.
//!
//! Each correspondence constrains the camera pose through the plane spanned
//! by the camera center and the image line: `n^T (R X + t) = 0`.

mod linear;
mod minimal;
mod ransac;
mod refine;

pub use linear::solve_linear_nonminimal;
pub use minimal::{solve_minimal_l6p, split_constraints, start_rotations, MINIMAL_STARTS};
pub use ransac::{ransac_pose, EstimateStatus, PoseEstimate, RansacConfig};
pub use refine::{apply_increment, cost_gradient, refine_lm, reprojection_cost, reprojection_residual};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geom::{backproject_line, line_intersection, GeomError, Intrinsics, Point3};
use crate::obfuscate::ObfuscatedLine;

/// Pairwise intersections closer than this (pixels) count as one common point.
pub const CONCURRENCY_TOL: f64 = 1e-6;
/// `|det N1|` at or below this is treated as singular.
pub const DET_N1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoseError {
    #[error("stacked normals of the first triple are singular")]
    DegenerateSample,
    #[error("linear system is rank deficient")]
    RankDeficient,
    #[error("expected {expected} correspondences, got {got}")]
    WrongCount { expected: String, got: usize },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { r, t }
    }

    pub fn transform(&self, x: &Point3) -> Vector3<f64> {
        self.r * x.coords + self.t
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// `||R^T R - I||_F < 1e-9` and `det R` within `1e-9` of one.
    pub fn is_valid(&self) -> bool {
        (self.r.transpose() * self.r - Matrix3::identity()).norm() < 1e-9
            && (self.r.determinant() - 1.0).abs() < 1e-9
            && self.t.iter().all(|x| x.is_finite())
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
    q.to_rotation_matrix().into_inner()
}

/// Rotation angle of `a^T b` in radians.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a.transpose() * b;
    let c = 0.5 * (d.trace() - 1.0);
    let s = 0.5 * Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    s.atan2(c)
}

/// Rotation error (degrees) and camera-center distance between two poses.
///
/// The angle is that of `R_gt^T R_est`, the `arccos((tr - 1) / 2)` quantity,
/// evaluated through `atan2` for accuracy near 0 and 180 degrees.
pub fn pose_errors(gt: &Pose, est: &Pose) -> (f64, f64) {
    let dr = rotation_distance(&gt.r, &est.r).to_degrees();
    let dt = (gt.r.transpose() * gt.t - est.r.transpose() * est.t).norm();
    (dr, dt)
}

/// An obfuscated image line paired with the 3D point that generated it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub line: ObfuscatedLine,
    pub point: Point3,
    /// Back-projected plane normal of `line` under the query intrinsics.
    pub normal: Vector3<f64>,
}

impl Correspondence {
    pub fn new(k: &Intrinsics, line: ObfuscatedLine, point: Point3) -> Self {
        Self {
            line,
            point,
            normal: backproject_line(k, &line.line),
        }
    }
}

pub fn constraint_residual(pose: &Pose, c: &Correspondence) -> f64 {
    c.normal.dot(&pose.transform(&c.point))
}

/// Whether three lines pass through one common image point.
///
/// Lines that share an anchor id always do. Otherwise the pairwise
/// intersections are compared; three mutually parallel lines meet at infinity
/// and also count as concurrent.
pub fn check_triple_degenerate(lines: &[ObfuscatedLine; 3]) -> bool {
    if let Some(a) = lines[0].anchor_id {
        if lines[1].anchor_id == Some(a) && lines[2].anchor_id == Some(a) {
            return true;
        }
    }
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let pts: Vec<Result<_, GeomError>> = pairs
        .iter()
        .map(|&(i, j)| line_intersection(&lines[i].line, &lines[j].line))
        .collect();
    match (pts[0], pts[1], pts[2]) {
        (Ok(p01), Ok(p02), Ok(p12)) => {
            p01.dist(p02) < CONCURRENCY_TOL && p01.dist(p12) < CONCURRENCY_TOL && p02.dist(p12) < CONCURRENCY_TOL
        }
        (Err(_), Err(_), Err(_)) => true,
        _ => false,
    }
}

/// Stacked unit normals of three correspondences.
pub fn normals_matrix(corrs: &[Correspondence]) -> Matrix3<f64> {
    Matrix3::from_rows(&[
        corrs[0].normal.normalize().transpose(),
        corrs[1].normal.normalize().transpose(),
        corrs[2].normal.normalize().transpose(),
    ])
}

/// Determinant of the stacked (row-normalized) normals of the first three
/// correspondences.
pub fn det_n1(corrs: &[Correspondence]) -> f64 {
    normals_matrix(corrs).determinant()
}

pub(crate) fn rotation_from_scaled_axis(w: Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(w).into_inner()
}
