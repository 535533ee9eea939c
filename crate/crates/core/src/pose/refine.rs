use nalgebra::{Matrix6, Vector3, Vector6};

use super::{rotation_from_scaled_axis, Correspondence, Pose};
use crate::geom::Intrinsics;

const MAX_ITERS: usize = 100;
const MIN_STEP: f64 = 1e-12;

/// Signed point-to-line distance (pixels) of the projected 3D point;
/// `None` when the point is not in front of the camera.
pub fn reprojection_residual(pose: &Pose, c: &Correspondence, k: &Intrinsics) -> Option<f64> {
    let p = k.project(&pose.transform(&c.point))?;
    Some(c.line.line.signed_distance(p))
}

/// Sum of squared reprojection residuals; infinite if any depth is non-positive.
pub fn reprojection_cost(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> f64 {
    corrs
        .iter()
        .map(|c| reprojection_residual(pose, c, k).map_or(f64::INFINITY, |r| r * r))
        .sum()
}

/// Residual and its derivative with respect to `(omega, t)` for the update
/// `R <- exp(omega) R`, `t <- t + dt`.
fn residual_jacobian(pose: &Pose, c: &Correspondence, k: &Intrinsics) -> Option<(f64, Vector6<f64>)> {
    let rx = pose.r * c.point.coords;
    let q = rx + pose.t;
    if q.z <= 0.0 {
        return None;
    }
    let d = c.line.line.dir;
    let (zi, zi2) = (1.0 / q.z, 1.0 / (q.z * q.z));
    let g = Vector3::new(d.v * k.fx * zi, -d.u * k.fy * zi, -d.v * k.fx * q.x * zi2 + d.u * k.fy * q.y * zi2);
    let r = reprojection_residual(pose, c, k)?;
    let dw = rx.cross(&g);
    Some((r, Vector6::new(dw.x, dw.y, dw.z, g.x, g.y, g.z)))
}

/// Gradient of [`reprojection_cost`] with respect to `(omega, t)`.
pub fn cost_gradient(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> Option<Vector6<f64>> {
    let mut grad = Vector6::zeros();
    for c in corrs {
        let (r, j) = residual_jacobian(pose, c, k)?;
        grad += j * (2.0 * r);
    }
    Some(grad)
}

/// Left-multiplies `exp(omega)` onto `R` and adds `dt` to `t`.
pub fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose::new(rotation_from_scaled_axis(w) * pose.r, pose.t + dt)
}

/// Levenberg-Marquardt on the point-to-line reprojection distance.
///
/// Returns the input unchanged when it already has a non-positive depth or
/// when no step improves the cost.
pub fn refine_lm(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> Pose {
    let mut cur = *pose;
    let mut cost = reprojection_cost(&cur, corrs, k);
    if !cost.is_finite() || corrs.is_empty() {
        return cur;
    }
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corrs {
            let Some((r, j)) = residual_jacobian(&cur, c, k) else { return cur };
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let floor = 1e-12 * jtj.diagonal().max().max(1e-300);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < MIN_STEP {
                return cur;
            }
            let cand = apply_increment(&cur, &step);
            let cand_cost = reprojection_cost(&cand, corrs, k);
            if cand_cost < cost {
                cur = cand;
                cost = cand_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cur
}
