//! Minimal solver for six line-to-point correspondences.
//!
//! Translation is eliminated through the first three constraints,
//! `t = N1^-1 f1(R)` with `f_i(R) = -n_i^T R X_i`. The remaining three
//! constraints become `<C_k, R> = 0` for fixed 3x3 matrices `C_k`, solved for
//! `R` with damped Newton iterations in local Cayley charts around a fixed set
//! of start rotations.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{det_n1, normals_matrix, rotation_distance, Correspondence, Pose, PoseError, DET_N1_TOL};

pub const MINIMAL_STARTS: usize = 16;
const ROOT_TOL: f64 = 1e-8;
const DEDUP_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 60;
/// Chart coordinates beyond this correspond to rotations within about 1 degree
/// of a half-turn from the chart center; another start covers them.
const MAX_CHART_NORM: f64 = 100.0;

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Low-discrepancy rotations (Halton sequence pushed through the uniform
/// quaternion map), starting with the identity.
pub fn start_rotations(n: usize) -> Vec<Matrix3<f64>> {
    let mut out = vec![Matrix3::identity()];
    for i in 1..n {
        let (u1, u2, u3) = (halton(i, 2), halton(i, 3), halton(i, 5));
        let tau = 2.0 * std::f64::consts::PI;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let q = Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin());
        out.push(UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner());
    }
    out
}

/// Cayley map `((1 - s^T s) I + 2 [s]x + 2 s s^T) / (1 + s^T s)`.
fn cayley(s: &Vector3<f64>) -> Matrix3<f64> {
    let ss = s.dot(s);
    let m = Matrix3::identity() * (1.0 - ss) + s.cross_matrix() * 2.0 + (s * s.transpose()) * 2.0;
    m / (1.0 + ss)
}

/// One quadratic `<D, R~(s)>` in chart coordinates, with its gradient.
struct ChartEquation {
    trace: f64,
    skew: Vector3<f64>,
    sym: Matrix3<f64>,
    d: Matrix3<f64>,
}

impl ChartEquation {
    fn new(d: Matrix3<f64>) -> Self {
        Self {
            trace: d.trace(),
            skew: Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]),
            sym: d + d.transpose(),
            d,
        }
    }

    fn value(&self, s: &Vector3<f64>) -> f64 {
        self.trace * (1.0 - s.dot(s)) + 2.0 * self.skew.dot(s) + 2.0 * s.dot(&(self.d * s))
    }

    fn gradient(&self, s: &Vector3<f64>) -> Vector3<f64> {
        -2.0 * self.trace * s + 2.0 * self.skew + 2.0 * (self.sym * s)
    }
}

/// Rotation-only constraint matrices `C_k` (Frobenius-normalized) for a
/// six-sample whose points have been shifted by `-center`.
///
/// Also returns `N1^-1` for recovering the translation.
pub fn split_constraints(
    corrs: &[Correspondence],
    center: &Vector3<f64>,
) -> Result<([Matrix3<f64>; 3], Matrix3<f64>), PoseError> {
    if corrs.len() != 6 {
        return Err(PoseError::WrongCount {
            expected: "6".into(),
            got: corrs.len(),
        });
    }
    if det_n1(corrs).abs() < DET_N1_TOL {
        return Err(PoseError::DegenerateSample);
    }
    let n1 = normals_matrix(&corrs[..3]);
    let n1_inv = n1.try_inverse().ok_or(PoseError::DegenerateSample)?;
    let n2 = normals_matrix(&corrs[3..]);
    let m = n2 * n1_inv;
    let outer = |c: &Correspondence| c.normal.normalize() * (c.point.coords - center).transpose();
    let mut cs = [Matrix3::zeros(); 3];
    for (k, ck) in cs.iter_mut().enumerate() {
        let mut c = outer(&corrs[3 + k]);
        for j in 0..3 {
            c -= outer(&corrs[j]) * m[(k, j)];
        }
        let norm = c.norm();
        *ck = if norm > 0.0 { c / norm } else { c };
    }
    Ok((cs, n1_inv))
}

fn newton_in_chart(cs: &[Matrix3<f64>; 3], center_rot: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let eqs: Vec<ChartEquation> = cs.iter().map(|c| ChartEquation::new(center_rot.transpose() * c)).collect();
    let eval = |s: &Vector3<f64>| Vector3::new(eqs[0].value(s), eqs[1].value(s), eqs[2].value(s));
    let scaled_norm = |f: &Vector3<f64>, s: &Vector3<f64>| f.norm() / (1.0 + s.dot(s));

    let mut s = Vector3::zeros();
    let mut f = eval(&s);
    for _ in 0..MAX_NEWTON {
        if scaled_norm(&f, &s) < 1e-15 {
            break;
        }
        let jac = Matrix3::from_rows(&[
            eqs[0].gradient(&s).transpose(),
            eqs[1].gradient(&s).transpose(),
            eqs[2].gradient(&s).transpose(),
        ]);
        let step = jac.lu().solve(&(-f))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = s + step * alpha;
            let fc = eval(&cand);
            if fc.norm_squared() < f.norm_squared() {
                s = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || s.norm() > MAX_CHART_NORM {
            break;
        }
        if (step * alpha).norm() < 1e-14 * (1.0 + s.norm()) {
            break;
        }
    }
    if !s.iter().all(|x| x.is_finite()) || s.norm() > MAX_CHART_NORM || scaled_norm(&f, &s) > ROOT_TOL {
        return None;
    }
    Some(center_rot * cayley(&s))
}

/// All rotations found for a six-sample, each with `t = N1^-1 f1(R)`.
///
/// Candidates are kept only if every one of the six constraints
/// `n^T (R X + t)` is below `1e-8 (1 + ||X||)`. The list may be empty.
pub fn solve_minimal_l6p(corrs: &[Correspondence]) -> Result<Vec<Pose>, PoseError> {
    let center = corrs.iter().map(|c| c.point.coords).sum::<Vector3<f64>>() / corrs.len().max(1) as f64;
    let (cs, n1_inv) = split_constraints(corrs, &center)?;

    let mut poses: Vec<Pose> = Vec::new();
    for r0 in start_rotations(MINIMAL_STARTS) {
        let Some(r) = newton_in_chart(&cs, &r0) else { continue };
        if poses.iter().any(|p| rotation_distance(&p.r, &r) < DEDUP_TOL) {
            continue;
        }
        let f1 = Vector3::from_fn(|i, _| {
            let c = &corrs[i];
            -c.normal.normalize().dot(&(r * (c.point.coords - center)))
        });
        let t_centered = n1_inv * f1;
        let pose = Pose::new(r, t_centered - r * center);
        let ok = corrs.iter().all(|c| {
            let res = c.normal.normalize().dot(&pose.transform(&c.point));
            res.abs() < ROOT_TOL * (1.0 + c.point.coords.norm())
        });
        if ok {
            poses.push(pose);
        }
    }
    Ok(poses)
}
