use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{Correspondence, Pose, PoseError};

pub const MIN_LINEAR: usize = 11;
const RANK_TOL: f64 = 1e-10;

/// Direct linear solve on `n^T (M X + v) = 0` for `n >= 11` correspondences.
///
/// `M` and `v` are estimated up to a common scale from the null vector of the
/// stacked `[n (x) X, n]` rows, then `M` is projected onto the nearest
/// rotation. Points are centered and scaled before stacking.
pub fn solve_linear_nonminimal(corrs: &[Correspondence]) -> Result<Pose, PoseError> {
    if corrs.len() < MIN_LINEAR {
        return Err(PoseError::WrongCount {
            expected: format!(">= {MIN_LINEAR}"),
            got: corrs.len(),
        });
    }
    let n = corrs.len();
    let center = corrs.iter().map(|c| c.point.coords).sum::<Vector3<f64>>() / n as f64;
    let spread = corrs.iter().map(|c| (c.point.coords - center).norm()).sum::<f64>() / n as f64;
    if spread <= 0.0 {
        return Err(PoseError::RankDeficient);
    }
    let scale = 1.0 / spread;
    let xs: Vec<Vector3<f64>> = corrs.iter().map(|c| (c.point.coords - center) * scale).collect();

    let rows = n.max(12);
    let mut a = DMatrix::<f64>::zeros(rows, 12);
    for (k, (c, x)) in corrs.iter().zip(&xs).enumerate() {
        let nrm = c.normal.normalize();
        for i in 0..3 {
            for j in 0..3 {
                a[(k, 3 * i + j)] = nrm[i] * x[j];
            }
            a[(k, 9 + i)] = nrm[i];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(PoseError::RankDeficient)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = |k: usize| svd.singular_values[order[k]];
    if !(sigma(10) > RANK_TOL * sigma(0)) {
        return Err(PoseError::RankDeficient);
    }
    let h = v_t.row(order[11]).transpose();
    let mut m = Matrix3::from_fn(|i, j| h[3 * i + j]);
    let mut v = Vector3::new(h[9], h[10], h[11]);

    let positive = xs.iter().filter(|x| (m * *x + v).z > 0.0).count();
    if 2 * positive < n {
        m = -m;
        v = -v;
    }

    let msvd = m.svd(true, true);
    let (u, vt) = (msvd.u.ok_or(PoseError::RankDeficient)?, msvd.v_t.ok_or(PoseError::RankDeficient)?);
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // flip the axis of the smallest singular value
        let smallest = msvd.singular_values.imin();
        let mut u_fixed = u;
        u_fixed.set_column(smallest, &(-u.column(smallest)));
        r = u_fixed * vt;
    }
    // M = lambda R / s and v = lambda (R c + t), with s the point scaling
    let lambda = msvd.singular_values.mean() * scale;
    if !(lambda > 0.0) {
        return Err(PoseError::RankDeficient);
    }
    let t = v / lambda - r * center;
    Ok(Pose::new(r, t))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::pose_errors;
    use super::*;
    use crate::obfuscate::AnchorId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_on_noise_free_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (gt, kps, pts) = scene(&mut rng, 20);
            for corrs in [dcl_corrs(&kps, &pts), random_corrs(&kps, &pts, 3)] {
                let est = solve_linear_nonminimal(&corrs).unwrap();
                assert!(est.is_valid());
                let (dr, dt) = pose_errors(&gt, &est);
                assert!(dr < 1e-6 && dt < 1e-6, "{dr} {dt}");
            }
        }
    }

    #[test]
    fn eleven_is_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (gt, kps, pts) = scene(&mut rng, 11);
        let est = solve_linear_nonminimal(&random_corrs(&kps, &pts, 9)).unwrap();
        assert!(pose_errors(&gt, &est).0 < 1e-6);
        assert!(matches!(
            solve_linear_nonminimal(&random_corrs(&kps[..10], &pts[..10], 9)),
            Err(PoseError::WrongCount { .. })
        ));
    }

    #[test]
    fn single_anchor_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (_, kps, pts) = scene(&mut rng, 80);
        let corrs: Vec<_> = dcl_corrs(&kps, &pts)
            .into_iter()
            .filter(|c| c.line.anchor_id == Some(AnchorId::A2))
            .collect();
        assert!(corrs.len() >= 20);
        assert_eq!(solve_linear_nonminimal(&corrs), Err(PoseError::RankDeficient));
    }

    #[test]
    fn duplicated_correspondences_are_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (_, kps, pts) = scene(&mut rng, 5);
        let base = random_corrs(&kps, &pts, 1);
        let corrs: Vec<_> = base.iter().cycle().take(15).copied().collect();
        assert_eq!(solve_linear_nonminimal(&corrs), Err(PoseError::RankDeficient));
    }
}
