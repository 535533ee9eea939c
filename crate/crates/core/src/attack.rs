//! Neighborhood-based geometry recovery against lifted queries, with oracle
//! (perfectly identified) neighborhoods.
//!
//! For a target line `base + t * v_i` and neighbor line through `a_j` with
//! direction `v_j`, the squared distance is `A t^2 + B t + C` with
//! `A = (v_i x v_j)^2` and `B = 2 ((base - a_j) x v_j)(v_i x v_j)`. Summing over
//! neighbors gives a convex quadratic whose minimizer is the `A`-weighted mean
//! of the per-neighbor intersection offsets `-B / 2A`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geom::{Line2, Point2};
use crate::obfuscate::{AnchorId, ObfuscatedLine};

/// Pairs with weight at or below this are dropped from the weighted mean.
pub const EPS_W: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("need more than {k} keypoints, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("target has no neighbors")]
    EmptyNeighborhood,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeighborSet {
    pub target: usize,
    pub neighbors: Vec<usize>,
}

/// The `k` nearest other keypoints of every keypoint, nearest first; ties go to
/// the lower index.
pub fn oracle_neighbors(kps: &[Point2], k: usize) -> Result<Vec<NeighborSet>, AttackError> {
    if k >= kps.len() {
        return Err(AttackError::TooFewPoints { n: kps.len(), k });
    }
    Ok((0..kps.len())
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = kps
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, p)| (p.dist_sq(kps[i]), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k > 0 && k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
            }
            cand.truncate(k);
            cand.sort_unstable_by(cmp);
            NeighborSet {
                target: i,
                neighbors: cand.into_iter().map(|(_, j)| j).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseSolution {
    /// Offset of the intersection along the target line; `None` when the pair
    /// is parallel within [`EPS_W`].
    pub t_star: Option<f64>,
    /// `sin^2` of the angle between the two lines.
    pub weight: f64,
}

impl PairwiseSolution {
    pub fn is_usable(&self) -> bool {
        self.t_star.is_some()
    }
}

pub fn pairwise_t_star(target: &Line2, neighbor: &Line2) -> PairwiseSolution {
    let c = target.dir.cross(neighbor.dir);
    let weight = c * c;
    if weight <= EPS_W {
        return PairwiseSolution { t_star: None, weight };
    }
    let c0 = target.base.sub(neighbor.base).cross(neighbor.dir);
    PairwiseSolution {
        t_star: Some(-c0 / c),
        weight,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Ok,
    AllParallel,
}

impl RecoveryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryStatus::Ok => "ok",
            RecoveryStatus::AllParallel => "all_parallel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryResult {
    /// NaN when `status` is `AllParallel`.
    pub t_star: f64,
    pub point: Point2,
    pub weight_sum: f64,
    pub status: RecoveryStatus,
}

impl RecoveryResult {
    fn from_sums(target: &Line2, weighted: f64, weight_sum: f64) -> Self {
        if weight_sum <= EPS_W {
            return RecoveryResult {
                t_star: f64::NAN,
                point: Point2::new(f64::NAN, f64::NAN),
                weight_sum,
                status: RecoveryStatus::AllParallel,
            };
        }
        let t_star = weighted / weight_sum;
        RecoveryResult {
            t_star,
            point: target.point_at(t_star),
            weight_sum,
            status: RecoveryStatus::Ok,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecoveryStatus::Ok
    }
}

/// Running `(sum w * t, sum w)` over the usable pairs.
fn line_sums<'a>(target: &Line2, neighbors: impl IntoIterator<Item = &'a Line2>) -> (f64, f64) {
    neighbors
        .into_iter()
        .map(|n| pairwise_t_star(target, n))
        .filter_map(|s| s.t_star.map(|t| (s.weight * t, s.weight)))
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y))
}

/// Point on `target` minimizing the summed squared distance to `neighbors`.
pub fn recover_point(target: &Line2, neighbors: &[Line2]) -> Result<RecoveryResult, AttackError> {
    if neighbors.is_empty() {
        return Err(AttackError::EmptyNeighborhood);
    }
    let (weighted, weight_sum) = line_sums(target, neighbors);
    Ok(RecoveryResult::from_sums(target, weighted, weight_sum))
}

/// Like [`recover_point`], with some neighbors known as points. Each point
/// contributes weight 1 at its perpendicular foot on the target.
pub fn recover_point_mixed(
    target: &Line2,
    neighbor_lines: &[Line2],
    neighbor_points: &[Point2],
) -> Result<RecoveryResult, AttackError> {
    if neighbor_lines.is_empty() && neighbor_points.is_empty() {
        return Err(AttackError::EmptyNeighborhood);
    }
    let (mut weighted, mut weight_sum) = line_sums(target, neighbor_lines);
    for &p in neighbor_points {
        weighted += target.foot_offset(p);
        weight_sum += 1.0;
    }
    Ok(RecoveryResult::from_sums(target, weighted, weight_sum))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Grid search then golden-section refinement of the summed squared
/// point-to-line distance along `target`.
///
/// Brute-force reference for [`recover_point`]. The refinement minimizes the
/// cost difference relative to the best grid point, expanded per neighbor as
/// `d(t_g + s)^2 - d(t_g)^2 = s c (2 d(t_g) + s c)` with `c` the rate of change of
/// the signed distance, so the constant part of the cost does not swamp the
/// comparison.
pub fn recover_point_bruteforce(target: &Line2, neighbors: &[Line2], t_range: (f64, f64), step: f64) -> f64 {
    let cost = |t: f64| -> f64 {
        let p = target.point_at(t);
        neighbors.iter().map(|n| n.signed_distance(p).powi(2)).sum()
    };
    let (lo, hi) = t_range;
    let steps = ((hi - lo) / step).ceil() as usize;
    let mut best_t = lo;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        let t = (lo + i as f64 * step).min(hi);
        let c = cost(t);
        if c < best {
            best = c;
            best_t = t;
        }
    }

    let anchor_pt = target.point_at(best_t);
    let terms: Vec<(f64, f64)> = neighbors
        .iter()
        .map(|n| (n.signed_distance(anchor_pt), target.dir.cross(n.dir)))
        .collect();
    // signed_distance(p + s v) = signed_distance(p) + s * (v x dir_n)
    let delta = |s: f64| -> f64 { terms.iter().map(|&(d, c)| s * c * (2.0 * d + s * c)).sum() };

    let (mut a, mut b) = (-step, step);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (delta(x1), delta(x2));
    for _ in 0..200 {
        if b - a <= 1e-15 * (1.0 + best_t.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = delta(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = delta(x2);
        }
    }
    best_t + 0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecovery {
    pub idx: usize,
    pub truth: Point2,
    pub result: RecoveryResult,
    pub anchor_id: Option<AnchorId>,
    /// Euclidean pixel error; infinite when recovery produced no estimate.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub points: Vec<PointRecovery>,
    pub tau: f64,
    /// Mean over points with a finite error.
    pub mean_error: f64,
    /// Median over all points, infinite errors included.
    pub median_error: f64,
    pub count_below_tau: usize,
    pub n_failed: usize,
    /// Sample standard deviation of the usable pairwise offsets per target.
    pub instability: Vec<f64>,
}

impl AttackReport {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.error)
    }

    pub fn count_below(&self, tau: f64) -> usize {
        self.errors().filter(|&e| e < tau).count()
    }

    pub fn total(&self) -> usize {
        self.points.len()
    }
}

pub const ATTACK_CSV_HEADER: &str = "idx,u_true,v_true,u_rec,v_rec,err_px,anchor_id,t_star,weight_sum,status";

impl AttackReport {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::with_capacity(self.points.len() * 160 + 80);
        out.push_str(ATTACK_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                p.idx,
                p.truth.u,
                p.truth.v,
                p.result.point.u,
                p.result.point.v,
                p.error,
                p.anchor_id.map_or(0, AnchorId::as_u8),
                p.result.t_star,
                p.result.weight_sum,
                p.result.status.as_str()
            );
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    }
}

fn check_sets(n_lines: usize, nsets: &[NeighborSet]) -> Result<(), AttackError> {
    for s in nsets {
        if s.target >= n_lines || s.neighbors.iter().any(|&j| j >= n_lines || j == s.target) {
            return Err(AttackError::LengthMismatch(format!(
                "neighbor set of target {} references an invalid index",
                s.target
            )));
        }
    }
    Ok(())
}

/// Runs the recovery on every neighbor set and scores it against the truth.
pub fn attack_all(
    lines: &[ObfuscatedLine],
    nsets: &[NeighborSet],
    true_kps: &[Point2],
    tau: f64,
) -> Result<AttackReport, AttackError> {
    if lines.len() != true_kps.len() {
        return Err(AttackError::LengthMismatch(format!(
            "{} lines vs {} keypoints",
            lines.len(),
            true_kps.len()
        )));
    }
    check_sets(lines.len(), nsets)?;
    let points: Vec<PointRecovery> = nsets
        .par_iter()
        .map(|s| {
            let target = &lines[s.target];
            let neigh: Vec<Line2> = s.neighbors.iter().map(|&j| lines[j].line).collect();
            let result = recover_point(&target.line, &neigh)?;
            let truth = true_kps[s.target];
            let error = if result.is_ok() { result.point.dist(truth) } else { f64::INFINITY };
            Ok(PointRecovery {
                idx: s.target,
                truth,
                result,
                anchor_id: target.anchor_id,
                error,
            })
        })
        .collect::<Result<_, AttackError>>()?;

    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    let mean_error = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(AttackReport {
        tau,
        mean_error,
        median_error: median(&errors),
        count_below_tau: errors.iter().filter(|&&e| e < tau).count(),
        n_failed: errors.len() - finite.len(),
        instability: instability_map(lines, nsets),
        points,
    })
}

/// Sample standard deviation (n - 1) of `values`; NaN for fewer than two.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Per-target spread of the pairwise intersection offsets. All usable pairs
/// enter, same-anchor and cross-anchor alike.
pub fn instability_map(lines: &[ObfuscatedLine], nsets: &[NeighborSet]) -> Vec<f64> {
    nsets
        .par_iter()
        .map(|s| {
            let target = &lines[s.target].line;
            let ts: Vec<f64> = s
                .neighbors
                .iter()
                .filter_map(|&j| pairwise_t_star(target, &lines[j].line).t_star)
                .collect();
            sample_std(&ts)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Promotion {
    pub round: usize,
    pub target: usize,
    pub known_neighbors: usize,
    pub recovered: Point2,
    pub error: f64,
    /// Mean error over all promotions so far.
    pub cumulative_mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeAttackOutcome {
    pub promotions: Vec<Promotion>,
    /// Recovered position per target; `None` if never promoted.
    pub recovered: Vec<Option<Point2>>,
}

impl IterativeAttackOutcome {
    pub fn mean_error(&self) -> f64 {
        if self.promotions.is_empty() {
            return f64::NAN;
        }
        self.promotions.iter().map(|p| p.error).sum::<f64>() / self.promotions.len() as f64
    }
}

/// Neighborhoods for the server-side setting. Indices `0..targets.len()` are
/// the lifted targets, the rest are the server's inlier points in order.
pub fn server_neighborhoods(
    target_truth: &[Point2],
    inlier_points: &[Point2],
    k: usize,
) -> Result<Vec<NeighborSet>, AttackError> {
    let all: Vec<Point2> = target_truth.iter().chain(inlier_points).copied().collect();
    let mut sets = oracle_neighbors(&all, k)?;
    sets.truncate(target_truth.len());
    Ok(sets)
}

/// Iterative server-side attack.
///
/// Each round picks the unrecovered target with the most known-position
/// neighbors (ties to the lowest index), recovers it with
/// [`recover_point_mixed`] and adds the estimate to the known set. Stops after
/// `rounds` promotions or when no target has `min_inlier_neighbors` known
/// neighbors.
pub fn iterative_server_attack(
    lines: &[ObfuscatedLine],
    target_truth: &[Point2],
    inlier_points: &[Point2],
    nsets: &[NeighborSet],
    rounds: usize,
    min_inlier_neighbors: usize,
) -> Result<IterativeAttackOutcome, AttackError> {
    let n = lines.len();
    if target_truth.len() != n || nsets.len() != n {
        return Err(AttackError::LengthMismatch(format!(
            "{} lines, {} truths, {} neighbor sets",
            n,
            target_truth.len(),
            nsets.len()
        )));
    }
    let total = n + inlier_points.len();
    for s in nsets {
        if s.target >= n || s.neighbors.iter().any(|&j| j >= total || j == s.target) {
            return Err(AttackError::LengthMismatch(format!(
                "neighbor set of target {} references an invalid index",
                s.target
            )));
        }
    }

    let mut known: Vec<Option<Point2>> = vec![None; n];
    known.extend(inlier_points.iter().copied().map(Some));
    let mut promotions = Vec::new();
    let mut err_sum = 0.0;

    for round in 0..rounds {
        let pick = nsets
            .iter()
            .filter(|s| known[s.target].is_none())
            .map(|s| (s, s.neighbors.iter().filter(|&&j| known[j].is_some()).count()))
            .filter(|&(_, c)| c >= min_inlier_neighbors)
            .fold(None::<(&NeighborSet, usize)>, |best, cur| match best {
                Some(b) if b.1 > cur.1 || (b.1 == cur.1 && b.0.target < cur.0.target) => Some(b),
                _ => Some(cur),
            });
        let Some((set, count)) = pick else { break };

        let mut pts = Vec::new();
        let mut lns = Vec::new();
        for &j in &set.neighbors {
            match known[j] {
                Some(p) => pts.push(p),
                None => lns.push(lines[j].line),
            }
        }
        let res = recover_point_mixed(&lines[set.target].line, &lns, &pts)?;
        if !res.is_ok() {
            break;
        }
        let error = res.point.dist(target_truth[set.target]);
        err_sum += error;
        known[set.target] = Some(res.point);
        promotions.push(Promotion {
            round,
            target: set.target,
            known_neighbors: count,
            recovered: res.point,
            error,
            cumulative_mean_error: err_sum / (promotions.len() + 1) as f64,
        });
    }

    known.truncate(n);
    Ok(IterativeAttackOutcome {
        promotions,
        recovered: known,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{line_angle, line_through_points, Vec2};
    use crate::obfuscate::{dcl_lift, make_anchor_config, Orientation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x_axis() -> Line2 {
        Line2::new(Point2::new(0.0, 0.0), Vec2::new(1.0, 0.0))
    }

    fn vertical(u: f64) -> Line2 {
        Line2::new(Point2::new(u, 0.0), Vec2::new(0.0, 1.0))
    }

    fn at_angle(u: f64, deg: f64) -> Line2 {
        Line2::from_angle(Point2::new(u, 0.0), deg.to_radians())
    }

    /// Independent 1D golden-section minimizer over a plain closure.
    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..300 {
            let x1 = b - INV_PHI * (b - a);
            let x2 = a + INV_PHI * (b - a);
            if f(x1) <= f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn neighbor_examples() {
        let kps = [(0.0, 0.0), (1.0, 0.0), (3.0, 0.0), (10.0, 0.0)].map(|(u, v)| Point2::new(u, v));
        let sets = oracle_neighbors(&kps, 2).unwrap();
        assert_eq!(sets[0].neighbors, vec![1, 2]);
        let sets = oracle_neighbors(&kps, 3).unwrap();
        assert_eq!(sets[3].neighbors, vec![2, 1, 0]);
        let tie = [(0.0, 0.0), (-1.0, 0.0), (1.0, 0.0)].map(|(u, v)| Point2::new(u, v));
        assert_eq!(oracle_neighbors(&tie, 2).unwrap()[0].neighbors, vec![1, 2]);
        assert_eq!(
            oracle_neighbors(&tie, 3),
            Err(AttackError::TooFewPoints { n: 3, k: 3 })
        );
    }

    #[test]
    fn pairwise_examples() {
        let s = pairwise_t_star(&x_axis(), &vertical(2.0));
        assert_eq!(s.t_star, Some(2.0));
        assert_eq!(s.weight, 1.0);
        let s = pairwise_t_star(&x_axis(), &at_angle(4.0, 30.0));
        assert!((s.t_star.unwrap() - 4.0).abs() < 1e-12);
        assert!((s.weight - 0.25).abs() < 1e-15);
        let par = Line2::new(Point2::new(0.0, 3.0), Vec2::new(1.0, 0.0));
        let s = pairwise_t_star(&x_axis(), &par);
        assert_eq!(s.weight, 0.0);
        assert!(!s.is_usable());
    }

    #[test]
    fn weighted_mean_example_matches_golden_section() {
        let target = x_axis();
        let neigh = [vertical(2.0), at_angle(4.0, 30.0)];
        let r = recover_point(&target, &neigh).unwrap();
        let oracle = golden_min(|t| (t - 2.0).powi(2) + 0.25 * (t - 4.0).powi(2), -10.0, 10.0);
        assert!((oracle - 2.4).abs() < 1e-6);
        assert!((r.t_star - 2.4).abs() < 1e-12);
        let bf = recover_point_bruteforce(&target, &neigh, (-100.0, 100.0), 0.5);
        assert!((bf - 2.4).abs() < 1e-6, "{bf}");
    }

    #[test]
    fn bruteforce_simple_cases() {
        let bf = recover_point_bruteforce(&x_axis(), &[vertical(7.25)], (-50.0, 50.0), 1.0);
        assert!((bf - 7.25).abs() < 1e-6);
        let sym = [at_angle(-3.0, 60.0), at_angle(3.0, 120.0)];
        let bf = recover_point_bruteforce(&x_axis(), &sym, (-50.0, 50.0), 0.7);
        assert!(bf.abs() < 1e-6, "{bf}");
    }

    #[test]
    fn mode_one_collapses_to_anchor() {
        let a1 = Point2::new(320.0, 0.0);
        let kp = Point2::new(100.0, 200.0);
        let target = line_through_points(a1, kp).unwrap();
        let neigh: Vec<Line2> = [(90.0, 210.0), (120.0, 190.0), (80.0, 230.0), (110.0, 180.0), (95.0, 250.0)]
            .iter()
            .map(|&(u, v)| line_through_points(a1, Point2::new(u, v)).unwrap())
            .collect();
        let r = recover_point(&target, &neigh).unwrap();
        assert!(r.point.dist(a1) < 1e-9);
        assert!((r.point.dist(kp) - 297.3213749463701).abs() < 1e-9);
    }

    #[test]
    fn all_parallel_neighbors() {
        let neigh = [
            Line2::new(Point2::new(0.0, 1.0), Vec2::new(1.0, 0.0)),
            Line2::new(Point2::new(5.0, -2.0), Vec2::new(-1.0, 0.0)),
        ];
        let r = recover_point(&x_axis(), &neigh).unwrap();
        assert_eq!(r.status, RecoveryStatus::AllParallel);
        assert!(r.t_star.is_nan());
        assert_eq!(recover_point(&x_axis(), &[]), Err(AttackError::EmptyNeighborhood));
    }

    #[test]
    fn mixed_examples() {
        let r = recover_point_mixed(&x_axis(), &[], &[Point2::new(3.0, 1.0)]).unwrap();
        assert_eq!(r.t_star, 3.0);
        let r = recover_point_mixed(&x_axis(), &[vertical(1.0)], &[Point2::new(3.0, 1.0)]).unwrap();
        let oracle = golden_min(|t| (t - 3.0).powi(2) + 1.0 + (t - 1.0).powi(2), -10.0, 10.0);
        assert!((oracle - 2.0).abs() < 1e-6);
        assert!((r.t_star - 2.0).abs() < 1e-12);
        let pts = [Point2::new(5.0, 1.0), Point2::new(5.0, -7.0), Point2::new(5.0, 30.0)];
        let r = recover_point_mixed(&x_axis(), &[], &pts).unwrap();
        assert_eq!(r.t_star, 5.0);
        assert_eq!(recover_point_mixed(&x_axis(), &[], &[]), Err(AttackError::EmptyNeighborhood));
    }

    #[test]
    fn empty_attack() {
        let r = attack_all(&[], &[], &[], 30.0).unwrap();
        assert_eq!(r.total(), 0);
        assert_eq!(r.count_below_tau, 0);
        assert!(attack_all(&[], &[], &[Point2::default()], 30.0).is_err());
    }

    #[test]
    fn instability_examples() {
        let mk = |l: Line2| ObfuscatedLine { anchor_id: None, line: l };
        // all neighbors meet the target at (5, 0)
        let lines = vec![
            mk(x_axis()),
            mk(line_through_points(Point2::new(5.0, 0.0), Point2::new(6.0, 3.0)).unwrap()),
            mk(line_through_points(Point2::new(5.0, 0.0), Point2::new(1.0, 2.0)).unwrap()),
        ];
        let sets = vec![NeighborSet { target: 0, neighbors: vec![1, 2] }];
        assert!(instability_map(&lines, &sets)[0] < 1e-12);
        let lines = vec![mk(x_axis()), mk(vertical(2.0)), mk(at_angle(7.0, 45.0))];
        let s = instability_map(&lines, &sets)[0];
        assert!((s - 5.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mode_two_offsets_diverge_toward_boundary() {
        // target through a1 and a keypoint just left of the boundary; neighbor
        // through a2 and a keypoint just right of it
        let a1 = Point2::new(320.0, 0.0);
        let a2 = Point2::new(320.0, 480.0);
        let mut last = 0.0;
        for theta in [1e-2, 1e-3, 1e-4] {
            let target = Line2::from_angle(a1, std::f64::consts::FRAC_PI_2 + theta);
            let d = 3.0;
            // neighbor parallel to the target then offset by d, rotated back by theta
            let neighbor = Line2::from_angle(Point2::new(a2.u + d, a2.v), std::f64::consts::FRAC_PI_2);
            let s = pairwise_t_star(&target, &neighbor);
            let t = s.t_star.unwrap().abs();
            let sin = line_angle(&target, &neighbor).sin();
            let perp = point_line_distance_to_base(&target, &neighbor);
            assert!(t >= perp / sin - target.base.dist(neighbor.base) - 1e-6, "theta={theta}");
            assert!(t > last);
            last = t;
        }
        assert!(last > 1e4);
    }

    fn point_line_distance_to_base(target: &Line2, neighbor: &Line2) -> f64 {
        crate::geom::point_line_distance(neighbor, target.base)
    }

    fn random_line(rng: &mut ChaCha8Rng) -> Line2 {
        Line2::from_angle(
            Point2::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)),
            rng.random_range(0.0..std::f64::consts::PI),
        )
    }

    #[test]
    fn weights_equal_sin_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let (a, b) = (random_line(&mut rng), random_line(&mut rng));
            let w = pairwise_t_star(&a, &b).weight;
            let s = line_angle(&a, &b).sin();
            assert!((w - s * s).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_coefficient_is_positive_iff_ok() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let target = random_line(&mut rng);
            let neigh: Vec<Line2> = (0..rng.random_range(1..6)).map(|_| random_line(&mut rng)).collect();
            let r = recover_point(&target, &neigh).unwrap();
            assert!(r.weight_sum >= 0.0);
            assert_eq!(r.weight_sum > EPS_W, r.is_ok());
        }
    }

    #[test]
    fn translation_equivariance() {
        let cfg = make_anchor_config(640.0, 480.0, 480.0, Orientation::Vertical).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kps: Vec<Point2> = (0..200)
            .map(|_| Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        let lines = dcl_lift(&kps, &cfg).unwrap();
        let sets = oracle_neighbors(&kps, 8).unwrap();
        let shift = Vec2::new(37.5, -12.25);
        let moved: Vec<ObfuscatedLine> = lines
            .iter()
            .map(|l| ObfuscatedLine {
                anchor_id: l.anchor_id,
                line: Line2 {
                    base: l.line.base.offset(shift, 1.0),
                    dir: l.line.dir,
                },
            })
            .collect();
        for s in &sets {
            let n0: Vec<Line2> = s.neighbors.iter().map(|&j| lines[j].line).collect();
            let n1: Vec<Line2> = s.neighbors.iter().map(|&j| moved[j].line).collect();
            let p0 = recover_point(&lines[s.target].line, &n0).unwrap().point;
            let p1 = recover_point(&moved[s.target].line, &n1).unwrap().point;
            let expect = p0.offset(shift, 1.0);
            assert!(p1.dist(expect) < 1e-9 * (1.0 + p0.u.abs().max(p0.v.abs())), "{p1:?} vs {expect:?}");
        }
    }

    #[test]
    fn iterative_attack_with_no_targets() {
        let inl = [Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        let out = iterative_server_attack(&[], &[], &inl, &[], 10, 1).unwrap();
        assert!(out.promotions.is_empty());
    }

    #[test]
    fn iterative_attack_picks_most_connected_target() {
        let cfg = make_anchor_config(640.0, 480.0, 480.0, Orientation::Vertical).unwrap();
        let truth = [Point2::new(100.0, 100.0), Point2::new(500.0, 300.0)];
        let lines = dcl_lift(&truth, &cfg).unwrap();
        let inliers = [
            Point2::new(501.0, 301.0),
            Point2::new(499.0, 302.0),
            Point2::new(102.0, 99.0),
        ];
        let sets = server_neighborhoods(&truth, &inliers, 2).unwrap();
        let out = iterative_server_attack(&lines, &truth, &inliers, &sets, 1, 1).unwrap();
        assert_eq!(out.promotions.len(), 1);
        assert_eq!(out.promotions[0].target, 1);
        assert_eq!(out.promotions[0].known_neighbors, 2);
        let out = iterative_server_attack(&lines, &truth, &inliers, &sets, 10, 3).unwrap();
        assert!(out.promotions.is_empty());
    }
}
