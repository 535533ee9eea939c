use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::MIN_LINEAR;
use super::{
    check_triple_degenerate, refine_lm, reprojection_residual, solve_linear_nonminimal, solve_minimal_l6p,
    Correspondence, Pose, PoseError,
};
use crate::geom::Intrinsics;
use crate::obfuscate::is_single_anchor;

const SAMPLE_SIZE: usize = 6;
/// Redraws allowed per iteration while looking for a non-degenerate first triple.
const MAX_REDRAWS: usize = 1000;
const LO_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Point threshold in pixels; lines use `eps_pt / sqrt(2)`.
    pub eps_pt: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            eps_pt: 4.0,
            max_iters: 10_000,
            confidence: 0.9999,
            seed: 1,
        }
    }
}

impl RansacConfig {
    pub fn line_threshold(&self) -> f64 {
        self.eps_pt / std::f64::consts::SQRT_2
    }

    fn validate(&self) -> Result<(), PoseError> {
        if !(self.eps_pt > 0.0) {
            return Err(PoseError::InvalidConfig(format!("eps_pt must be positive, got {}", self.eps_pt)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PoseError::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Ok,
    DegenerateQuery,
    Failed,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStatus::Ok => "ok",
            EstimateStatus::DegenerateQuery => "degenerate_query",
            EstimateStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub iterations: usize,
    pub status: EstimateStatus,
}

impl PoseEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
struct Score {
    inliers: usize,
    residual: f64,
    mask: Vec<bool>,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.inliers > other.inliers || (self.inliers == other.inliers && self.residual < other.residual)
    }
}

fn score(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics, thr: f64) -> Score {
    let mut s = Score {
        inliers: 0,
        residual: 0.0,
        mask: vec![false; corrs.len()],
    };
    for (c, m) in corrs.iter().zip(s.mask.iter_mut()) {
        if let Some(r) = reprojection_residual(pose, c, k) {
            if r.abs() <= thr {
                *m = true;
                s.inliers += 1;
                s.residual += r.abs();
            }
        }
    }
    s
}

fn first_triple_ok(corrs: &[Correspondence], idx: &[usize]) -> bool {
    let tri = [corrs[idx[0]].line, corrs[idx[1]].line, corrs[idx[2]].line];
    if tri.iter().all(|l| l.anchor_id.is_some()) {
        !(tri[0].anchor_id == tri[1].anchor_id && tri[1].anchor_id == tri[2].anchor_id)
    } else {
        !check_triple_degenerate(&tri)
    }
}

fn required_iterations(inliers: usize, n: usize, confidence: f64) -> f64 {
    let w = (inliers as f64 / n as f64).max(SAMPLE_SIZE as f64 / n as f64);
    let p_good = w.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 0.0;
    }
    (1.0 - confidence).ln() / (1.0 - p_good).ln()
}

/// Refits on the inliers of `pose` (linear solve when there are enough, then
/// Levenberg-Marquardt) and keeps whichever model scores best.
fn local_optimize(pose: Pose, best: Score, corrs: &[Correspondence], k: &Intrinsics, thr: f64) -> (Pose, Score) {
    let (mut pose, mut best) = (pose, best);
    for _ in 0..LO_ROUNDS {
        let inl: Vec<Correspondence> = corrs.iter().zip(&best.mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        let mut cands = vec![pose];
        if inl.len() >= MIN_LINEAR {
            if let Ok(lin) = solve_linear_nonminimal(&inl) {
                cands.push(lin);
            }
        }
        let mut improved = false;
        for cand in cands {
            let refined = refine_lm(&cand, &inl, k);
            let s = score(&refined, corrs, k, thr);
            if s.better_than(&best) {
                pose = refined;
                best = s;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (pose, best)
}

/// Robust pose from line correspondences.
///
/// Returns `Err` only for malformed input. A query whose lines all share one
/// anchor yields status `DegenerateQuery`; no model with six inliers yields
/// `Failed`.
pub fn ransac_pose(corrs: &[Correspondence], k: &Intrinsics, cfg: &RansacConfig) -> Result<PoseEstimate, PoseError> {
    cfg.validate()?;
    let n = corrs.len();
    if n < SAMPLE_SIZE {
        return Err(PoseError::WrongCount {
            expected: format!(">= {SAMPLE_SIZE}"),
            got: n,
        });
    }
    let lines: Vec<_> = corrs.iter().map(|c| c.line).collect();
    if is_single_anchor(&lines) {
        return Ok(PoseEstimate {
            pose: Pose::identity(),
            inlier_mask: vec![false; n],
            iterations: 0,
            status: EstimateStatus::DegenerateQuery,
        });
    }

    let thr = cfg.line_threshold();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_pose = Pose::identity();
    let mut best = Score {
        inliers: 0,
        residual: f64::INFINITY,
        mask: vec![false; n],
    };
    let mut needed = cfg.max_iters as f64;
    let mut iterations = 0;
    while iterations < cfg.max_iters && (iterations as f64) < needed {
        iterations += 1;
        let mut idx = None;
        for _ in 0..MAX_REDRAWS {
            let cand = sample(&mut rng, n, SAMPLE_SIZE).into_vec();
            if first_triple_ok(corrs, &cand) {
                idx = Some(cand);
                break;
            }
        }
        let Some(idx) = idx else { continue };
        let six: Vec<Correspondence> = idx.iter().map(|&i| corrs[i]).collect();
        let Ok(models) = solve_minimal_l6p(&six) else { continue };

        let mut found = None;
        for m in models {
            let s = score(&m, corrs, k, thr);
            let beats = match &found {
                Some((_, fs)) => s.better_than(fs),
                None => s.better_than(&best),
            };
            if beats {
                found = Some((m, s));
            }
        }
        if let Some((m, s)) = found {
            let (p, s) = local_optimize(m, s, corrs, k, thr);
            best_pose = p;
            best = s;
            needed = required_iterations(best.inliers, n, cfg.confidence);
        }
    }

    let status = if best.inliers >= SAMPLE_SIZE && best_pose.is_valid() {
        EstimateStatus::Ok
    } else {
        EstimateStatus::Failed
    };
    Ok(PoseEstimate {
        pose: best_pose,
        inlier_mask: best.mask,
        iterations,
        status,
    })
}
