//! Synthetic scenes, the project / lift / corrupt forward model and the
//! experiment runners built on it.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attack::{
    attack_all, iterative_server_attack, median, oracle_neighbors, server_neighborhoods, AttackError, AttackReport,
    IterativeAttackOutcome,
};
use crate::geom::{Intrinsics, Point2, Point3};
use crate::obfuscate::{
    dcl_lift, make_anchor_config, random_lift, AnchorConfig, AnchorId, ObfuscatedLine, ObfuscationError,
    Orientation,
};
use crate::pose::{
    check_triple_degenerate, det_n1, pose_errors, random_rotation, ransac_pose, Correspondence, EstimateStatus,
    Pose, PoseError, RansacConfig,
};

pub const MAP_COLS: usize = 64;
pub const MAP_ROWS: usize = 48;
pub const DEGENERACY_SAMPLES: usize = 100_000;
/// Threshold for counting a recovered keypoint as a successful attack.
pub const ATTACK_TAU: f64 = 30.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Obfuscation(#[from] ObfuscationError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftMode {
    Dcl,
    Random,
}

impl LiftMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LiftMode::Dcl => "dcl",
            LiftMode::Random => "random",
        }
    }
}

impl FromStr for LiftMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dcl" => Ok(LiftMode::Dcl),
            "random" => Ok(LiftMode::Random),
            other => Err(format!("unknown mode '{other}' (expected dcl or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n_points: usize,
    pub width: f64,
    pub height: f64,
    pub mode: LiftMode,
    /// Anchor separation in pixels.
    pub separation: f64,
    pub orientation: Orientation,
    pub k_neighbors: usize,
    /// Standard deviation of the keypoint noise, pixels.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub trials: usize,
    pub seed: u64,
    pub focal: f64,
    pub eps_pt: f64,
    pub recall_dt: f64,
    pub recall_dr_deg: f64,
    /// Measure wall-clock time per query. Off by default so outputs are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_points: 1500,
            width: 640.0,
            height: 480.0,
            mode: LiftMode::Dcl,
            separation: 480.0,
            orientation: Orientation::Vertical,
            k_neighbors: 20,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            trials: 100,
            seed: 1,
            focal: 500.0,
            eps_pt: 4.0,
            recall_dt: 0.05,
            recall_dr_deg: 5.0,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if !(pos(self.width) && pos(self.height)) {
            return bad("image dimensions must be positive");
        }
        if !pos(self.separation) {
            return bad("anchor separation must be positive");
        }
        if self.k_neighbors == 0 {
            return bad("k must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1)");
        }
        if !pos(self.focal) || !pos(self.eps_pt) {
            return bad("focal length and eps_pt must be positive");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(self.focal, self.focal, self.width / 2.0, self.height / 2.0)
    }

    pub fn anchor_config(&self) -> Result<AnchorConfig, BenchError> {
        Ok(make_anchor_config(self.width, self.height, self.separation, self.orientation)?)
    }

    pub fn ransac(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            eps_pt: self.eps_pt,
            seed,
            ..RansacConfig::default()
        }
    }

    pub fn lifter(&self, seed: u64) -> Result<Lifter, BenchError> {
        Ok(match self.mode {
            LiftMode::Dcl => Lifter::Dcl(self.anchor_config()?),
            LiftMode::Random => Lifter::Random {
                reference: Point2::new(self.width / 2.0, self.height / 2.0),
                seed,
            },
        })
    }
}

/// How keypoints become lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lifter {
    Dcl(AnchorConfig),
    Random { reference: Point2, seed: u64 },
}

impl Lifter {
    pub fn lift(&self, kps: &[Point2]) -> Result<Vec<ObfuscatedLine>, ObfuscationError> {
        match self {
            Lifter::Dcl(cfg) => dcl_lift(kps, cfg),
            Lifter::Random { reference, seed } => Ok(random_lift(kps, *reference, *seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub points3d: Vec<Point3>,
    pub gt_pose: Pose,
    pub k: Intrinsics,
    pub width: f64,
    pub height: f64,
    pub seed: u64,
}

impl SyntheticScene {
    /// Pinhole projections under the ground-truth pose, clamped into the image
    /// to absorb rounding at the border.
    pub fn keypoints(&self) -> Vec<Point2> {
        self.points3d
            .iter()
            .map(|x| {
                let p = self
                    .k
                    .project(&self.gt_pose.transform(x))
                    .expect("scene points lie in front of the camera");
                Point2::new(p.u.clamp(0.0, self.width), p.v.clamp(0.0, self.height))
            })
            .collect()
    }
}

/// Uniform keypoints over the image, `u` then `v` per point.
pub fn uniform_keypoints<R: Rng + ?Sized>(rng: &mut R, n: usize, width: f64, height: f64) -> Vec<Point2> {
    (0..n)
        .map(|_| Point2::new(rng.random_range(0.0..width), rng.random_range(0.0..height)))
        .collect()
}

/// Random camera and `n_points` map points whose projections are uniform over
/// the image at depths uniform in `[2, 10]`.
pub fn generate_scene(cfg: &ExperimentConfig) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.intrinsics();
    let r = random_rotation(&mut rng);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dir = nalgebra::Vector3::from_fn(|_, _| normal.sample(&mut rng)).normalize();
    let t = dir * rng.random_range(0.5..=2.0);
    let kps = uniform_keypoints(&mut rng, cfg.n_points, cfg.width, cfg.height);
    let points3d = kps
        .iter()
        .map(|&kp| {
            let depth = rng.random_range(2.0..=10.0);
            Point3::from(r.transpose() * (k.ray(kp) * depth - t))
        })
        .collect();
    SyntheticScene {
        points3d,
        gt_pose: Pose::new(r, t),
        k,
        width: cfg.width,
        height: cfg.height,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedQuery {
    pub keypoints: Vec<Point2>,
    pub lines: Vec<ObfuscatedLine>,
    pub corrs: Vec<Correspondence>,
    /// True where the correspondence was re-paired with a wrong 3D point.
    pub outlier_mask: Vec<bool>,
}

fn pair(k: &Intrinsics, lines: &[ObfuscatedLine], pts: &[Point3]) -> Vec<Correspondence> {
    lines.iter().zip(pts).map(|(l, x)| Correspondence::new(k, *l, *x)).collect()
}

pub fn project_and_lift(scene: &SyntheticScene, lifter: &Lifter) -> Result<LiftedQuery, BenchError> {
    let keypoints = scene.keypoints();
    let lines = lifter.lift(&keypoints)?;
    let corrs = pair(&scene.k, &lines, &scene.points3d);
    Ok(LiftedQuery {
        outlier_mask: vec![false; keypoints.len()],
        keypoints,
        lines,
        corrs,
    })
}

/// Adds isotropic Gaussian noise to the keypoints, re-lifts them, and re-pairs
/// `floor(outlier_fraction * n)` correspondences with another random 3D point.
pub fn corrupt(
    scene: &SyntheticScene,
    keypoints: &[Point2],
    lifter: &Lifter,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<LiftedQuery, BenchError> {
    let n = keypoints.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let noisy: Vec<Point2> = if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        keypoints
            .iter()
            .map(|p| {
                let u = p.u + noise.sample(&mut rng);
                let v = p.v + noise.sample(&mut rng);
                Point2::new(u.clamp(0.0, scene.width), v.clamp(0.0, scene.height))
            })
            .collect()
    } else {
        keypoints.to_vec()
    };
    let lines = lifter.lift(&noisy)?;
    let mut pts = scene.points3d.clone();
    let mut outlier_mask = vec![false; n];
    let m = (outlier_fraction * n as f64).floor() as usize;
    if m > 0 && n >= 2 {
        for i in sample(&mut rng, n, m.min(n)) {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            pts[i] = scene.points3d[j];
            outlier_mask[i] = true;
        }
    }
    Ok(LiftedQuery {
        keypoints: noisy,
        corrs: pair(&scene.k, &lines, &pts),
        lines,
        outlier_mask,
    })
}

/// Per-bin mean over an image-aligned grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMap {
    pub cols: usize,
    pub rows: usize,
    /// Row-major bin means; empty bins hold zero.
    pub values: Vec<f64>,
    pub max: f64,
}

impl BinnedMap {
    /// Non-finite samples are skipped.
    pub fn from_samples(points: &[Point2], values: &[f64], width: f64, height: f64) -> Self {
        let (cols, rows) = (MAP_COLS, MAP_ROWS);
        let mut sum = vec![0.0; cols * rows];
        let mut cnt = vec![0usize; cols * rows];
        for (p, &v) in points.iter().zip(values) {
            if !v.is_finite() {
                continue;
            }
            let c = ((p.u / width * cols as f64) as usize).min(cols - 1);
            let r = ((p.v / height * rows as f64) as usize).min(rows - 1);
            sum[r * cols + c] += v;
            cnt[r * cols + c] += 1;
        }
        let values: Vec<f64> = sum
            .iter()
            .zip(&cnt)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        Self { cols, rows, values, max }
    }

    /// Plain (P2) graymap with `clamp(value / max * 255)` per bin.
    pub fn to_pgm(&self) -> String {
        let scale = if self.max > 0.0 { 255.0 / self.max } else { 0.0 };
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| ((self.values[r * self.cols + c] * scale).round().clamp(0.0, 255.0) as u8).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn sidecar(&self) -> String {
        format!("err_max={}\n", self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackExperiment {
    pub keypoints: Vec<Point2>,
    pub lines: Vec<ObfuscatedLine>,
    pub report: AttackReport,
    pub error_map: BinnedMap,
    pub instability_map: BinnedMap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSummary {
    pub mode: LiftMode,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub mean_err_px: f64,
    pub median_err_px: f64,
    pub count_below_30: usize,
    pub n_failed: usize,
    pub boundary_instability: f64,
    pub interior_instability: f64,
}

impl AttackExperiment {
    /// Mean instability of targets within `near` pixels of the partition
    /// line and of those farther than `far`.
    pub fn instability_contrast(&self, anchors: &AnchorConfig, near: f64, far: f64) -> (f64, f64) {
        let mut band = (0.0, 0usize);
        let mut interior = (0.0, 0usize);
        for (p, &s) in self.report.points.iter().zip(&self.report.instability) {
            if !s.is_finite() {
                continue;
            }
            let d = anchors.boundary_distance(p.truth);
            if d <= near {
                band = (band.0 + s, band.1 + 1);
            } else if d > far {
                interior = (interior.0 + s, interior.1 + 1);
            }
        }
        let mean = |(s, c): (f64, usize)| if c > 0 { s / c as f64 } else { f64::NAN };
        (mean(band), mean(interior))
    }

    pub fn summary(&self, cfg: &ExperimentConfig) -> Result<AttackSummary, BenchError> {
        let (boundary, interior) = self.instability_contrast(&cfg.anchor_config()?, 5.0, 100.0);
        Ok(AttackSummary {
            mode: cfg.mode,
            n: cfg.n_points,
            k: cfg.k_neighbors,
            seed: cfg.seed,
            mean_err_px: self.report.mean_error,
            median_err_px: self.report.median_error,
            count_below_30: self.report.count_below(ATTACK_TAU),
            n_failed: self.report.n_failed,
            boundary_instability: boundary,
            interior_instability: interior,
        })
    }
}

/// Geometry-recovery attack on uniform keypoints with oracle neighborhoods.
pub fn run_attack_experiment(cfg: &ExperimentConfig) -> Result<AttackExperiment, BenchError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let keypoints = uniform_keypoints(&mut rng, cfg.n_points, cfg.width, cfg.height);
    let observed = if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        keypoints
            .iter()
            .map(|p| {
                let u = (p.u + noise.sample(&mut rng)).clamp(0.0, cfg.width);
                let v = (p.v + noise.sample(&mut rng)).clamp(0.0, cfg.height);
                Point2::new(u, v)
            })
            .collect()
    } else {
        keypoints.clone()
    };
    let lines = cfg.lifter(cfg.seed)?.lift(&observed)?;
    let nsets = oracle_neighbors(&keypoints, cfg.k_neighbors)?;
    let report = attack_all(&lines, &nsets, &keypoints, ATTACK_TAU)?;
    let errors: Vec<f64> = report.errors().collect();
    let error_map = BinnedMap::from_samples(&keypoints, &errors, cfg.width, cfg.height);
    let instability_map = BinnedMap::from_samples(&keypoints, &report.instability, cfg.width, cfg.height);
    Ok(AttackExperiment {
        keypoints,
        lines,
        report,
        error_map,
        instability_map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub query_id: usize,
    pub dr_deg: f64,
    pub dt: f64,
    pub inliers: usize,
    pub total: usize,
    pub iterations: usize,
    pub time_ms: f64,
    pub status: String,
}

impl QueryRow {
    pub fn succeeded(&self) -> bool {
        self.status == EstimateStatus::Ok.as_str()
    }
}

pub const LOCALIZATION_CSV_HEADER: &str = "query_id,dR_deg,dT,inliers,total,iterations,time_ms,status";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub rows: Vec<QueryRow>,
    /// Medians over all queries; failed queries count as infinite error.
    pub median_dr_deg: f64,
    pub median_dt: f64,
    /// Median of `dT / ||t_gt||`.
    pub median_dt_rel: f64,
    pub recall: f64,
    pub recall_dt: f64,
    pub recall_dr_deg: f64,
    pub n_ok: usize,
}

impl LocalizationReport {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from(LOCALIZATION_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.query_id, r.dr_deg, r.dt, r.inliers, r.total, r.iterations, r.time_ms, r.status
            );
        }
        out
    }
}

fn localize_one(cfg: &ExperimentConfig, trial: usize) -> Result<(QueryRow, f64), BenchError> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let scene = generate_scene(&ExperimentConfig { seed, ..cfg.clone() });
    let lifter = cfg.lifter(seed)?;
    let clean = scene.keypoints();
    let start = Instant::now();
    let mut row = QueryRow {
        query_id: trial,
        dr_deg: f64::INFINITY,
        dt: f64::INFINITY,
        inliers: 0,
        total: clean.len(),
        iterations: 0,
        time_ms: 0.0,
        status: EstimateStatus::Failed.as_str().to_string(),
    };
    let query = match corrupt(&scene, &clean, &lifter, cfg.noise_sigma, cfg.outlier_fraction, seed) {
        Ok(q) => q,
        Err(BenchError::Obfuscation(ObfuscationError::DegenerateQuery(_))) => {
            row.status = EstimateStatus::DegenerateQuery.as_str().to_string();
            return Ok((row, f64::INFINITY));
        }
        Err(e) => return Err(e),
    };
    if query.corrs.len() >= 6 {
        let est = ransac_pose(&query.corrs, &scene.k, &cfg.ransac(seed))?;
        row.inliers = est.num_inliers();
        row.iterations = est.iterations;
        row.status = est.status.as_str().to_string();
        if est.status == EstimateStatus::Ok {
            let (dr, dt) = pose_errors(&scene.gt_pose, &est.pose);
            row.dr_deg = dr;
            row.dt = dt;
        }
    }
    if cfg.record_timing {
        row.time_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    let rel = row.dt / scene.gt_pose.t.norm();
    Ok((row, rel))
}

/// One fresh scene per trial (seed `seed + i`), lifted, corrupted and
/// localized. Rows come back in trial order.
pub fn run_localization_experiment(cfg: &ExperimentConfig) -> Result<LocalizationReport, BenchError> {
    cfg.validate()?;
    let results: Vec<(QueryRow, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| localize_one(cfg, i))
        .collect::<Result<_, _>>()?;
    let (rows, rel): (Vec<QueryRow>, Vec<f64>) = results.into_iter().unzip();
    let drs: Vec<f64> = rows.iter().map(|r| r.dr_deg).collect();
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let hits = rows
        .iter()
        .filter(|r| r.succeeded() && r.dt <= cfg.recall_dt && r.dr_deg <= cfg.recall_dr_deg)
        .count();
    Ok(LocalizationReport {
        median_dr_deg: median(&drs),
        median_dt: median(&dts),
        median_dt_rel: median(&rel),
        recall: if rows.is_empty() { f64::NAN } else { hits as f64 / rows.len() as f64 },
        recall_dt: cfg.recall_dt,
        recall_dr_deg: cfg.recall_dr_deg,
        n_ok: rows.iter().filter(|r| r.succeeded()).count(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyStats {
    pub mode: LiftMode,
    pub samples: usize,
    pub degenerate: usize,
    pub triple_degenerate_rate: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fraction of uniform six-samples whose lines all share one anchor.
    pub six_sample_single_anchor_rate: f64,
    pub same_anchor_triples: usize,
    /// Fraction of same-anchor triples with `|det N1| < 1e-9`.
    pub same_anchor_singular_fraction: f64,
}

pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Degenerate-sample frequencies over uniformly drawn triples and six-samples.
pub fn degeneracy_from_corrs(corrs: &[Correspondence], mode: LiftMode, samples: usize, seed: u64) -> DegeneracyStats {
    let n = corrs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut degenerate = 0;
    let mut same_anchor = 0;
    let mut singular = 0;
    let mut six_single = 0;
    let same = |ids: &mut dyn Iterator<Item = usize>| -> bool {
        let mut ids = ids.map(|i| corrs[i].line.anchor_id);
        match ids.next() {
            Some(Some(a)) => ids.all(|b| b == Some(a)),
            _ => false,
        }
    };
    for _ in 0..samples {
        let idx = sample(&mut rng, n, 3);
        let tri = [corrs[idx.index(0)], corrs[idx.index(1)], corrs[idx.index(2)]];
        if check_triple_degenerate(&[tri[0].line, tri[1].line, tri[2].line]) {
            degenerate += 1;
        }
        if same(&mut idx.iter()) {
            same_anchor += 1;
            if det_n1(&tri).abs() < 1e-9 {
                singular += 1;
            }
        }
        let six = sample(&mut rng, n, 6);
        if same(&mut six.iter()) {
            six_single += 1;
        }
    }
    let (ci_low, ci_high) = wilson_interval(degenerate, samples, 1.959_963_984_540_054);
    let rate = |c: usize, total: usize| if total > 0 { c as f64 / total as f64 } else { f64::NAN };
    DegeneracyStats {
        mode,
        samples,
        degenerate,
        triple_degenerate_rate: rate(degenerate, samples),
        ci_low,
        ci_high,
        six_sample_single_anchor_rate: rate(six_single, samples),
        same_anchor_triples: same_anchor,
        same_anchor_singular_fraction: rate(singular, same_anchor),
    }
}

pub fn run_degeneracy_stats(cfg: &ExperimentConfig, samples: usize) -> Result<DegeneracyStats, BenchError> {
    cfg.validate()?;
    if cfg.n_points < 6 {
        return Err(BenchError::InvalidConfig("need at least 6 points".into()));
    }
    let scene = generate_scene(cfg);
    let query = project_and_lift(&scene, &cfg.lifter(cfg.seed)?)?;
    Ok(degeneracy_from_corrs(&query.corrs, cfg.mode, samples, cfg.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub separation_px: f64,
    pub median_dr_deg: f64,
    pub median_dt: f64,
    pub recall: f64,
}

pub const ABLATION_CSV_HEADER: &str = "separation_px,median_dR_deg,median_dT,recall";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Each separation's median errors are at least 90% of the previous one's.
    pub monotone_nonimproving: bool,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.separation_px, r.median_dr_deg, r.median_dt, r.recall));
        }
        out
    }
}

/// `later` is no better than `earlier` beyond the given relative slack.
pub fn not_better(earlier: f64, later: f64, slack: f64) -> bool {
    later >= (1.0 - slack) * earlier
}

/// Localization at each anchor separation with identical scenes and noise.
pub fn run_anchor_ablation(cfg: &ExperimentConfig, separations: &[f64]) -> Result<AblationReport, BenchError> {
    if separations.is_empty() {
        return Err(BenchError::InvalidConfig("no separations given".into()));
    }
    let mut rows = Vec::with_capacity(separations.len());
    for &sep in separations {
        let rep = run_localization_experiment(&ExperimentConfig {
            separation: sep,
            mode: LiftMode::Dcl,
            ..cfg.clone()
        })?;
        rows.push(AblationRow {
            separation_px: sep,
            median_dr_deg: rep.median_dr_deg,
            median_dt: rep.median_dt,
            recall: rep.recall,
        });
    }
    let monotone_nonimproving = rows.windows(2).all(|w| {
        not_better(w[0].median_dr_deg, w[1].median_dr_deg, 0.1) && not_better(w[0].median_dt, w[1].median_dt, 0.1)
    });
    Ok(AblationReport {
        rows,
        monotone_nonimproving,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeScenario {
    pub inliers: Vec<Point2>,
    pub targets: Vec<Point2>,
    pub outcome: IterativeAttackOutcome,
}

/// Server-side iterative attack on a cluster of `n_targets` unknown keypoints
/// (a square of half-width `cluster_half_width`) surrounded by `n_inliers`
/// keypoints outside the square whose positions the server knows. The
/// neighborhoods are exact.
pub fn run_iterative_scenario(
    cfg: &ExperimentConfig,
    n_inliers: usize,
    n_targets: usize,
    cluster_half_width: f64,
) -> Result<IterativeScenario, BenchError> {
    cfg.validate()?;
    let h = cluster_half_width;
    if !(h > 0.0 && 2.0 * h < cfg.width.min(cfg.height)) {
        return Err(BenchError::InvalidConfig("cluster does not fit in the image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cu = rng.random_range(h..cfg.width - h);
    let cv = rng.random_range(h..cfg.height - h);
    let inside = |p: &Point2| (p.u - cu).abs() < h && (p.v - cv).abs() < h;
    let targets: Vec<Point2> = (0..n_targets)
        .map(|_| Point2::new(cu + rng.random_range(-h..h), cv + rng.random_range(-h..h)))
        .collect();
    let mut inliers = Vec::with_capacity(n_inliers);
    while inliers.len() < n_inliers {
        let p = Point2::new(rng.random_range(0.0..cfg.width), rng.random_range(0.0..cfg.height));
        if !inside(&p) {
            inliers.push(p);
        }
    }
    let lines = match cfg.mode {
        LiftMode::Dcl => crate::obfuscate::dcl_lift_allow_degenerate(&targets, &cfg.anchor_config()?)?,
        LiftMode::Random => cfg.lifter(cfg.seed)?.lift(&targets)?,
    };
    let nsets = server_neighborhoods(&targets, &inliers, cfg.k_neighbors)?;
    let outcome = iterative_server_attack(&lines, &targets, &inliers, &nsets, n_targets, 1)?;
    Ok(IterativeScenario {
        inliers,
        targets,
        outcome,
    })
}

/// Share of keypoints assigned to the first anchor.
pub fn anchor_share(lines: &[ObfuscatedLine]) -> f64 {
    let a1 = lines.iter().filter(|l| l.anchor_id == Some(AnchorId::A1)).count();
    a1 as f64 / lines.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point_line_distance;
    use crate::pose::constraint_residual;

    fn small(n: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_points: n,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn scene_projects_inside_image() {
        let cfg = small(1500);
        let scene = generate_scene(&cfg);
        assert_eq!(scene.points3d.len(), 1500);
        for x in &scene.points3d {
            let pc = scene.gt_pose.transform(x);
            assert!(pc.z >= 2.0 - 1e-9 && pc.z <= 10.0 + 1e-9);
            let p = scene.k.project(&pc).unwrap();
            assert!(p.u >= -1e-9 && p.u <= 640.0 + 1e-9 && p.v >= -1e-9 && p.v <= 480.0 + 1e-9);
        }
        let tn = scene.gt_pose.t.norm();
        assert!((0.5..=2.0 + 1e-12).contains(&tn));
        assert!(scene.gt_pose.is_valid());
        assert_eq!(generate_scene(&cfg), scene);
        assert!(generate_scene(&small(0)).points3d.is_empty());
    }

    #[test]
    fn forward_model_is_consistent() {
        let cfg = small(1500);
        let scene = generate_scene(&cfg);
        let q = project_and_lift(&scene, &cfg.lifter(1).unwrap()).unwrap();
        for ((c, l), kp) in q.corrs.iter().zip(&q.lines).zip(&q.keypoints) {
            assert!(constraint_residual(&scene.gt_pose, c).abs() < 1e-9);
            assert!(point_line_distance(&l.line, *kp) < 1e-9);
        }
        let share = anchor_share(&q.lines);
        assert!((share - 0.5).abs() <= 0.02 + 1e-12, "{share}");

        let rl = ExperimentConfig {
            mode: LiftMode::Random,
            ..cfg
        };
        let q = project_and_lift(&scene, &rl.lifter(3).unwrap()).unwrap();
        for (c, kp) in q.corrs.iter().zip(&q.keypoints) {
            assert!(constraint_residual(&scene.gt_pose, c).abs() < 1e-9);
            assert!(point_line_distance(&c.line.line, *kp) < 1e-9);
        }
    }

    #[test]
    fn corrupt_contracts() {
        let cfg = small(100);
        let scene = generate_scene(&cfg);
        let lifter = cfg.lifter(1).unwrap();
        let clean = project_and_lift(&scene, &lifter).unwrap();
        let same = corrupt(&scene, &clean.keypoints, &lifter, 0.0, 0.0, 9).unwrap();
        assert_eq!(same, clean);

        let out = corrupt(&scene, &clean.keypoints, &lifter, 0.0, 0.3, 9).unwrap();
        assert_eq!(out.outlier_mask.iter().filter(|&&b| b).count(), 30);
        for (i, c) in out.corrs.iter().enumerate() {
            assert_eq!(c.point != scene.points3d[i], out.outlier_mask[i]);
        }
        assert_eq!(corrupt(&scene, &clean.keypoints, &lifter, 0.5, 0.3, 9).unwrap(), corrupt(&scene, &clean.keypoints, &lifter, 0.5, 0.3, 9).unwrap());

        let noisy = corrupt(&scene, &clean.keypoints, &lifter, 0.5, 0.0, 9).unwrap();
        let dists: Vec<f64> = noisy
            .lines
            .iter()
            .zip(&clean.keypoints)
            .map(|(l, kp)| point_line_distance(&l.line, *kp))
            .collect();
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        // the perpendicular noise component has mean |N(0, 0.5)| = 0.4 px
        assert!(mean < 1.0, "{mean}");
        let res: Vec<f64> = noisy.corrs.iter().map(|c| constraint_residual(&scene.gt_pose, c).abs()).collect();
        assert!(median(&res) > 0.0);
    }

    #[test]
    fn binned_map_and_pgm() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(5.0, 5.0), Point2::new(639.9, 479.9), Point2::new(640.0, 480.0)];
        let m = BinnedMap::from_samples(&pts, &[10.0, 20.0, 40.0, f64::INFINITY], 640.0, 480.0);
        assert_eq!(m.values[0], 15.0);
        assert_eq!(m.values[MAP_COLS * MAP_ROWS - 1], 40.0);
        assert_eq!(m.max, 40.0);
        let pgm = m.to_pgm();
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("64 48"));
        assert_eq!(lines.next(), Some("255"));
        let first: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 64);
        assert_eq!(first[0], "96");
        assert!(pgm.trim_end().ends_with("255"));
        assert_eq!(m.sidecar(), "err_max=40\n");
    }

    #[test]
    fn attack_experiment_contrast() {
        let cfg = ExperimentConfig::default();
        let dcl = run_attack_experiment(&cfg).unwrap();
        assert!(dcl.report.mean_error > 100.0);
        let rl = run_attack_experiment(&ExperimentConfig {
            mode: LiftMode::Random,
            ..cfg.clone()
        })
        .unwrap();
        assert!(rl.report.median_error < 10.0);
        assert!(dcl.report.median_error >= 10.0 * rl.report.median_error);
        let s = dcl.summary(&cfg).unwrap();
        assert!(s.boundary_instability >= 10.0 * s.interior_instability);
    }

    #[test]
    fn localization_noise_free() {
        let cfg = ExperimentConfig {
            n_points: 100,
            trials: 20,
            ..ExperimentConfig::default()
        };
        let rep = run_localization_experiment(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 20);
        assert_eq!(rep.n_ok, 20);
        assert!(rep.median_dr_deg < 1e-3 && rep.median_dt < 1e-4);
        assert!(rep.rows.iter().enumerate().all(|(i, r)| r.query_id == i && r.time_ms == 0.0));
        assert_eq!(rep.to_csv(), run_localization_experiment(&cfg).unwrap().to_csv());

        let empty = run_localization_experiment(&ExperimentConfig { trials: 0, ..cfg }).unwrap();
        assert_eq!(empty.to_csv(), format!("{LOCALIZATION_CSV_HEADER}\n"));
    }

    #[test]
    fn degeneracy_rates() {
        let cfg = small(1500);
        let s = run_degeneracy_stats(&cfg, 20_000).unwrap();
        assert!((s.triple_degenerate_rate - 0.25).abs() < 0.02, "{}", s.triple_degenerate_rate);
        assert!(s.ci_low < 0.25 && s.ci_high > 0.25);
        assert_eq!(s.same_anchor_singular_fraction, 1.0);
        // 2 * 0.5^6
        assert!((s.six_sample_single_anchor_rate - 0.03125).abs() < 0.005);

        let rl = run_degeneracy_stats(
            &ExperimentConfig {
                mode: LiftMode::Random,
                ..cfg.clone()
            },
            20_000,
        )
        .unwrap();
        assert!(rl.triple_degenerate_rate < 1e-3);

        let scene = generate_scene(&cfg);
        let anchors = cfg.anchor_config().unwrap();
        let left: Vec<usize> = (0..scene.points3d.len())
            .filter(|&i| scene.keypoints()[i].u < 300.0)
            .collect();
        let kps: Vec<Point2> = left.iter().map(|&i| scene.keypoints()[i]).collect();
        let lines = crate::obfuscate::dcl_lift_allow_degenerate(&kps, &anchors).unwrap();
        let corrs = pair(&scene.k, &lines, &left.iter().map(|&i| scene.points3d[i]).collect::<Vec<_>>());
        let s = degeneracy_from_corrs(&corrs, LiftMode::Dcl, 2_000, 1);
        assert_eq!(s.triple_degenerate_rate, 1.0);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(25_000, 100_000, 1.96);
        assert!(lo < 0.25 && hi > 0.25 && hi - lo < 0.006);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
        let (lo, _) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn ablation_single_row_and_trend_helper() {
        let cfg = ExperimentConfig {
            n_points: 60,
            trials: 3,
            ..ExperimentConfig::default()
        };
        let rep = run_anchor_ablation(&cfg, &[480.0]).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.monotone_nonimproving);
        assert_eq!(rep.to_csv().lines().count(), 2);
        assert!(run_anchor_ablation(&cfg, &[]).is_err());
        assert!(not_better(1.0, 0.95, 0.1));
        assert!(!not_better(1.0, 0.85, 0.1));
    }

    #[test]
    fn iterative_scenario_drifts_for_dcl_only() {
        // (overall mean, first-half mean, second-half mean) over ten scenes
        let run = |mode: LiftMode| {
            let mut acc = [0.0; 3];
            for seed in 1..=10 {
                let cfg = ExperimentConfig {
                    seed,
                    mode,
                    ..ExperimentConfig::default()
                };
                let out = run_iterative_scenario(&cfg, 200, 50, 100.0).unwrap().outcome;
                assert_eq!(out.promotions.len(), 50);
                let e: Vec<f64> = out.promotions.iter().map(|p| p.error).collect();
                acc[0] += out.mean_error() / 10.0;
                acc[1] += e[..25].iter().sum::<f64>() / 250.0;
                acc[2] += e[25..].iter().sum::<f64>() / 250.0;
            }
            acc
        };
        let dcl = run(LiftMode::Dcl);
        let rl = run(LiftMode::Random);
        assert!(rl[0] < 20.0, "{rl:?}");
        assert!(dcl[0] > 2.5 * rl[0], "{dcl:?} vs {rl:?}");
        // errors accumulate as recovered points are reused
        assert!(dcl[2] > dcl[1], "{dcl:?}");
    }
}
