//! Line lifting of keypoints: dual convergent lines and the random-lines baseline.
//!
//! A lifted query carries only an anchor id, a canonical direction and a base
//! point. For dual convergent lines the base is the anchor itself, so nothing
//! in the record depends on where the keypoint sits along its line.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Line2, Point2, Vec2, EPS_GEOM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObfuscationError {
    #[error("invalid image dimensions or anchor separation")]
    InvalidDimensions,
    #[error("keypoint ({u}, {v}) lies outside the image")]
    OutOfBounds { u: f64, v: f64 },
    #[error("all {0} keypoints fall into a single region")]
    DegenerateQuery(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnchorId {
    A1,
    A2,
}

impl AnchorId {
    pub fn other(self) -> AnchorId {
        match self {
            AnchorId::A1 => AnchorId::A2,
            AnchorId::A2 => AnchorId::A1,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            AnchorId::A1 => 1,
            AnchorId::A2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Vertical,
    Horizontal,
}

impl std::str::FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vertical" => Ok(Orientation::Vertical),
            "horizontal" => Ok(Orientation::Horizontal),
            other => Err(format!("unknown orientation `{other}`")),
        }
    }
}

/// Two anchors on a partition line through the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub a1: Point2,
    pub a2: Point2,
    pub width: f64,
    pub height: f64,
}

impl AnchorConfig {
    pub fn anchor(&self, id: AnchorId) -> Point2 {
        match id {
            AnchorId::A1 => self.a1,
            AnchorId::A2 => self.a2,
        }
    }

    /// Unsigned distance of `p` from the partition line.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        let d = self.a2.sub(self.a1);
        (p.sub(self.a1).cross(d) / d.norm()).abs()
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.u >= 0.0 && p.u <= self.width && p.v >= 0.0 && p.v <= self.height
    }
}

/// Anchors placed symmetrically about the image center, `separation` apart.
///
/// With a vertical partition and `separation == height` this gives the
/// anchors at the top and bottom of the central column.
pub fn make_anchor_config(
    width: f64,
    height: f64,
    separation: f64,
    orientation: Orientation,
) -> Result<AnchorConfig, ObfuscationError> {
    let valid = |x: f64| x.is_finite() && x > 0.0;
    if !(valid(width) && valid(height) && valid(separation)) {
        return Err(ObfuscationError::InvalidDimensions);
    }
    let (cu, cv) = (width / 2.0, height / 2.0);
    let half = separation / 2.0;
    let (a1, a2) = match orientation {
        Orientation::Vertical => (Point2::new(cu, cv - half), Point2::new(cu, cv + half)),
        Orientation::Horizontal => (Point2::new(cu - half, cv), Point2::new(cu + half, cv)),
    };
    Ok(AnchorConfig {
        a1,
        a2,
        width,
        height,
    })
}

/// Region of a keypoint. Points on the partition line go to region 1.
///
/// Region 1 is the side where `cross(a2 - a1, kp - a1) >= 0`; for the vertical
/// layout that is the left half `u <= W/2`, for the horizontal layout the
/// lower half `v >= H/2`.
pub fn assign_region(kp: Point2, cfg: &AnchorConfig) -> Result<AnchorId, ObfuscationError> {
    if !cfg.contains(kp) {
        return Err(ObfuscationError::OutOfBounds { u: kp.u, v: kp.v });
    }
    let side = cfg.a2.sub(cfg.a1).cross(kp.sub(cfg.a1));
    Ok(if side >= 0.0 { AnchorId::A1 } else { AnchorId::A2 })
}

/// A line sent in place of a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObfuscatedLine {
    /// `None` for random lines.
    pub anchor_id: Option<AnchorId>,
    pub line: Line2,
}

impl ObfuscatedLine {
    pub fn dir(&self) -> Vec2 {
        self.line.dir
    }

    /// One CSV record: `anchor_id,dir_u,dir_v,base_u,base_v`.
    pub fn to_csv_record(&self) -> String {
        let id = self.anchor_id.map_or(0, AnchorId::as_u8);
        format!(
            "{id},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.line.dir.u, self.line.dir.v, self.line.base.u, self.line.base.v
        )
    }
}

pub const QUERY_CSV_HEADER: &str = "anchor_id,dir_u,dir_v,base_u,base_v";

pub fn query_to_csv(lines: &[ObfuscatedLine]) -> String {
    let mut out = String::with_capacity(lines.len() * 100 + 40);
    out.push_str(QUERY_CSV_HEADER);
    out.push('\n');
    for l in lines {
        let _ = writeln!(out, "{}", l.to_csv_record());
    }
    out
}

fn lift_one(kp: Point2, cfg: &AnchorConfig) -> Result<ObfuscatedLine, ObfuscationError> {
    let mut id = assign_region(kp, cfg)?;
    if kp.dist(cfg.anchor(id)) <= EPS_GEOM {
        id = id.other();
    }
    let anchor = cfg.anchor(id);
    Ok(ObfuscatedLine {
        anchor_id: Some(id),
        line: Line2::new(anchor, kp.sub(anchor)),
    })
}

/// Lifts keypoints to dual convergent lines without the single-region check.
pub fn dcl_lift_allow_degenerate(
    kps: &[Point2],
    cfg: &AnchorConfig,
) -> Result<Vec<ObfuscatedLine>, ObfuscationError> {
    kps.iter().map(|&kp| lift_one(kp, cfg)).collect()
}

/// Lifts each keypoint to the line joining it with its region's anchor.
///
/// A query of two or more keypoints that all land on one anchor is reported
/// as [`ObfuscationError::DegenerateQuery`].
pub fn dcl_lift(kps: &[Point2], cfg: &AnchorConfig) -> Result<Vec<ObfuscatedLine>, ObfuscationError> {
    let lines = dcl_lift_allow_degenerate(kps, cfg)?;
    if is_single_anchor(&lines) {
        return Err(ObfuscationError::DegenerateQuery(lines.len()));
    }
    Ok(lines)
}

/// True when there are at least two lines and they all share one anchor.
pub fn is_single_anchor(lines: &[ObfuscatedLine]) -> bool {
    match lines.first().and_then(|l| l.anchor_id) {
        Some(first) if lines.len() >= 2 => lines.iter().all(|l| l.anchor_id == Some(first)),
        _ => false,
    }
}

/// Random-lines baseline: each keypoint gets a line at a uniform angle in `[0, pi)`.
///
/// The emitted base is the foot of the perpendicular from `reference` (the
/// image center in practice) onto the line.
pub fn random_lift(kps: &[Point2], reference: Point2, seed: u64) -> Vec<ObfuscatedLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kps.iter()
        .map(|&kp| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let through = Line2::from_angle(kp, angle);
            let foot = through.point_at(through.foot_offset(reference));
            ObfuscatedLine {
                anchor_id: None,
                line: Line2 {
                    base: foot,
                    dir: through.dir,
                },
            }
        })
        .collect()
}
