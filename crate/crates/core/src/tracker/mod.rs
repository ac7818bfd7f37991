//! Depth frame to four depth-sampled corners of the held target.
//!
//! Steps: trim the zero border, threshold to a binary mask, follow region
//! borders, straighten them, keep regions held from a bottom corner, find four
//! sequential corner vertices, choose the highest group, refine to sub-pixel
//! positions and sample a patch depth per corner.

mod corners;
mod outline;
mod patch;
mod refine;
mod simplify;

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthio::DepthFrame;

pub use corners::{
    detect_corners, identify_candidates, internal_angles, polygon_centroid, select_target,
    signed_area, BBox, Candidate, CornerGroup, GroupInfo,
};
pub use outline::extract_outlines;
pub use patch::{sample_patch_depth, PatchSample};
pub use refine::{refine_corner, refine_corners, RefineStatus, RefinedCorner};
pub use simplify::{farthest_pair, segment_distance, simplify_outline};

/// Pipeline step at which no target remained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Candidates,
    Corners,
    SelectTarget,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("frame has no nonzero pixel")]
    EmptyFrame,
    #[error("no target found ({stage:?})")]
    NoTarget { stage: Stage },
    #[error("patch around ({x:.2}, {y:.2}) holds no depth")]
    SamplingFailure { x: f64, y: f64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

impl TrackError {
    pub fn code(&self) -> &'static str {
        match self {
            TrackError::EmptyFrame => "empty-frame",
            TrackError::NoTarget { .. } => "no-target",
            TrackError::SamplingFailure { .. } => "sampling-failure",
            TrackError::InvalidConfig(_) => "invalid-config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub threshold_lo: u16,
    pub threshold_hi: u16,
    pub min_region_px: usize,
    pub simplify_epsilon: f64,
    pub angle_lo: f64,
    pub angle_hi: f64,
    pub height_fraction: f64,
    pub bottom_proximity_px: f64,
    pub patch_size: usize,
    pub refine_window: usize,
    pub refine_max_iters: usize,
    pub refine_shift_tol: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            threshold_lo: 150,
            threshold_hi: 1000,
            min_region_px: 3500,
            simplify_epsilon: 3.0,
            angle_lo: 30.0,
            angle_hi: 150.0,
            height_fraction: 0.2,
            bottom_proximity_px: 10.0,
            patch_size: 5,
            refine_window: 7,
            refine_max_iters: 5,
            refine_shift_tol: 0.05,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::InvalidConfig(m.to_string()));
        if self.threshold_lo >= self.threshold_hi {
            return bad("threshold_lo must be below threshold_hi");
        }
        if self.patch_size.is_multiple_of(2) {
            return bad("patch_size must be odd");
        }
        if !(self.angle_lo > 0.0 && self.angle_lo < self.angle_hi && self.angle_hi < 180.0) {
            return bad("need 0 < angle_lo < angle_hi < 180");
        }
        if !(self.simplify_epsilon >= 0.0 && self.simplify_epsilon.is_finite()) {
            return bad("simplify_epsilon must be finite and non-negative");
        }
        if !(self.height_fraction >= 0.0 && self.height_fraction < 1.0) {
            return bad("height_fraction must lie in [0, 1)");
        }
        if !(self.bottom_proximity_px >= 0.0 && self.bottom_proximity_px.is_finite()) {
            return bad("bottom_proximity_px must be finite and non-negative");
        }
        if self.refine_window < 3 || self.refine_window.is_multiple_of(2) {
            return bad("refine_window must be odd and at least 3");
        }
        if !(self.refine_shift_tol > 0.0) {
            return bad("refine_shift_tol must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrackError> {
        let cfg: TrackerConfig =
            serde_json::from_str(text).map_err(|e| TrackError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TrackError::InvalidConfig(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    fn in_range(&self, d: u16) -> bool {
        d >= self.threshold_lo && d <= self.threshold_hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub origin_offset: (usize, usize),
}

impl BinaryMask {
    pub fn new(
        width: usize,
        height: usize,
        bits: Vec<bool>,
        origin_offset: (usize, usize),
    ) -> Self {
        assert_eq!(bits.len(), width * height, "mask size");
        BinaryMask {
            width,
            height,
            bits,
            origin_offset,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// Closed pixel outline; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlinePolygon {
    pub vertices: Vec<Point2<f64>>,
    pub area_px: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerQuad {
    pub corners: [Point2<f64>; 4],
    pub depths: [f64; 4],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub trim: Duration,
    pub threshold: Duration,
    pub outlines: Duration,
    pub simplify: Duration,
    pub candidates: Duration,
    pub corners: Duration,
    pub refine: Duration,
    pub sample: Duration,
}

impl StepTimings {
    pub fn total(&self) -> Duration {
        self.trim
            + self.threshold
            + self.outlines
            + self.simplify
            + self.candidates
            + self.corners
            + self.refine
            + self.sample
    }

    /// Everything before patch sampling.
    pub fn before_sampling(&self) -> Duration {
        self.total() - self.sample
    }
}

/// Refined corners in original-frame coordinates, before depth sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedTarget {
    pub corners: [RefinedCorner; 4],
    pub area_px: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub quad: CornerQuad,
    pub refinement: [RefineStatus; 4],
    pub timings: StepTimings,
    pub patch_pixels_visited: usize,
}

/// Smallest sub-rectangle holding every nonzero pixel and its offset.
pub fn trim(frame: &DepthFrame) -> Result<(DepthFrame, (usize, usize)), TrackError> {
    let (w, h) = (frame.width(), frame.height());
    let d = frame.depths();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        let row = &d[y * w..(y + 1) * w];
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row
            .iter()
            .rposition(|&v| v != 0)
            .expect("row has a nonzero");
        x0 = x0.min(first);
        x1 = x1.max(last);
        y0 = y0.min(y);
        y1 = y;
    }
    if x0 == usize::MAX {
        return Err(TrackError::EmptyFrame);
    }
    let (tw, th) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = Vec::with_capacity(tw * th);
    for y in y0..=y1 {
        out.extend_from_slice(&d[y * w + x0..y * w + x1 + 1]);
    }
    let trimmed = DepthFrame::new(tw, th, out).expect("trimmed size is nonzero");
    Ok((trimmed, (x0, y0)))
}

/// Inclusive range test on every pixel.
pub fn threshold_mask(frame: &DepthFrame, cfg: &TrackerConfig) -> BinaryMask {
    let bits = frame.depths().iter().map(|&d| cfg.in_range(d)).collect();
    BinaryMask::new(frame.width(), frame.height(), bits, (0, 0))
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot = t.elapsed();
    out
}

/// Runs every step up to and including corner refinement.
pub fn locate_target(
    frame: &DepthFrame,
    cfg: &TrackerConfig,
    timings: &mut StepTimings,
) -> Result<LocatedTarget, TrackError> {
    let (trimmed, offset) = timed(&mut timings.trim, || trim(frame))?;
    let mut mask = timed(&mut timings.threshold, || threshold_mask(&trimmed, cfg));
    mask.origin_offset = offset;
    let outlines = timed(&mut timings.outlines, || extract_outlines(&mask));
    let simplified: Vec<OutlinePolygon> = timed(&mut timings.simplify, || {
        outlines
            .iter()
            .filter(|o| o.area_px >= cfg.min_region_px)
            .map(|o| simplify_outline(o, cfg.simplify_epsilon))
            .collect()
    });
    let candidates = timed(&mut timings.candidates, || {
        identify_candidates(&simplified, &mask, cfg)
    });
    if candidates.is_empty() {
        return Err(TrackError::NoTarget {
            stage: Stage::Candidates,
        });
    }

    let start = Instant::now();
    let groups: Vec<GroupInfo> = candidates
        .iter()
        .filter_map(|c| {
            detect_corners(c, cfg).map(|group| GroupInfo {
                group,
                centroid: polygon_centroid(&c.polygon.vertices),
                bbox: c.bbox,
                area_px: c.polygon.area_px,
            })
        })
        .collect();
    if groups.is_empty() {
        timings.corners = start.elapsed();
        return Err(TrackError::NoTarget {
            stage: Stage::Corners,
        });
    }
    let chosen = &groups[select_target(&groups)?];
    timings.corners = start.elapsed();

    let shift = Vector2::new(offset.0 as f64, offset.1 as f64);
    let coarse = chosen.group.points.map(|p| p + shift);
    let corners = timed(&mut timings.refine, || refine_corners(frame, &coarse, cfg));
    Ok(LocatedTarget {
        corners,
        area_px: chosen.area_px,
        candidates: candidates.len(),
    })
}

/// Patch depth for each located corner, on the thresholded frame.
pub fn sample_target(
    frame: &DepthFrame,
    target: &LocatedTarget,
    patch_size: usize,
    cfg: &TrackerConfig,
) -> Result<(CornerQuad, usize), TrackError> {
    let mut depths = [0.0; 4];
    let mut visited = 0;
    for (d, c) in depths.iter_mut().zip(&target.corners) {
        let s = patch::sample_with(frame, c.point, patch_size, |v| {
            if cfg.in_range(v) {
                v
            } else {
                0
            }
        })?;
        *d = s.depth_mm;
        visited += s.visited;
    }
    let quad = CornerQuad {
        corners: target.corners.map(|c| c.point),
        depths,
    };
    Ok((quad, visited))
}

/// Full pipeline on one frame.
pub fn track(frame: &DepthFrame, cfg: &TrackerConfig) -> Result<TrackOutput, TrackError> {
    let mut timings = StepTimings::default();
    let target = locate_target(frame, cfg, &mut timings)?;
    let (quad, visited) = timed(&mut timings.sample, || {
        sample_target(frame, &target, cfg.patch_size, cfg)
    })?;
    Ok(TrackOutput {
        quad,
        refinement: target.corners.map(|c| c.status),
        timings,
        patch_pixels_visited: visited,
    })
}
