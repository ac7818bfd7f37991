//! Evaluation quantities: corner error, Dice overlap, random error, latency
//! aggregates and the patch-size sweep.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;
use std::time::{Duration, Instant};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthio::{CameraRig, DepthFrame, PixelMask};
use crate::geometry::{locate_corners, WorldPoint};
use crate::synthcam::SceneTruth;
use crate::tracker::{locate_target, sample_target, StepTimings, TrackerConfig};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples to aggregate")]
    Empty,
    #[error("series needs at least two frames, got {0}")]
    ShortSeries(usize),
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    SizeMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("region of interest is empty")]
    EmptyMask,
    #[error("patch sizes must be odd and positive, got {0}")]
    BadPatchSize(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Per-corner distances after the best of the eight quad symmetries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerError {
    pub distances: [f64; 4],
    pub mean: f64,
}

fn aligned_error<T>(tracked: &[T; 4], truth: &[T; 4], dist: impl Fn(&T, &T) -> f64) -> CornerError {
    let mut best: Option<CornerError> = None;
    for reflect in [false, true] {
        for shift in 0..4 {
            let distances: [f64; 4] = std::array::from_fn(|k| {
                let j = if reflect {
                    (shift + 4 - k) % 4
                } else {
                    (shift + k) % 4
                };
                dist(&tracked[j], &truth[k])
            });
            let mean = distances.iter().sum::<f64>() / 4.0;
            if best.is_none_or(|b| mean < b.mean) {
                best = Some(CornerError { distances, mean });
            }
        }
    }
    best.expect("eight alignments")
}

pub fn corner_error(tracked: &[WorldPoint; 4], truth: &[WorldPoint; 4]) -> CornerError {
    aligned_error(tracked, truth, |a, b| a.distance(b))
}

pub fn pixel_corner_error(tracked: &[Point2<f64>; 4], truth: &[Point2<f64>; 4]) -> CornerError {
    aligned_error(tracked, truth, |a, b| (a - b).norm())
}

/// `2|A∩B| / (|A|+|B|)`, with two empty sets scoring 1.
pub fn dice<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let common = small.iter().filter(|x| large.contains(x)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Dice over two equally sized boolean masks.
pub fn dice_masks(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask sizes differ");
    let (mut na, mut nb, mut common) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        common += (x && y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * common as f64 / (na + nb) as f64
    }
}

/// Pixels whose centers fall inside the quad (even-odd rule).
pub fn quad_mask(corners: &[Point2<f64>; 4], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; width * height];
    let min_y = corners
        .iter()
        .map(|p| p.y)
        .fold(f64::INFINITY, f64::min)
        .floor()
        .max(0.0) as usize;
    let max_y = corners
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil();
    if max_y < 0.0 {
        return out;
    }
    let max_y = (max_y as usize).min(height.saturating_sub(1));
    for y in min_y..=max_y {
        let py = y as f64;
        let mut xs: Vec<f64> = Vec::with_capacity(4);
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            if (a.y <= py) != (b.y <= py) {
                xs.push(a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1];
            let mut x = lo;
            while x < hi && (x as usize) < width {
                out[y * width + x as usize] = true;
                x += 1.0;
            }
        }
    }
    out
}

/// Truth target pixels that carry a depth return.
pub fn visible_target(frame: &DepthFrame, truth_mask: &PixelMask) -> Vec<bool> {
    frame
        .depths()
        .iter()
        .zip(&truth_mask.bits)
        .map(|(&d, &m)| m && d != 0)
        .collect()
}

/// Tracker segmentation: returning pixels inside the tracked quad.
pub fn tracked_segmentation(frame: &DepthFrame, corners: &[Point2<f64>; 4]) -> Vec<bool> {
    let mut m = quad_mask(corners, frame.width(), frame.height());
    for (b, &d) in m.iter_mut().zip(frame.depths()) {
        *b &= d != 0;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

/// Mean, population SD, min and max, computed in two passes.
pub fn summarize(values: &[f64]) -> Result<MetricsRecord> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MetricsRecord {
        mean,
        sd: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        values: values.to_vec(),
    })
}

pub fn latency_stats(samples_ms: &[f64]) -> Result<MetricsRecord> {
    summarize(samples_ms)
}

/// Static frames plus the pixels to evaluate.
#[derive(Debug, Clone)]
pub struct DepthSeries {
    frames: Vec<DepthFrame>,
    mask: PixelMask,
}

impl DepthSeries {
    pub fn new(frames: Vec<DepthFrame>, mask: PixelMask) -> Result<Self> {
        if frames.len() < 2 {
            return Err(MetricsError::ShortSeries(frames.len()));
        }
        let expected = (mask.width, mask.height);
        for (index, f) in frames.iter().enumerate() {
            let got = (f.width(), f.height());
            if got != expected {
                return Err(MetricsError::SizeMismatch {
                    index,
                    got,
                    expected,
                });
            }
        }
        Ok(Self { frames, mask })
    }

    pub fn frames(&self) -> &[DepthFrame] {
        &self.frames
    }

    pub fn mask(&self) -> &PixelMask {
        &self.mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomErrorReport {
    /// Per-pixel population SD; `None` outside the mask.
    pub map: Vec<Option<f64>>,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-pixel population standard deviation of depth across the series.
pub fn random_error(series: &DepthSeries) -> Result<RandomErrorReport> {
    let n = series.frames.len() as f64;
    let bits = &series.mask.bits;
    if !bits.iter().any(|&b| b) {
        return Err(MetricsError::EmptyMask);
    }
    let mut sum = vec![0.0f64; bits.len()];
    for f in &series.frames {
        for ((s, &d), &m) in sum.iter_mut().zip(f.depths()).zip(bits) {
            if m {
                *s += d as f64;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut ss = vec![0.0f64; bits.len()];
    for f in &series.frames {
        for (((s, &d), &mu), &m) in ss.iter_mut().zip(f.depths()).zip(&mean).zip(bits) {
            if m {
                let e = d as f64 - mu;
                *s += e * e;
            }
        }
    }
    let map: Vec<Option<f64>> = ss
        .iter()
        .zip(bits)
        .map(|(&s, &m)| m.then(|| (s / n).sqrt()))
        .collect();
    let values: Vec<f64> = map.iter().flatten().copied().collect();
    let rec = summarize(&values)?;
    Ok(RandomErrorReport {
        map,
        mean: rec.mean,
        sd: rec.sd,
        min: rec.min,
        max: rec.max,
    })
}

/// A rendered frame with its truth and the rig it was seen from.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub frame: DepthFrame,
    pub truth: SceneTruth,
    pub rig: CameraRig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFrameRow {
    pub patch_size: usize,
    pub frame_id: usize,
    pub latency_ms: Option<f64>,
    pub mean_corner_err_mm: Option<f64>,
    pub dice: Option<f64>,
    pub error_code: String,
    pub pixels_visited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub patch_size: usize,
    pub latency: Option<MetricsRecord>,
    pub accuracy: Option<MetricsRecord>,
    pub dice: Option<MetricsRecord>,
    /// Patch positions examined per tracked frame.
    pub work_per_frame: usize,
    pub errors: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub summaries: Vec<SweepSummary>,
    pub rows: Vec<SweepFrameRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTiming {
    /// Repetitions of the size-dependent stage per frame; its mean is used.
    pub repeats: usize,
}

impl Default for SweepTiming {
    fn default() -> Self {
        Self { repeats: 200 }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Tracks every frame once per patch size.
///
/// Latency per frame and size is the median over sizes of the stages that do
/// not depend on the patch (trim through refinement) plus the mean over
/// `timing.repeats` runs of patch sampling and lifting to world space.
pub fn patch_sweep(
    frames: &[LabeledFrame],
    sizes: &[usize],
    cfg: &TrackerConfig,
    timing: SweepTiming,
) -> Result<SweepResult> {
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s.is_multiple_of(2)) {
        return Err(MetricsError::BadPatchSize(bad));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let repeats = timing.repeats.max(1);

    let mut rows: Vec<SweepFrameRow> = Vec::with_capacity(frames.len() * sizes.len());
    for (frame_id, lf) in frames.iter().enumerate() {
        let mut shared = Vec::with_capacity(sizes.len());
        let mut located = None;
        for _ in &sizes {
            let mut t = StepTimings::default();
            let start = Instant::now();
            let r = locate_target(&lf.frame, cfg, &mut t);
            shared.push(start.elapsed());
            located = Some(r);
        }
        shared.sort_unstable();
        let shared_ms = ms(shared[shared.len() / 2]);
        let located = located.expect("at least one size");
        let target_px = visible_target(&lf.frame, &lf.truth.po_mask);

        for &size in &sizes {
            let mut row = SweepFrameRow {
                patch_size: size,
                frame_id,
                latency_ms: None,
                mean_corner_err_mm: None,
                dice: None,
                error_code: "ok".into(),
                pixels_visited: 0,
            };
            let target = match &located {
                Ok(t) => t,
                Err(e) => {
                    row.error_code = e.code().into();
                    rows.push(row);
                    continue;
                }
            };
            let lift = || -> std::result::Result<_, &'static str> {
                let (quad, visited) =
                    sample_target(&lf.frame, target, size, cfg).map_err(|e| e.code())?;
                let world = locate_corners(&lf.rig, &quad.corners, &quad.depths)
                    .map_err(|_| "degenerate-geometry")?;
                Ok((quad, visited, world))
            };
            let start = Instant::now();
            let mut outcome = lift();
            for _ in 1..repeats {
                outcome = std::hint::black_box(lift());
            }
            let variable_ms = ms(start.elapsed()) / repeats as f64;
            match outcome {
                Ok((quad, visited, world)) => {
                    row.latency_ms = Some(shared_ms + variable_ms);
                    row.mean_corner_err_mm =
                        Some(corner_error(&world, &lf.truth.world_corners).mean);
                    row.dice = Some(dice_masks(
                        &tracked_segmentation(&lf.frame, &quad.corners),
                        &target_px,
                    ));
                    row.pixels_visited = visited;
                }
                Err(code) => row.error_code = code.into(),
            }
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (r.patch_size, r.frame_id));

    let summaries = sizes
        .iter()
        .map(|&size| {
            let mine: Vec<&SweepFrameRow> = rows.iter().filter(|r| r.patch_size == size).collect();
            let collect = |f: fn(&SweepFrameRow) -> Option<f64>| {
                let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
                summarize(&v).ok()
            };
            let mut errors = BTreeMap::new();
            for r in mine.iter().filter(|r| r.error_code != "ok") {
                *errors.entry(r.error_code.clone()).or_insert(0) += 1;
            }
            SweepSummary {
                patch_size: size,
                latency: collect(|r| r.latency_ms),
                accuracy: collect(|r| r.mean_corner_err_mm),
                dice: collect(|r| r.dice),
                work_per_frame: 4 * size * size,
                errors,
            }
        })
        .collect();
    Ok(SweepResult { summaries, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wp(x: f64, y: f64, z: f64) -> WorldPoint {
        WorldPoint::new(x, y, z)
    }

    fn square() -> [WorldPoint; 4] {
        [
            wp(0.0, 0.0, 500.0),
            wp(100.0, 0.0, 500.0),
            wp(100.0, 80.0, 500.0),
            wp(0.0, 80.0, 500.0),
        ]
    }

    #[test]
    fn corner_error_cases() {
        let t = square();
        assert_eq!(corner_error(&t, &t).mean, 0.0);
        let shifted = t.map(|p| wp(p.0.x + 3.0, p.0.y, p.0.z));
        let e = corner_error(&shifted, &t);
        assert!(e.distances.iter().all(|d| (d - 3.0).abs() < 1e-12));
        assert!((e.mean - 3.0).abs() < 1e-12);
        let rotated = [t[2], t[3], t[0], t[1]];
        assert_eq!(corner_error(&rotated, &t).mean, 0.0);
        let reflected = [t[3], t[2], t[1], t[0]];
        assert_eq!(corner_error(&reflected, &t).mean, 0.0);
    }

    #[test]
    fn dice_cases() {
        let a: HashSet<u32> = (0..100).collect();
        assert_eq!(dice(&a, &a), 1.0);
        let b: HashSet<u32> = (100..200).collect();
        assert_eq!(dice(&a, &b), 0.0);
        let c: HashSet<u32> = (50..150).collect();
        assert_eq!(dice(&a, &c), 0.5);
        let e: HashSet<u32> = HashSet::new();
        assert_eq!(dice(&e, &e), 1.0);
        assert_eq!(dice(&e, &a), 0.0);
        assert_eq!(dice_masks(&[true, true, false], &[true, false, true]), 0.5);
    }

    #[test]
    fn random_error_cases() {
        let mask = PixelMask::new(1, 1, vec![true]).unwrap();
        let f = |d| DepthFrame::new(1, 1, vec![d]).unwrap();
        let r = random_error(&DepthSeries::new(vec![f(1), f(3)], mask.clone()).unwrap()).unwrap();
        assert_eq!(r.mean, 1.0);
        let r = random_error(&DepthSeries::new(vec![f(7); 5], mask.clone()).unwrap()).unwrap();
        assert_eq!((r.mean, r.max), (0.0, 0.0));
        assert_eq!(
            DepthSeries::new(vec![f(1)], mask).unwrap_err(),
            MetricsError::ShortSeries(1)
        );
        let empty = PixelMask::new(1, 1, vec![false]).unwrap();
        let s = DepthSeries::new(vec![f(1), f(2)], empty).unwrap();
        assert_eq!(random_error(&s).unwrap_err(), MetricsError::EmptyMask);
    }

    #[test]
    fn latency_cases() {
        let r = latency_stats(&[8.0, 8.0, 8.0]).unwrap();
        assert_eq!((r.mean, r.sd), (8.0, 0.0));
        let r = latency_stats(&[6.0, 10.0]).unwrap();
        assert_eq!((r.mean, r.sd, r.min, r.max), (8.0, 2.0, 6.0, 10.0));
        assert_eq!(latency_stats(&[]).unwrap_err(), MetricsError::Empty);
    }

    #[test]
    fn quad_mask_of_axis_aligned_box() {
        let c = [
            Point2::new(1.5, 1.5),
            Point2::new(4.5, 1.5),
            Point2::new(4.5, 3.5),
            Point2::new(1.5, 3.5),
        ];
        let m = quad_mask(&c, 6, 5);
        let inside: Vec<(usize, usize)> =
            (0..30).filter(|&i| m[i]).map(|i| (i % 6, i / 6)).collect();
        assert_eq!(inside, vec![(2, 2), (3, 2), (4, 2), (2, 3), (3, 3), (4, 3)]);
    }

    fn welford(values: &[f64]) -> (f64, f64) {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &v in values {
            n += 1.0;
            let d = v - mean;
            mean += d / n;
            m2 += d * (v - mean);
        }
        (mean, (m2 / n).sqrt())
    }

    proptest! {
        #[test]
        fn summary_matches_single_pass_oracle(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let r = summarize(&values).unwrap();
            let (mean, sd) = welford(&values);
            prop_assert!((r.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            prop_assert!((r.sd - sd).abs() <= 1e-9 * sd.max(1.0));
            prop_assert!(r.min <= r.mean && r.mean <= r.max && r.sd >= 0.0);
        }

        #[test]
        fn dice_is_symmetric_and_bounded(
            a in prop::collection::hash_set(0u16..64, 0..40),
            b in prop::collection::hash_set(0u16..64, 0..40),
        ) {
            let d = dice(&a, &b);
            prop_assert_eq!(d, dice(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            if !a.is_empty() {
                prop_assert_eq!(dice(&a, &a), 1.0);
            }
        }

        #[test]
        fn corner_error_is_symmetric(raw in prop::collection::vec(-500.0f64..500.0, 24)) {
            let a: [WorldPoint; 4] = std::array::from_fn(|i| wp(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]));
            let b: [WorldPoint; 4] = std::array::from_fn(|i| wp(raw[12 + 3 * i], raw[13 + 3 * i], raw[14 + 3 * i]));
            prop_assert!((corner_error(&a, &b).mean - corner_error(&b, &a).mean).abs() < 1e-9);
            prop_assert_eq!(corner_error(&a, &a).mean, 0.0);
        }

        #[test]
        fn random_error_shift_and_scale(
            base in prop::collection::vec(200u16..400, 8),
            shift in 0u16..300,
        ) {
            let mask = PixelMask::new(2, 2, vec![true; 4]).unwrap();
            let frames: Vec<DepthFrame> = base.chunks(4).map(|c| DepthFrame::new(2, 2, c.to_vec()).unwrap()).collect();
            let shifted: Vec<DepthFrame> = base.chunks(4)
                .map(|c| DepthFrame::new(2, 2, c.iter().map(|v| v + shift).collect()).unwrap()).collect();
            let scaled: Vec<DepthFrame> = base.chunks(4)
                .map(|c| DepthFrame::new(2, 2, c.iter().map(|v| v * 3).collect()).unwrap()).collect();
            let r0 = random_error(&DepthSeries::new(frames, mask.clone()).unwrap()).unwrap();
            let r1 = random_error(&DepthSeries::new(shifted, mask.clone()).unwrap()).unwrap();
            let r2 = random_error(&DepthSeries::new(scaled, mask).unwrap()).unwrap();
            prop_assert!((r0.mean - r1.mean).abs() < 1e-9);
            prop_assert!((3.0 * r0.mean - r2.mean).abs() < 1e-9);
        }
    }
}
