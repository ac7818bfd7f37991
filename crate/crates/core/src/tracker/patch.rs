//! Patch depth sampling around a corner.

use nalgebra::Point2;

use crate::depthio::DepthFrame;

use super::TrackError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSample {
    pub depth_mm: f64,
    /// Window positions examined, in or out of the frame.
    pub visited: usize,
}

/// Mean of the nonzero depths in the `patch_size`×`patch_size` window centered
/// at the rounded corner. The window is clipped at the frame edges.
pub fn sample_patch_depth(
    frame: &DepthFrame,
    corner: Point2<f64>,
    patch_size: usize,
) -> Result<PatchSample, TrackError> {
    sample_with(frame, corner, patch_size, |d| d)
}

pub(crate) fn sample_with(
    frame: &DepthFrame,
    corner: Point2<f64>,
    patch_size: usize,
    filter: impl Fn(u16) -> u16,
) -> Result<PatchSample, TrackError> {
    let half = (patch_size / 2) as i64;
    let (cx, cy) = (corner.x.round() as i64, corner.y.round() as i64);
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let (mut sum, mut count, mut visited) = (0u64, 0u64, 0usize);
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            visited += 1;
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let d = filter(frame.get(x as usize, y as usize));
            if d != 0 {
                sum += d as u64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(TrackError::SamplingFailure {
            x: corner.x,
            y: corner.y,
        });
    }
    Ok(PatchSample {
        depth_mm: sum as f64 / count as f64,
        visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_patch() {
        let f = DepthFrame::new(9, 9, vec![500; 81]).unwrap();
        let s = sample_patch_depth(&f, Point2::new(4.0, 4.0), 5).unwrap();
        assert_eq!(s.depth_mm, 500.0);
        assert_eq!(s.visited, 25);
    }

    #[test]
    fn zeros_are_skipped() {
        let f = DepthFrame::new(3, 3, vec![500, 0, 500, 0, 500, 0, 500, 0, 500]).unwrap();
        assert_eq!(
            sample_patch_depth(&f, Point2::new(1.2, 0.9), 3)
                .unwrap()
                .depth_mm,
            500.0
        );
        let f = DepthFrame::new(3, 3, vec![400, 0, 0, 0, 600, 0, 0, 0, 0]).unwrap();
        assert_eq!(
            sample_patch_depth(&f, Point2::new(1.0, 1.0), 3)
                .unwrap()
                .depth_mm,
            500.0
        );
    }

    #[test]
    fn all_zero_patch_fails() {
        let f = DepthFrame::zeros(9, 9).unwrap();
        assert!(matches!(
            sample_patch_depth(&f, Point2::new(4.0, 4.0), 5),
            Err(TrackError::SamplingFailure { .. })
        ));
    }

    #[test]
    fn patch_is_clipped_at_edges() {
        let f = DepthFrame::new(4, 4, (1..=16).collect()).unwrap();
        // window rows -1..=1, cols -1..=1 keeps values 1, 2, 5, 6
        let s = sample_patch_depth(&f, Point2::new(0.0, 0.0), 3).unwrap();
        assert_eq!(s.depth_mm, 3.5);
        assert_eq!(s.visited, 9);
    }

    fn naive(frame: &DepthFrame, c: Point2<f64>, size: usize) -> Option<f64> {
        let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
        let r = size as i64 / 2;
        let mut vals = Vec::new();
        for y in 0..frame.height() as i64 {
            for x in 0..frame.width() as i64 {
                if (x - cx).abs() <= r
                    && (y - cy).abs() <= r
                    && frame.get(x as usize, y as usize) != 0
                {
                    vals.push(frame.get(x as usize, y as usize) as f64);
                }
            }
        }
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    proptest! {
        #[test]
        fn matches_naive_mean(
            w in 1usize..16, h in 1usize..16,
            cells in prop::collection::vec(prop_oneof![Just(0u16), 1u16..2000], 256),
            cx in -3.0f64..18.0, cy in -3.0f64..18.0,
            k in 0usize..6,
        ) {
            let f = DepthFrame::new(w, h, cells[..w * h].to_vec()).unwrap();
            let size = 2 * k + 1;
            let c = Point2::new(cx, cy);
            match (sample_patch_depth(&f, c, size), naive(&f, c, size)) {
                (Ok(s), Some(m)) => {
                    prop_assert!((s.depth_mm - m).abs() < 1e-9);
                    prop_assert_eq!(s.visited, size * size);
                }
                (Err(TrackError::SamplingFailure { .. }), None) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }
}
