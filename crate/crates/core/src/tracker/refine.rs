//! Förstner sub-pixel corner refinement.

use nalgebra::{Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::depthio::DepthFrame;

use super::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineStatus {
    Refined,
    /// Window plus gradient stencil leaves the frame; corner kept as is.
    Margin,
    /// Flat neighborhood; normal matrix not invertible.
    Singular,
    /// Estimate left the window around the input.
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedCorner {
    pub point: Point2<f64>,
    pub status: RefineStatus,
}

/// Refines one corner against the gradients of `frame` with depths outside
/// the configured range treated as zero.
pub fn refine_corner(
    frame: &DepthFrame,
    corner: Point2<f64>,
    cfg: &TrackerConfig,
) -> RefinedCorner {
    let (lo, hi) = (cfg.threshold_lo, cfg.threshold_hi);
    let value = |x: i64, y: i64| {
        let d = frame.get(x as usize, y as usize);
        if d >= lo && d <= hi {
            d as f64
        } else {
            0.0
        }
    };
    let half = (cfg.refine_window / 2) as i64;
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let unrefined = |status| RefinedCorner {
        point: corner,
        status,
    };

    let mut c = corner;
    for _ in 0..cfg.refine_max_iters {
        let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
        if cx - half - 1 < 0 || cy - half - 1 < 0 || cx + half + 1 >= w || cy + half + 1 >= h {
            return unrefined(RefineStatus::Margin);
        }
        let mut n = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for y in cy - half..=cy + half {
            for x in cx - half..=cx + half {
                let g = Vector2::new(
                    (value(x + 1, y) - value(x - 1, y)) / 2.0,
                    (value(x, y + 1) - value(x, y - 1)) / 2.0,
                );
                let ggt = g * g.transpose();
                n += ggt;
                b += ggt * Vector2::new(x as f64, y as f64);
            }
        }
        let trace = n.trace();
        if trace <= 0.0 || n.determinant() <= 1e-9 * trace * trace {
            return unrefined(RefineStatus::Singular);
        }
        let Some(inv) = n.try_inverse() else {
            return unrefined(RefineStatus::Singular);
        };
        let next = Point2::from(inv * b);
        let shift = (next - c).norm();
        c = next;
        if (c - corner).norm() > cfg.refine_window as f64 / 2.0 {
            return unrefined(RefineStatus::Diverged);
        }
        if shift < cfg.refine_shift_tol {
            break;
        }
    }
    RefinedCorner {
        point: c,
        status: RefineStatus::Refined,
    }
}

pub fn refine_corners(
    frame: &DepthFrame,
    corners: &[Point2<f64>; 4],
    cfg: &TrackerConfig,
) -> [RefinedCorner; 4] {
    corners.map(|c| refine_corner(frame, c, cfg))
}
