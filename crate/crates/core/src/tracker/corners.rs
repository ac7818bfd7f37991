//! Candidate filtering, corner grouping and target selection.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, OutlinePolygon, TrackError, TrackerConfig};

/// Axis-aligned bounding rectangle in pixels, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of(points: &[Point2<f64>]) -> Self {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, p: Point2<f64>) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub polygon: OutlinePolygon,
    pub bbox: BBox,
    pub touches_bottom: bool,
}

/// Four corner vertices picked from a candidate polygon, in outline order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerGroup {
    pub indices: [usize; 4],
    pub points: [Point2<f64>; 4],
}

/// A corner group with the region data used to choose between groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupInfo {
    pub group: CornerGroup,
    pub centroid: Point2<f64>,
    pub bbox: BBox,
    pub area_px: usize,
}

/// Keeps large regions held up from a bottom corner of the mask.
pub fn identify_candidates(
    outlines: &[OutlinePolygon],
    mask: &BinaryMask,
    cfg: &TrackerConfig,
) -> Vec<Candidate> {
    let prox = cfg.bottom_proximity_px;
    let bottom = mask.height as f64 - 1.0;
    let right = mask.width as f64 - 1.0;
    outlines
        .iter()
        .filter(|o| o.area_px >= cfg.min_region_px)
        .filter_map(|o| {
            let bbox = BBox::of(&o.vertices);
            let touches_bottom = bottom - bbox.max_y <= prox;
            let near_corner = bbox.min_x <= prox || right - bbox.max_x <= prox;
            (touches_bottom && near_corner).then(|| Candidate {
                polygon: o.clone(),
                bbox,
                touches_bottom,
            })
        })
        .collect()
}

/// Signed shoelace area; positive when the ring turns clockwise on screen.
pub fn signed_area(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Interior angle in degrees at every vertex of a simple polygon.
pub fn internal_angles(pts: &[Point2<f64>]) -> Vec<f64> {
    let n = pts.len();
    let orientation = signed_area(pts).signum();
    (0..n)
        .map(|i| {
            let (p, v, q) = (pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
            let (e1, e2) = (p - v, q - v);
            let turn = (v - p).perp(&(q - v));
            let theta = e1.perp(&e2).abs().atan2(e1.dot(&e2)).to_degrees();
            if turn * orientation >= 0.0 {
                theta
            } else {
                360.0 - theta
            }
        })
        .collect()
}

/// Area centroid of a polygon, or the vertex mean when the area vanishes.
pub fn polygon_centroid(pts: &[Point2<f64>]) -> Point2<f64> {
    let n = pts.len();
    let a = signed_area(pts);
    if a.abs() < 1e-12 {
        let s = pts
            .iter()
            .fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
        return Point2::from(s / n as f64);
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (pts[i], pts[(i + 1) % n]);
        let c = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    Point2::new(cx / (6.0 * a), cy / (6.0 * a))
}

/// Finds four sequential corner-like vertices above the bottom band of the
/// candidate's bounding rectangle.
pub fn detect_corners(candidate: &Candidate, cfg: &TrackerConfig) -> Option<CornerGroup> {
    let pts = &candidate.polygon.vertices;
    if pts.len() < 4 {
        return None;
    }
    let bbox = candidate.bbox;
    let band = cfg.height_fraction * bbox.height();
    let angles = internal_angles(pts);
    let kept: Vec<usize> = (0..pts.len())
        .filter(|&i| bbox.max_y - pts[i].y >= band)
        .collect();
    let m = kept.len();
    if m < 4 {
        return None;
    }
    let flagged: Vec<bool> = kept
        .iter()
        .map(|&i| angles[i] >= cfg.angle_lo && angles[i] <= cfg.angle_hi)
        .collect();
    let group = |idx: [usize; 4]| CornerGroup {
        indices: idx,
        points: idx.map(|i| pts[i]),
    };

    for s in 0..m {
        if (0..4).all(|k| flagged[(s + k) % m]) {
            return Some(group([0, 1, 2, 3].map(|k| kept[(s + k) % m])));
        }
    }
    for s in (0..m).filter(|&s| flagged[s]) {
        let hits: Vec<usize> = (0..5.min(m))
            .map(|k| (s + k) % m)
            .filter(|&k| flagged[k])
            .take(4)
            .collect();
        if hits.len() == 4 {
            return Some(group([hits[0], hits[1], hits[2], hits[3]].map(|k| kept[k])));
        }
    }
    None
}

/// Picks the group whose centroid sits highest within its bounding rectangle;
/// ties go to the larger region.
pub fn select_target(groups: &[GroupInfo]) -> Result<usize, TrackError> {
    let ratio = |g: &GroupInfo| {
        let h = g.bbox.height();
        if h > 0.0 {
            (g.centroid.y - g.bbox.min_y) / h
        } else {
            0.0
        }
    };
    groups
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            ratio(a)
                .total_cmp(&ratio(b))
                .then(b.area_px.cmp(&a.area_px))
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .ok_or(TrackError::NoTarget {
            stage: super::Stage::SelectTarget,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2<f64>> {
        v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    fn candidate(v: &[(f64, f64)]) -> Candidate {
        let vertices = pts(v);
        Candidate {
            bbox: BBox::of(&vertices),
            polygon: OutlinePolygon {
                vertices,
                area_px: 10_000,
            },
            touches_bottom: true,
        }
    }

    fn block(
        mask_w: usize,
        mask_h: usize,
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
    ) -> (BinaryMask, OutlinePolygon) {
        let mut bits = vec![false; mask_w * mask_h];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                bits[y * mask_w + x] = true;
            }
        }
        let m = BinaryMask::new(mask_w, mask_h, bits, (0, 0));
        let o = OutlinePolygon {
            vertices: pts(&[
                (x0 as f64, y0 as f64),
                ((x0 + w - 1) as f64, y0 as f64),
                ((x0 + w - 1) as f64, (y0 + h - 1) as f64),
                (x0 as f64, (y0 + h - 1) as f64),
            ]),
            area_px: w * h,
        };
        (m, o)
    }

    #[test]
    fn small_regions_are_rejected() {
        let (m, o) = block(200, 200, 0, 140, 60, 50);
        assert_eq!(o.area_px, 3000);
        assert!(identify_candidates(&[o], &m, &TrackerConfig::default()).is_empty());
    }

    #[test]
    fn region_near_bottom_left_corner_is_accepted() {
        let (m, o) = block(200, 200, 5, 115, 80, 80);
        let c = identify_candidates(&[o], &m, &TrackerConfig::default());
        assert_eq!(c.len(), 1);
        assert!(c[0].touches_bottom);
        assert!(c[0].polygon.vertices.iter().all(|&p| c[0].bbox.contains(p)));
    }

    #[test]
    fn floating_region_is_rejected() {
        let (m, o) = block(200, 200, 60, 60, 80, 80);
        assert!(identify_candidates(&[o], &m, &TrackerConfig::default()).is_empty());
    }

    #[test]
    fn right_angles_in_both_orientations() {
        let sq = pts(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        assert!(internal_angles(&sq).iter().all(|a| (a - 90.0).abs() < 1e-9));
        let rev: Vec<_> = sq.iter().rev().copied().collect();
        assert!(internal_angles(&rev)
            .iter()
            .all(|a| (a - 90.0).abs() < 1e-9));
        let l = pts(&[
            (0.0, 0.0),
            (10.0, 0.0),
            (10.0, 5.0),
            (5.0, 5.0),
            (5.0, 10.0),
            (0.0, 10.0),
        ]);
        let a = internal_angles(&l);
        assert!((a[3] - 270.0).abs() < 1e-9);
        assert!((a.iter().sum::<f64>() - 720.0).abs() < 1e-9);
    }

    #[test]
    fn square_with_arm_stub_yields_the_square() {
        // plate 0..100 x 0..80, arm leaving the bottom edge down to y = 120
        let c = candidate(&[
            (0.0, 0.0),
            (100.0, 0.0),
            (100.0, 80.0),
            (60.0, 80.0),
            (60.0, 120.0),
            (40.0, 120.0),
            (40.0, 80.0),
            (0.0, 80.0),
        ]);
        let g = detect_corners(&c, &TrackerConfig::default()).unwrap();
        assert_eq!(g.indices, [7, 0, 1, 2]);
    }

    #[test]
    fn fallback_skips_one_unflagged_vertex() {
        // shallow peak on the top edge interrupts the flagged run
        let c = candidate(&[
            (0.0, 0.0),
            (50.0, -3.0),
            (100.0, 0.0),
            (100.0, 80.0),
            (60.0, 80.0),
            (60.0, 120.0),
            (40.0, 120.0),
            (40.0, 80.0),
            (0.0, 80.0),
        ]);
        let angles = internal_angles(&c.polygon.vertices);
        assert!(angles[1] > 150.0);
        let g = detect_corners(&c, &TrackerConfig::default()).unwrap();
        assert_eq!(g.indices, [8, 0, 2, 3]);
    }

    #[test]
    fn rounded_blob_has_no_corners() {
        let n = 36;
        let v: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = k as f64 / n as f64 * std::f64::consts::TAU;
                (100.0 * t.cos(), 100.0 * t.sin())
            })
            .collect();
        let c = candidate(&v);
        assert!(internal_angles(&c.polygon.vertices)
            .iter()
            .all(|a| (a - 170.0).abs() < 1e-6));
        assert!(detect_corners(&c, &TrackerConfig::default()).is_none());
    }

    #[test]
    fn low_vertices_are_excluded() {
        // right angle at 10% height from the bottom must not count
        let c = candidate(&[
            (0.0, 0.0),
            (100.0, 0.0),
            (100.0, 90.0),
            (50.0, 90.0),
            (50.0, 100.0),
            (0.0, 100.0),
        ]);
        assert!(detect_corners(&c, &TrackerConfig::default()).is_none());
    }

    fn info(ratio: f64, area: usize) -> GroupInfo {
        let p = Point2::new(0.0, 0.0);
        GroupInfo {
            group: CornerGroup {
                indices: [0, 1, 2, 3],
                points: [p; 4],
            },
            centroid: Point2::new(0.0, ratio * 100.0),
            bbox: BBox {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 10.0,
                max_y: 100.0,
            },
            area_px: area,
        }
    }

    #[test]
    fn selection_prefers_high_centroid_then_area() {
        assert_eq!(select_target(&[info(0.4, 1)]).unwrap(), 0);
        assert_eq!(
            select_target(&[info(0.6, 9000), info(0.3, 4000)]).unwrap(),
            1
        );
        assert_eq!(
            select_target(&[info(0.5, 4000), info(0.5, 5000)]).unwrap(),
            1
        );
        assert!(matches!(
            select_target(&[]),
            Err(TrackError::NoTarget { .. })
        ));
    }

    #[test]
    fn centroid_of_rectangle() {
        let c = polygon_centroid(&pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (0.0, 2.0)]));
        assert!((c - Point2::new(2.0, 1.0)).norm() < 1e-12);
    }
}
