//! Closed-polygon Douglas-Peucker simplification.

use nalgebra::Point2;

use super::OutlinePolygon;

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Simplifies a closed outline.
///
/// The ring is split at its two farthest-apart vertices and each half is
/// simplified with Douglas-Peucker; a vertex is kept when it deviates from the
/// current chord by more than `epsilon`. The result keeps at least three
/// vertices and never has consecutive duplicates.
pub fn simplify_outline(outline: &OutlinePolygon, epsilon: f64) -> OutlinePolygon {
    let pts = dedup_cyclic(&outline.vertices);
    let n = pts.len();
    if n <= 3 {
        return OutlinePolygon {
            vertices: pts,
            area_px: outline.area_px,
        };
    }
    let (i, j) = farthest_pair(&pts);
    let mut keep = vec![false; n];
    keep[i] = true;
    keep[j] = true;
    douglas_peucker(&pts, i, j, epsilon, &mut keep);
    douglas_peucker(&pts, j, i + n, epsilon, &mut keep);

    let mut kept = keep.iter().filter(|&&k| k).count();
    while kept < 3 {
        let best = (0..n)
            .filter(|&k| !keep[k])
            .max_by(|&a, &b| {
                let da = segment_distance(pts[a], pts[i], pts[j]);
                let db = segment_distance(pts[b], pts[i], pts[j]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("more than three vertices");
        keep[best] = true;
        kept += 1;
    }
    let kept: Vec<Point2<f64>> = pts
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    let vertices = dedup_cyclic(&kept);
    OutlinePolygon {
        vertices,
        area_px: outline.area_px,
    }
}

fn dedup_cyclic(pts: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out: Vec<Point2<f64>> = Vec::with_capacity(pts.len());
    for &p in pts {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

// Indices span [first, last] with wrap-around modulo the ring length.
fn douglas_peucker(
    pts: &[Point2<f64>],
    first: usize,
    last: usize,
    epsilon: f64,
    keep: &mut [bool],
) {
    let n = pts.len();
    let mut stack = vec![(first, last)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (pa, pb) = (pts[a % n], pts[b % n]);
        let mut best = (a, -1.0);
        for k in a + 1..b {
            let d = segment_distance(pts[k % n], pa, pb);
            if d > best.1 {
                best = (k, d);
            }
        }
        if best.1 > epsilon {
            keep[best.0 % n] = true;
            stack.push((best.0, b));
            stack.push((a, best.0));
        }
    }
}

/// Indices `(i, j)`, `i < j`, of the two vertices farthest apart. Ties go to
/// the lexicographically smallest pair.
pub fn farthest_pair(pts: &[Point2<f64>]) -> (usize, usize) {
    let hull = convex_hull(pts);
    let mut best = (0usize, 1usize.min(pts.len() - 1), -1.0f64);
    for (x, &a) in hull.iter().enumerate() {
        for &b in &hull[x + 1..] {
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            let d = (pts[i] - pts[j]).norm_squared();
            if d > best.2 || (d == best.2 && (i, j) < (best.0, best.1)) {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

// Monotone chain; returns the lowest input index for each hull vertex.
fn convex_hull(pts: &[Point2<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| {
        pts[a]
            .x
            .total_cmp(&pts[b].x)
            .then(pts[a].y.total_cmp(&pts[b].y))
            .then(a.cmp(&b))
    });
    idx.dedup_by(|b, a| pts[*a] == pts[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| {
        let (oa, ob) = (pts[a] - pts[o], pts[b] - pts[o]);
        oa.x * ob.y - oa.y * ob.x
    };
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}
