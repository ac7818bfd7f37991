//! Outer border following over 8-connected foreground regions.

use nalgebra::Point2;

use super::{BinaryMask, OutlinePolygon};

// Clockwise on screen (y grows downward), starting east.
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];
const EAST: usize = 0;

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("neighbor offset")
}

/// Traces the outer border of every 8-connected foreground region.
///
/// Borders are produced by Suzuki-Abe border following (hole borders are
/// followed too, so labels stay consistent, but only outer borders are
/// returned). Vertices are the border pixels in tracing order; `area_px` is
/// the pixel count of the enclosed region. Regions whose border has fewer than
/// three pixels are skipped.
pub fn extract_outlines(mask: &BinaryMask) -> Vec<OutlinePolygon> {
    let (w, h) = (mask.width, mask.height);
    let pw = w + 2;
    let mut f = vec![0i32; pw * (h + 2)];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        let dst = &mut f[(y + 1) * pw + 1..(y + 1) * pw + 1 + w];
        for (d, &b) in dst.iter_mut().zip(row) {
            *d = b as i32;
        }
    }

    let offsets: [isize; 8] = DIRS.map(|(dx, dy)| dy as isize * pw as isize + dx as isize);
    let mut borders: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut nbd: i32 = 1;

    for y in 1..=h {
        for x in 1..=w {
            let p = y * pw + x;
            let fp = f[p];
            if fp == 0 {
                continue;
            }
            let from = if fp == 1 && f[p - 1] == 0 {
                Some((p - 1, true))
            } else if fp >= 1 && f[p + 1] == 0 {
                Some((p + 1, false))
            } else {
                None
            };
            let Some((from, outer)) = from else { continue };
            nbd += 1;
            let points = follow_border(&mut f, &offsets, pw, p, from, nbd);
            if outer {
                borders.push((p, points));
            }
        }
    }

    let areas = region_areas(mask);
    borders
        .into_iter()
        .filter(|(_, pts)| pts.len() >= 3)
        .map(|(start, pts)| {
            let (sx, sy) = (start % pw - 1, start / pw - 1);
            let area_px = areas.area_at(sx, sy);
            let vertices = pts
                .into_iter()
                .map(|i| Point2::new((i % pw - 1) as f64, (i / pw - 1) as f64))
                .collect();
            OutlinePolygon { vertices, area_px }
        })
        .collect()
}

fn follow_border(
    f: &mut [i32],
    offsets: &[isize; 8],
    pw: usize,
    start: usize,
    from: usize,
    nbd: i32,
) -> Vec<usize> {
    let rel = |a: usize, b: usize| {
        let (ax, ay) = ((a % pw) as i64, (a / pw) as i64);
        let (bx, by) = ((b % pw) as i64, (b / pw) as i64);
        dir_index(bx - ax, by - ay)
    };
    let step = |p: usize, d: usize| (p as isize + offsets[d]) as usize;

    // clockwise from `from` for the first foreground neighbor
    let d0 = rel(start, from);
    let first = (0..8)
        .map(|k| (d0 + k) % 8)
        .find(|&d| f[step(start, d)] != 0);
    let Some(d1) = first else {
        f[start] = -nbd;
        return vec![start];
    };
    let i1 = step(start, d1);
    let mut i2 = i1;
    let mut i3 = start;
    let mut points = Vec::new();
    loop {
        // counterclockwise around i3, starting just after i2
        let d2 = rel(i3, i2);
        let mut east_zero = false;
        let mut i4 = i2;
        for k in 1..=8 {
            let d = (d2 + 8 - k) % 8;
            let q = step(i3, d);
            if f[q] != 0 {
                i4 = q;
                break;
            }
            if d == EAST {
                east_zero = true;
            }
        }
        if east_zero {
            f[i3] = -nbd;
        } else if f[i3] == 1 {
            f[i3] = nbd;
        }
        points.push(i3);
        if i4 == start && i3 == i1 {
            break;
        }
        i2 = i3;
        i3 = i4;
    }
    points
}

/// 8-connected component sizes from a two-pass union-find labeling.
struct RegionAreas {
    width: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl RegionAreas {
    fn area_at(&self, x: usize, y: usize) -> usize {
        let l = self.labels[y * self.width + x];
        if l == 0 {
            0
        } else {
            self.sizes[l as usize]
        }
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let up = parent[parent[a as usize] as usize];
        parent[a as usize] = up;
        a = up;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

fn region_areas(mask: &BinaryMask) -> RegionAreas {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.bits[i] {
                continue;
            }
            let mut label = 0u32;
            let mut neighbor = |l: u32, parent: &mut Vec<u32>| {
                if l != 0 {
                    label = if label == 0 {
                        l
                    } else {
                        union(parent, label, l)
                    };
                }
            };
            if x > 0 {
                neighbor(labels[i - 1], &mut parent);
            }
            if y > 0 {
                let up = i - w;
                if x > 0 {
                    neighbor(labels[up - 1], &mut parent);
                }
                neighbor(labels[up], &mut parent);
                if x + 1 < w {
                    neighbor(labels[up + 1], &mut parent);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            labels[i] = label;
        }
    }
    let mut sizes = vec![0usize; parent.len()];
    for l in labels.iter_mut() {
        if *l != 0 {
            *l = find(&mut parent, *l);
            sizes[*l as usize] += 1;
        }
    }
    RegionAreas {
        width: w,
        labels,
        sizes,
    }
}
