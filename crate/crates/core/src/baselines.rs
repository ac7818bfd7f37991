//! Point-cloud baselines: point-to-point ICP against a plate model and RANSAC
//! plane segmentation.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthio::{pixel_to_image_plane, CameraRig, DepthFrame, DepthIoError};
use crate::geometry::{self, to_world, unproject, CameraPoint, WorldPoint};
use crate::metrics::{
    corner_error, dice_masks, tracked_segmentation, visible_target, LabeledFrame,
};
use crate::tracker::{track, TrackerConfig};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("ICP correspondences are degenerate (rank {0})")]
    IcpDegenerate(usize),
    #[error("cloud has {0} points, need at least 3")]
    TooFewPoints(usize),
    #[error("no non-collinear sample in {0} rounds")]
    NoPlane(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Camera(#[from] DepthIoError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

impl BaselineError {
    pub fn code(&self) -> &'static str {
        match self {
            BaselineError::IcpDegenerate(_) | BaselineError::TooFewPoints(_) => "icp-degenerate",
            BaselineError::NoPlane(_) => "ransac-no-plane",
            BaselineError::InvalidParameter(_) => "invalid-parameter",
            BaselineError::Camera(_) | BaselineError::Geometry(_) => "degenerate-geometry",
        }
    }
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Points in millimeters. `source_pixels` holds the flat pixel index of each
/// point when the cloud came from a depth frame, and is empty otherwise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub source_pixels: Vec<usize>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            source_pixels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One camera-frame point per nonzero pixel.
pub fn depth_to_point_cloud(frame: &DepthFrame, rig: &CameraRig) -> Result<PointCloud> {
    let w = frame.width();
    let mut cloud = PointCloud::default();
    for (i, &d) in frame.depths().iter().enumerate() {
        if d == 0 {
            continue;
        }
        let ip = pixel_to_image_plane(rig, (i % w) as f64, (i / w) as f64)?;
        cloud.points.push(unproject(ip, d as f64)?.0);
        cloud.source_pixels.push(i);
    }
    Ok(cloud)
}

/// Uniform voxel grid answering exact nearest-neighbor queries.
pub struct GridIndex<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    origin: Vector3<f64>,
    lo: [i64; 3],
    hi: [i64; 3],
    cells: HashMap<[i64; 3], (u32, u32)>,
    order: Vec<u32>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Self {
        assert!(!points.is_empty(), "empty cloud");
        let mut min = points[0].coords;
        let mut max = min;
        for p in points {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        }
        let mut ext: Vec<f64> = (max - min).iter().copied().collect();
        ext.sort_by(|a, b| b.total_cmp(a));
        // sized for surface-like clouds: about two points per occupied cell
        let area = (ext[0] * ext[1]).max(ext[0] * ext[0] * 1e-6);
        let mut cell = (2.0 * area / points.len() as f64).sqrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = 1.0;
        }
        let key = |p: &Point3<f64>| {
            let r = (p.coords - min) / cell;
            [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
        };
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        order.sort_by_key(|&i| (key(&points[i as usize]), i));
        let mut cells = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut start = 0usize;
        while start < order.len() {
            let k = key(&points[order[start] as usize]);
            let mut end = start + 1;
            while end < order.len() && key(&points[order[end] as usize]) == k {
                end += 1;
            }
            cells.insert(k, (start as u32, end as u32));
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            start = end;
        }
        Self {
            points,
            cell,
            origin: min,
            lo,
            hi,
            cells,
            order,
        }
    }

    /// Index and squared distance of the nearest point; ties go to the lowest
    /// index.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let r = (q.coords - self.origin) / self.cell;
        let c = [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64];
        let gap = (0..3)
            .map(|a| (self.lo[a] - c[a]).max(c[a] - self.hi[a]).max(0))
            .max()
            .unwrap();
        let reach = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        for k in gap..=reach {
            self.visit_shell(c, k, |i| {
                let d = (self.points[i] - q).norm_squared();
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            });
            // any point in shell k + 1 is at least k cells away
            let bound = k as f64 * self.cell;
            if best.0 != usize::MAX && best.1 < bound * bound {
                break;
            }
        }
        best
    }

    fn visit_shell(&self, c: [i64; 3], k: i64, mut f: impl FnMut(usize)) {
        let clip = |a: usize, v: i64| v >= self.lo[a] && v <= self.hi[a];
        for dx in -k..=k {
            if !clip(0, c[0] + dx) {
                continue;
            }
            for dy in -k..=k {
                if !clip(1, c[1] + dy) {
                    continue;
                }
                let edge = dx.abs() == k || dy.abs() == k;
                let zs: Box<dyn Iterator<Item = i64>> = if edge {
                    Box::new(-k..=k)
                } else if k == 0 {
                    Box::new(std::iter::once(0))
                } else {
                    Box::new([-k, k].into_iter())
                };
                for dz in zs {
                    if !clip(2, c[2] + dz) {
                        continue;
                    }
                    if let Some(&(s, e)) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in &self.order[s as usize..e as usize] {
                            f(i as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`.
pub fn procrustes(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<Isometry3<f64>> {
    let n = src.len() as f64;
    let cs = src.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let cd = dst.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-9 * smax.max(1e-300))
        .count();
    if rank < 2 || smax == 0.0 {
        return Err(BaselineError::IcpDegenerate(rank));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Ok(Isometry3::from_parts(Translation3::from(t), rot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: Isometry3<f64>,
    pub rms: f64,
    /// RMS of each iterate against its own nearest neighbors.
    pub history: Vec<f64>,
}

/// Point-to-point ICP moving `model` onto `target`.
pub fn icp_point_to_point(
    model: &PointCloud,
    target: &PointCloud,
    init: Isometry3<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    for c in [model, target] {
        if c.len() < 3 {
            return Err(BaselineError::TooFewPoints(c.len()));
        }
    }
    let index = GridIndex::new(&target.points);
    let residual = |t: &Isometry3<f64>| {
        let mut matched = Vec::with_capacity(model.len());
        let mut ss = 0.0;
        for p in &model.points {
            let (j, d) = index.nearest(&(t * p));
            matched.push(target.points[j]);
            ss += d;
        }
        ((ss / model.len() as f64).sqrt(), matched)
    };
    let mut transform = init;
    let (mut rms, mut matched) = residual(&transform);
    let mut history = vec![rms];
    for _ in 0..max_iters {
        let next = procrustes(&model.points, &matched)?;
        let (next_rms, next_matched) = residual(&next);
        let improvement = rms - next_rms;
        if next_rms <= rms {
            transform = next;
            rms = next_rms;
            matched = next_matched;
            history.push(rms);
        }
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        rms,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (self.normal.dot(&p.coords) - self.offset).abs()
    }

    fn through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm_squared().max((c - a).norm_squared());
        if n.norm_squared() <= 1e-18 * scale * scale || scale == 0.0 {
            return None;
        }
        let normal = n.normalize();
        Some(Self {
            normal,
            offset: normal.dot(&a.coords),
        })
    }

    fn fit(points: &[Point3<f64>]) -> Option<Self> {
        if points.len() < 3 {
            return None;
        }
        let n = points.len() as f64;
        let c = points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p.coords - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let k = eig.eigenvalues.imin();
        let normal = eig.eigenvectors.column(k).into_owned().normalize();
        Some(Self {
            normal,
            offset: normal.dot(&c),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub model: PlaneModel,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Inlier count of every round's candidate; `None` for collinear samples.
    pub round_counts: Vec<Option<usize>>,
}

fn round_seed(seed: u64, round: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn count_inliers(points: &[Point3<f64>], m: &PlaneModel, threshold: f64) -> usize {
    points.iter().filter(|p| m.distance(p) <= threshold).count()
}

/// Max-consensus plane with a least-squares refit over its inliers.
pub fn ransac_plane(
    cloud: &PointCloud,
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<RansacResult> {
    let pts = &cloud.points;
    if pts.len() < 3 {
        return Err(BaselineError::TooFewPoints(pts.len()));
    }
    if !(threshold > 0.0) || iterations == 0 {
        return Err(BaselineError::InvalidParameter(format!(
            "threshold {threshold}, iterations {iterations}"
        )));
    }
    let rounds: Vec<Option<(usize, PlaneModel)>> = (0..iterations as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed, r));
            let n = pts.len();
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for x in [a.min(b), a.max(b)] {
                if c >= x {
                    c += 1;
                }
            }
            PlaneModel::through(&pts[a], &pts[b], &pts[c])
                .map(|m| (count_inliers(pts, &m, threshold), m))
        })
        .collect();
    let best = rounds
        .iter()
        .enumerate()
        .filter_map(|(r, x)| x.map(|(count, m)| (count, r, m)))
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let Some((best_count, _, best_model)) = best else {
        return Err(BaselineError::NoPlane(iterations));
    };

    let mut model = best_model;
    let mut inlier_count = best_count;
    let members: Vec<Point3<f64>> = pts
        .iter()
        .filter(|p| best_model.distance(p) <= threshold)
        .copied()
        .collect();
    if let Some(refit) = PlaneModel::fit(&members) {
        let c = count_inliers(pts, &refit, threshold);
        if c >= best_count {
            model = refit;
            inlier_count = c;
        }
    }
    let inliers = pts.iter().map(|p| model.distance(p) <= threshold).collect();
    Ok(RansacResult {
        model,
        inliers,
        inlier_count,
        round_counts: rounds.iter().map(|x| x.map(|(c, _)| c)).collect(),
    })
}

/// Grid of about `approx_points` points covering a `width`×`height` plate in
/// its local frame (z = 0, centered).
pub fn plate_model_cloud(width: f64, height: f64, approx_points: usize) -> PointCloud {
    let ny = ((approx_points as f64 * height / width).sqrt().round() as usize).max(2);
    let nx = ((approx_points as f64 / ny as f64).round() as usize).max(2);
    let mut points = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = -width / 2.0 + width * i as f64 / (nx - 1) as f64;
            let y = -height / 2.0 + height * j as f64 / (ny - 1) as f64;
            points.push(Point3::new(x, y, 0.0));
        }
    }
    PointCloud::from_points(points)
}

/// Plate-local to world pose and plate size, from truth corners in
/// top-left, top-right, bottom-right, bottom-left order.
pub fn pose_from_corners(corners: &[WorldPoint; 4]) -> (Isometry3<f64>, f64, f64) {
    let c = corners.map(|p| p.0.coords);
    let center = (c[0] + c[1] + c[2] + c[3]) / 4.0;
    let ex = ((c[1] - c[0]) + (c[2] - c[3])).normalize();
    let ey_raw = (c[3] - c[0]) + (c[2] - c[1]);
    let ey = (ey_raw - ex * ex.dot(&ey_raw)).normalize();
    let ez = ex.cross(&ey);
    let width = 0.5 * ((c[1] - c[0]).norm() + (c[2] - c[3]).norm());
    let height = 0.5 * ((c[3] - c[0]).norm() + (c[2] - c[1]).norm());
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[ex, ey, ez]));
    (
        Isometry3::from_parts(
            Translation3::from(center),
            UnitQuaternion::from_rotation_matrix(&rot),
        ),
        width,
        height,
    )
}

/// Camera-to-world transform of `rig` as an isometry.
pub fn rig_isometry(rig: &CameraRig) -> Isometry3<f64> {
    let m = rig.cam_to_world();
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Isometry3::from_parts(
        Translation3::from(t),
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Icp,
    Ransac,
    Tracker,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Icp => "icp",
            Method::Ransac => "ransac",
            Method::Tracker => "tracker",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum IcpInit {
    Truth,
    /// Truth pose moved by a seeded random rotation and translation.
    Perturbed {
        rotation_deg: f64,
        translation_mm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub icp_init: IcpInit,
    pub icp_max_iters: usize,
    pub icp_tol_mm: f64,
    pub model_points: usize,
    pub ransac_threshold_mm: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            icp_init: IcpInit::Truth,
            icp_max_iters: 30,
            icp_tol_mm: 1e-4,
            model_points: 10_000,
            ransac_threshold_mm: 10.0,
            ransac_iterations: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub frame: usize,
    pub accuracy_value: Option<f64>,
    pub accuracy_kind: String,
    pub elapsed_ms: f64,
    pub error_code: String,
}

fn perturbation(seed: u64, frame: usize, rotation_deg: f64, translation_mm: f64) -> Isometry3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed, frame as u64 ^ 0x1C9));
    let mut unit = || {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 1e-9 {
            v.normalize()
        } else {
            Vector3::x()
        }
    };
    let axis = unit();
    let shift = unit();
    Isometry3::from_parts(
        Translation3::from(shift * translation_mm),
        UnitQuaternion::from_scaled_axis(axis * rotation_deg.to_radians()),
    )
}

/// Runs each method on each frame; failures are recorded per row.
pub fn evaluate_baselines(
    frames: &[LabeledFrame],
    methods: &[Method],
    cfg: &BaselineConfig,
    tracker: &TrackerConfig,
) -> Vec<BaselineRow> {
    let mut rows = Vec::new();
    for (index, lf) in frames.iter().enumerate() {
        let target_px = visible_target(&lf.frame, &lf.truth.po_mask);
        for &method in methods {
            let start = Instant::now();
            let outcome: std::result::Result<f64, &'static str> = match method {
                Method::Icp => run_icp(lf, cfg, index).map_err(|e| e.code()),
                Method::Ransac => run_ransac(lf, cfg)
                    .map(|inliers| dice_masks(&inliers, &target_px))
                    .map_err(|e| e.code()),
                Method::Tracker => track(&lf.frame, tracker)
                    .map(|out| {
                        dice_masks(
                            &tracked_segmentation(&lf.frame, &out.quad.corners),
                            &target_px,
                        )
                    })
                    .map_err(|e| e.code()),
            };
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            let kind = if method == Method::Icp { "mm" } else { "dice" };
            rows.push(BaselineRow {
                method: method.name().into(),
                frame: index,
                accuracy_value: outcome.ok(),
                accuracy_kind: kind.into(),
                elapsed_ms,
                error_code: outcome.err().unwrap_or("ok").into(),
            });
        }
    }
    rows
}

/// Mean world corner error of the registered plate model.
pub fn run_icp(lf: &LabeledFrame, cfg: &BaselineConfig, frame_index: usize) -> Result<f64> {
    let target = depth_to_point_cloud(&lf.frame, &lf.rig)?;
    let (plate_to_world, width, height) = pose_from_corners(&lf.truth.world_corners);
    let cam_to_world = rig_isometry(&lf.rig);
    let truth_in_cam = cam_to_world.inverse() * plate_to_world;
    let init = match cfg.icp_init {
        IcpInit::Truth => truth_in_cam,
        IcpInit::Perturbed {
            rotation_deg,
            translation_mm,
        } => perturbation(cfg.seed, frame_index, rotation_deg, translation_mm) * truth_in_cam,
    };
    let model = plate_model_cloud(width, height, cfg.model_points);
    let fit = icp_point_to_point(&model, &target, init, cfg.icp_max_iters, cfg.icp_tol_mm)?;
    let (hw, hh) = (width / 2.0, height / 2.0);
    let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(x, y)| Point3::new(x, y, 0.0));
    let est = local.map(|p| to_world(&lf.rig, &CameraPoint(fit.transform * p)));
    Ok(corner_error(&est, &lf.truth.world_corners).mean)
}

/// RANSAC inliers as a per-pixel mask.
pub fn run_ransac(lf: &LabeledFrame, cfg: &BaselineConfig) -> Result<Vec<bool>> {
    let cloud = depth_to_point_cloud(&lf.frame, &lf.rig)?;
    let r = ransac_plane(
        &cloud,
        cfg.ransac_threshold_mm,
        cfg.ransac_iterations,
        cfg.seed,
    )?;
    let mut mask = vec![false; lf.frame.width() * lf.frame.height()];
    for (&px, &inl) in cloud.source_pixels.iter().zip(&r.inliers) {
        mask[px] = inl;
    }
    Ok(mask)
}
