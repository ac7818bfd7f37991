//! Image plane to camera space to world space, and pose/size of the tracked plane.
//!
//! Camera-frame convention: a point with image-plane coordinates `(U, V, -1)`
//! and range `d` sits at `d * (-U, -V, 1) / sqrt(U^2 + V^2 + 1)`, so the optical
//! axis is `+z` and the camera `x`/`y` axes point against the pixel `u`/`v`
//! directions. [`project`] is the exact inverse.

use nalgebra::{Matrix3, Point2, Point3, Vector3, Vector4};
use thiserror::Error;

use crate::depthio::{pixel_to_image_plane, CameraRig, DepthIoError, ImagePlanePoint};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate corner geometry: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Camera(#[from] DepthIoError),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Millimeters in the depth camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPoint(pub Point3<f64>);

/// Millimeters in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPoint(pub Point3<f64>);

impl CameraPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Point3::new(x, y, z))
    }
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Point3::new(x, y, z))
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.0 - other.0).norm()
    }
}

/// Pose and size of a planar quadrilateral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanePose {
    pub center: WorldPoint,
    pub normal: Vector3<f64>,
    /// Mean length of the sides (0-1, 2-3), projected into the plane.
    pub edge_u: f64,
    /// Mean length of the sides (1-2, 3-0), projected into the plane.
    pub edge_v: f64,
    pub rms_planarity: f64,
}

/// Scales the ray through `p` so the result lies `depth` millimeters from the aperture.
pub fn unproject(p: ImagePlanePoint, depth: f64) -> Result<CameraPoint> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let norm = (p.u * p.u + p.v * p.v + p.w() * p.w()).sqrt();
    let s = depth / norm;
    Ok(CameraPoint::new(-p.u * s, -p.v * s, -p.w() * s))
}

/// Inverse of [`unproject`] up to scale. `None` behind the camera.
pub fn project(p: &CameraPoint) -> Option<ImagePlanePoint> {
    let Point3 { coords } = p.0;
    if coords.z <= 0.0 {
        return None;
    }
    Some(ImagePlanePoint::new(
        -coords.x / coords.z,
        -coords.y / coords.z,
    ))
}

pub fn to_world(rig: &CameraRig, p: &CameraPoint) -> WorldPoint {
    let h = rig.cam_to_world() * Vector4::new(p.0.x, p.0.y, p.0.z, 1.0);
    WorldPoint::new(h.x / h.w, h.y / h.w, h.z / h.w)
}

pub fn to_camera(rig: &CameraRig, p: &WorldPoint) -> CameraPoint {
    let h = rig.world_to_cam() * Vector4::new(p.0.x, p.0.y, p.0.z, 1.0);
    CameraPoint::new(h.x / h.w, h.y / h.w, h.z / h.w)
}

/// Pixel coordinates of a world point, `None` when it is behind the camera.
pub fn world_to_pixel(rig: &CameraRig, p: &WorldPoint) -> Option<Point2<f64>> {
    let cam = to_camera(rig, p);
    let ip = project(&cam)?;
    let (u, v) = rig.image_plane_to_pixel(ip);
    Some(Point2::new(u, v))
}

/// Full content-renderer chain for one pixel: undistort, unproject, move to world.
pub fn pixel_to_world(rig: &CameraRig, pixel: Point2<f64>, depth: f64) -> Result<WorldPoint> {
    let ip = pixel_to_image_plane(rig, pixel.x, pixel.y)?;
    let cam = unproject(ip, depth)?;
    Ok(to_world(rig, &cam))
}

pub fn locate_corners(
    rig: &CameraRig,
    pixels: &[Point2<f64>; 4],
    depths: &[f64; 4],
) -> Result<[WorldPoint; 4]> {
    let mut out = [WorldPoint::new(0.0, 0.0, 0.0); 4];
    for i in 0..4 {
        out[i] = pixel_to_world(rig, pixels[i], depths[i])?;
    }
    Ok(out)
}

/// Centroid, least-squares normal, in-plane side lengths and planarity residual
/// of four corners given in outline order.
pub fn estimate_pose_size(corners: &[WorldPoint; 4]) -> Result<PlanePose> {
    let pts: Vec<Vector3<f64>> = corners.iter().map(|c| c.0.coords).collect();
    if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(GeometryError::Degenerate("non-finite corner".into()));
    }
    let scale = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(GeometryError::Degenerate("all corners coincide".into()));
    }
    // no three corners (and in particular no duplicate pair) may be collinear
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let area2 = (pts[j] - pts[i]).cross(&(pts[k] - pts[i])).norm();
                if area2 <= 1e-9 * scale * scale {
                    return Err(GeometryError::Degenerate(format!(
                        "corners {i}, {j}, {k} are collinear"
                    )));
                }
            }
        }
    }

    let centroid = pts.iter().sum::<Vector3<f64>>() / 4.0;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let smallest = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned().normalize();
    let orient = (pts[1] - pts[0]).cross(&(pts[3] - pts[0]));
    if normal.dot(&orient) < 0.0 {
        normal = -normal;
    }

    let in_plane = |a: usize, b: usize| {
        let d = pts[b] - pts[a];
        (d - normal * normal.dot(&d)).norm()
    };
    let edge_u = 0.5 * (in_plane(0, 1) + in_plane(2, 3));
    let edge_v = 0.5 * (in_plane(1, 2) + in_plane(3, 0));
    let rms_planarity = (pts
        .iter()
        .map(|p| normal.dot(&(p - centroid)).powi(2))
        .sum::<f64>()
        / 4.0)
        .sqrt();

    Ok(PlanePose {
        center: WorldPoint(Point3::from(centroid)),
        normal,
        edge_u,
        edge_v,
        rms_planarity,
    })
}
