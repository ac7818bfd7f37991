//! Synthetic depth scenes with exact ground truth.
//!
//! A scene is a rectangular plate, optionally held by a capsule-shaped arm and
//! surrounded by spherical clutter. Frames are ray cast through the rig (one
//! ray per pixel center), quantized to whole millimeters and then perturbed by
//! a seeded noise model.
//!
//! Plate-local frame: `x` runs along the width, `y` runs along the height
//! towards the edge the arm holds ("bottom"), `z` is the back-facing normal.
//! Corners are numbered top-left, top-right, bottom-right, bottom-left.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthio::{
    load_mask, pixel_to_image_plane, save_mask, CameraRig, DepthFrame, DepthIoError, PixelMask,
};
use crate::geometry::{world_to_pixel, WorldPoint};

/// Depth reported for the "far" background, beyond the tracker's upper threshold.
pub const FAR_BACKGROUND_MM: u16 = 1100;
/// Neighboring depth gap that counts as a discontinuity for boundary noise.
pub const DISCONTINUITY_GAP_MM: i32 = 20;
/// Pixels within this Chebyshev distance of a discontinuity get boundary noise.
pub const BOUNDARY_RADIUS_PX: usize = 3;
pub const DEFAULT_ARM_RADIUS_MM: f64 = 40.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("plane is outside the camera frustum")]
    OutsideFrustum,
    #[error("trajectory has {got} poses for {expected} frames")]
    TrajectoryLength { expected: usize, got: usize },
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<SynthError>,
    },
    #[error(transparent)]
    Io(#[from] DepthIoError),
    #[error("file i/o: {0}")]
    File(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    #[default]
    NoReturn,
    Far,
}

impl Background {
    pub fn depth(self) -> u16 {
        match self {
            Background::NoReturn => 0,
            Background::Far => FAR_BACKGROUND_MM,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub plane_width: f64,
    pub plane_height: f64,
    /// Plate-local to world.
    pub plane_pose: Matrix4<f64>,
    pub arm_enabled: bool,
    pub arm_radius: f64,
    pub background: Background,
    pub clutter: Vec<Sphere>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default = "one")]
    pub boundary_sigma_scale: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            boundary_sigma_scale: 1.0,
            dropout_prob: 0.0,
            seed: 0,
        }
    }

    pub fn new(
        sigma: f64,
        boundary_sigma_scale: f64,
        dropout_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = Self {
            sigma,
            boundary_sigma_scale,
            dropout_prob,
            seed,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SynthError::InvalidNoise(format!("sigma {}", self.sigma)));
        }
        if !(self.boundary_sigma_scale >= 0.0 && self.boundary_sigma_scale.is_finite()) {
            return Err(SynthError::InvalidNoise(format!(
                "boundary scale {}",
                self.boundary_sigma_scale
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(SynthError::InvalidNoise(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0 && self.dropout_prob == 0.0
    }
}

/// Exact answers for one rendered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub world_corners: [WorldPoint; 4],
    pub pixel_corners: [Point2<f64>; 4],
    pub po_mask: PixelMask,
}

/// Pose placing the plate `distance` mm in front of a camera whose
/// camera-to-world transform is the identity, upright in the image.
pub fn facing_camera_pose(distance: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 0)] = -1.0;
    m[(1, 1)] = -1.0;
    m[(2, 3)] = distance;
    m
}

impl SceneSpec {
    pub fn new(plane_width: f64, plane_height: f64, plane_pose: Matrix4<f64>) -> Self {
        Self {
            plane_width,
            plane_height,
            plane_pose,
            arm_enabled: true,
            arm_radius: DEFAULT_ARM_RADIUS_MM,
            background: Background::NoReturn,
            clutter: Vec::new(),
        }
    }

    /// The 300 x 240 mm rectangle, centered at the world origin.
    pub fn po1() -> Self {
        Self::new(300.0, 240.0, Matrix4::identity())
    }

    /// The 220 x 220 mm square, centered at the world origin.
    pub fn po2() -> Self {
        Self::new(220.0, 220.0, Matrix4::identity())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plane_width > 0.0 && self.plane_height > 0.0) {
            return Err(SynthError::InvalidScene(format!(
                "plane dimensions {}x{}",
                self.plane_width, self.plane_height
            )));
        }
        if self.arm_enabled && !(self.arm_radius > 0.0) {
            return Err(SynthError::InvalidScene(format!(
                "arm radius {}",
                self.arm_radius
            )));
        }
        if self.clutter.iter().any(|s| !(s.radius > 0.0)) {
            return Err(SynthError::InvalidScene(
                "clutter radius must be positive".into(),
            ));
        }
        let r = self.rotation();
        if ((r.transpose() * r) - Matrix3::identity()).amax() > 1e-6 || r.determinant() <= 0.0 {
            return Err(SynthError::InvalidScene("plane_pose is not rigid".into()));
        }
        Ok(())
    }

    fn rotation(&self) -> Matrix3<f64> {
        self.plane_pose.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.plane_pose.fixed_view::<3, 1>(0, 3).into_owned())
    }

    /// Plate axes in world coordinates: width direction, height direction, back normal.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let r = self.rotation();
        (
            r.column(0).into_owned(),
            r.column(1).into_owned(),
            r.column(2).into_owned(),
        )
    }

    pub fn local_to_world(&self, x: f64, y: f64, z: f64) -> Point3<f64> {
        let (ex, ey, ez) = self.axes();
        self.center() + ex * x + ey * y + ez * z
    }

    pub fn world_corners(&self) -> [WorldPoint; 4] {
        let (hw, hh) = (self.plane_width / 2.0, self.plane_height / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(x, y)| WorldPoint(self.local_to_world(x, y, 0.0)))
    }

    /// Direction of the forearm: down along the plate and towards its front face
    /// at 45 degrees.
    pub fn arm_direction(&self) -> Vector3<f64> {
        let (_, ey, ez) = self.axes();
        (ey - ez).normalize()
    }

    /// Arm capsule endpoints for a given rig. The capsule starts behind the
    /// bottom-center of the plate, touching its back face, and is extended
    /// until its axis projects below the bottom of the image.
    pub fn arm_segment(&self, rig: &CameraRig) -> (Point3<f64>, Point3<f64>) {
        let start = self.local_to_world(0.0, self.plane_height / 2.0, self.arm_radius);
        let dir = self.arm_direction();
        let limit = rig.height as f64 + 10.0;
        let mut t = 0.0;
        while t < 3000.0 {
            let p = start + dir * t;
            match world_to_pixel(rig, &WorldPoint(p)) {
                Some(px) if px.y <= limit => t += 10.0,
                _ => break,
            }
        }
        (start, start + dir * (t + 50.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Hit {
    Plate,
    Other,
}

fn ray_plate(spec: &SceneSpec, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let (ex, ey, ez) = spec.axes();
    let c = spec.center();
    let denom = ez.dot(d);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = ez.dot(&(c - o)) / denom;
    if t <= 0.0 {
        return None;
    }
    let rel = o + d * t - c;
    let (x, y) = (ex.dot(&rel), ey.dot(&rel));
    (x.abs() <= spec.plane_width / 2.0 && y.abs() <= spec.plane_height / 2.0).then_some(t)
}

fn ray_sphere(center: &Point3<f64>, radius: f64, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let oc = o - center;
    let b = oc.dot(d);
    let c = oc.dot(&oc) - radius * radius;
    let h = b * b - c;
    if h < 0.0 {
        return None;
    }
    let t = -b - h.sqrt();
    (t > 0.0).then_some(t)
}

fn ray_capsule(
    a: &Point3<f64>,
    b: &Point3<f64>,
    radius: f64,
    o: &Point3<f64>,
    d: &Vector3<f64>,
) -> Option<f64> {
    let ba = b - a;
    let oa = o - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(d);
    let baoa = ba.dot(&oa);
    let rdoa = d.dot(&oa);
    let oaoa = oa.dot(&oa);
    let qa = baba - bard * bard;
    let qb = baba * rdoa - baoa * bard;
    let qc = baba * oaoa - baoa * baoa - radius * radius * baba;
    let h = qb * qb - qa * qc;
    let mut best: Option<f64> = None;
    if h >= 0.0 && qa > 1e-12 {
        let t = (-qb - h.sqrt()) / qa;
        let y = baoa + t * bard;
        if y > 0.0 && y < baba && t > 0.0 {
            best = Some(t);
        }
    }
    // the capsule is the union of the clipped cylinder and its two end spheres
    for t in [ray_sphere(a, radius, o, d), ray_sphere(b, radius, o, d)]
        .into_iter()
        .flatten()
    {
        if best.is_none_or(|bt| t < bt) {
            best = Some(t);
        }
    }
    best
}

/// Ray casts the scene without noise.
fn cast_scene(spec: &SceneSpec, rig: &CameraRig) -> Result<(DepthFrame, PixelMask)> {
    let m = rig.cam_to_world();
    let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
    let origin = Point3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let arm = spec.arm_enabled.then(|| spec.arm_segment(rig));
    let clutter: Vec<(Point3<f64>, f64)> = spec
        .clutter
        .iter()
        .map(|s| (Point3::from(s.center), s.radius))
        .collect();
    let background = spec.background.depth();

    let (w, h) = (rig.width, rig.height);
    let mut depths = vec![background; w * h];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let ip = pixel_to_image_plane(rig, x as f64, y as f64)?;
            let dir = rot * Vector3::new(-ip.u, -ip.v, 1.0).normalize();
            let mut best: Option<(f64, Hit)> =
                ray_plate(spec, &origin, &dir).map(|t| (t, Hit::Plate));
            let mut consider = |t: Option<f64>| {
                if let Some(t) = t {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, Hit::Other));
                    }
                }
            };
            if let Some((a, b)) = &arm {
                consider(ray_capsule(a, b, spec.arm_radius, &origin, &dir));
            }
            for (c, r) in &clutter {
                consider(ray_sphere(c, *r, &origin, &dir));
            }
            if let Some((t, hit)) = best {
                let q = (t + 0.5).floor();
                let i = y * w + x;
                depths[i] = if q >= 1.0 && q <= u16::MAX as f64 {
                    q as u16
                } else {
                    0
                };
                mask[i] = hit == Hit::Plate;
            }
        }
    }
    Ok((DepthFrame::new(w, h, depths)?, PixelMask::new(w, h, mask)?))
}

/// Renders one frame and its ground truth.
pub fn render_scene(
    spec: &SceneSpec,
    rig: &CameraRig,
    noise: &NoiseSpec,
) -> Result<(DepthFrame, SceneTruth)> {
    spec.validate()?;
    noise.validate()?;
    let world_corners = spec.world_corners();
    let mut pixel_corners = [Point2::origin(); 4];
    for (i, c) in world_corners.iter().enumerate() {
        pixel_corners[i] = world_to_pixel(rig, c).ok_or(SynthError::OutsideFrustum)?;
    }
    let (clean, po_mask) = cast_scene(spec, rig)?;
    if po_mask.count() == 0 {
        return Err(SynthError::OutsideFrustum);
    }
    let frame = inject_noise(&clean, noise);
    Ok((
        frame,
        SceneTruth {
            world_corners,
            pixel_corners,
            po_mask,
        },
    ))
}

/// Renders frame `i` with pose `trajectory[i]` and noise seed `seed + i`.
pub fn render_sequence(
    spec: &SceneSpec,
    rig: &CameraRig,
    noise: &NoiseSpec,
    n: usize,
    trajectory: &[Matrix4<f64>],
) -> Result<Vec<(DepthFrame, SceneTruth)>> {
    if n == 0 {
        return Err(SynthError::InvalidScene(
            "sequence needs at least one frame".into(),
        ));
    }
    if trajectory.len() != n {
        return Err(SynthError::TrajectoryLength {
            expected: n,
            got: trajectory.len(),
        });
    }
    trajectory
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let wrap = |e: SynthError| SynthError::Frame {
                index: i,
                source: Box::new(e),
            };
            let frame_rig = rig.with_pose(*pose).map_err(|e| wrap(e.into()))?;
            let frame_noise = NoiseSpec {
                seed: noise.seed.wrapping_add(i as u64),
                ..*noise
            };
            render_scene(spec, &frame_rig, &frame_noise).map_err(wrap)
        })
        .collect()
}

/// Camera pose looking at the plate center from `range` mm, with the view
/// direction rotated by `azimuth` about the plate's vertical axis and raised by
/// `elevation` towards its top edge, then rolled about the optical axis.
pub fn look_at_plate(
    spec: &SceneSpec,
    range: f64,
    azimuth: f64,
    elevation: f64,
    roll: f64,
) -> Matrix4<f64> {
    let (ex, ey, ez) = spec.axes();
    let to_camera = ex * (azimuth.sin() * elevation.cos())
        - ey * elevation.sin()
        - ez * (azimuth.cos() * elevation.cos());
    let position = spec.center() + to_camera * range;
    let z = -to_camera;
    pose_from_forward(position, z, ey, roll)
}

fn pose_from_forward(
    position: Point3<f64>,
    forward: Vector3<f64>,
    plate_down: Vector3<f64>,
    roll: f64,
) -> Matrix4<f64> {
    let z = forward.normalize();
    let y0 = -(plate_down - z * plate_down.dot(&z)).normalize();
    let x0 = y0.cross(&z);
    let (s, c) = roll.sin_cos();
    let x = x0 * c + y0 * s;
    let y = -x0 * s + y0 * c;
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&x);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&z);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&position.coords);
    m
}

/// Camera `distance` mm in front of the plate and `height` mm above its center,
/// looking perpendicular to it.
pub fn static_offset_pose(spec: &SceneSpec, distance: f64, height: f64) -> Matrix4<f64> {
    let (_, ey, ez) = spec.axes();
    let position = spec.center() - ez * distance - ey * height;
    pose_from_forward(position, ez, ey, 0.0)
}

/// A scripted walk around the plate: range sweeps `[min_range, max_range]`
/// twice while azimuth, elevation and roll oscillate at co-prime rates.
pub fn orbit_trajectory(
    spec: &SceneSpec,
    n: usize,
    min_range: f64,
    max_range: f64,
) -> Vec<Matrix4<f64>> {
    let tau = std::f64::consts::TAU;
    let deg = std::f64::consts::PI / 180.0;
    let mid = 0.5 * (min_range + max_range);
    let half = 0.5 * (max_range - min_range);
    (0..n)
        .map(|i| {
            let s = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            let range = mid - half * (tau * s).cos();
            let azimuth = 20.0 * deg * (tau * 3.0 * s).sin();
            let elevation = (10.0 + 10.0 * (tau * 5.0 * s + 1.0).sin()) * deg;
            let roll = 6.0 * deg * (tau * 7.0 * s).sin();
            look_at_plate(spec, range, azimuth, elevation, roll)
        })
        .collect()
}

/// True when every truth corner projects at least `margin` px inside the image.
pub fn corners_in_frame(truth: &SceneTruth, rig: &CameraRig, margin: f64) -> bool {
    truth.pixel_corners.iter().all(|p| {
        p.x >= margin
            && p.y >= margin
            && p.x <= rig.width as f64 - 1.0 - margin
            && p.y <= rig.height as f64 - 1.0 - margin
    })
}

/// Adds per-pixel Gaussian noise and dropout. Zero pixels stay zero; pixels
/// within [`BOUNDARY_RADIUS_PX`] of a depth discontinuity use the boundary
/// scale.
pub fn inject_noise(frame: &DepthFrame, noise: &NoiseSpec) -> DepthFrame {
    if noise.is_identity() {
        return frame.clone();
    }
    let (w, h) = (frame.width(), frame.height());
    let boundary = boundary_band(frame);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = Vec::with_capacity(w * h);
    for (i, &d) in frame.depths().iter().enumerate() {
        if d == 0 {
            out.push(0);
            continue;
        }
        if noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob {
            out.push(0);
            continue;
        }
        let scale = if boundary[i] {
            noise.boundary_sigma_scale
        } else {
            1.0
        };
        let z: f64 = rng.sample(StandardNormal);
        let v = (d as f64 + noise.sigma * scale * z + 0.5).floor();
        out.push(v.clamp(1.0, u16::MAX as f64) as u16);
    }
    DepthFrame::new(w, h, out).expect("dimensions unchanged")
}

fn boundary_band(frame: &DepthFrame) -> Vec<bool> {
    let (w, h) = (frame.width(), frame.height());
    let d = frame.depths();
    let mut edge = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let here = d[i] as i32;
            let gap = |j: usize| (here - d[j] as i32).abs() > DISCONTINUITY_GAP_MM;
            if (x + 1 < w && gap(i + 1)) || (y + 1 < h && gap(i + w)) {
                edge[i] = true;
                if x + 1 < w && gap(i + 1) {
                    edge[i + 1] = true;
                }
                if y + 1 < h && gap(i + w) {
                    edge[i + w] = true;
                }
            }
        }
    }
    // separable box dilation
    let r = BOUNDARY_RADIUS_PX;
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = (lo..=hi).any(|xx| edge[y * w + xx]);
        }
    }
    let mut band = vec![false; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            band[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    band
}

// ---------------------------------------------------------------------------
// files

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub plane_width: f64,
    pub plane_height: f64,
    #[serde(default = "identity16")]
    pub plane_pose: Vec<f64>,
    #[serde(default = "default_true")]
    pub arm_enabled: bool,
    #[serde(default = "default_arm_radius")]
    pub arm_radius: f64,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub clutter: Vec<Sphere>,
}

fn identity16() -> Vec<f64> {
    Matrix4::<f64>::identity()
        .transpose()
        .iter()
        .copied()
        .collect()
}

fn default_true() -> bool {
    true
}

fn default_arm_radius() -> f64 {
    DEFAULT_ARM_RADIUS_MM
}

impl SceneSpec {
    pub fn from_file(file: SceneFile) -> Result<Self> {
        if file.plane_pose.len() != 16 {
            return Err(SynthError::InvalidScene(format!(
                "plane_pose must hold 16 values, found {}",
                file.plane_pose.len()
            )));
        }
        let spec = SceneSpec {
            plane_width: file.plane_width,
            plane_height: file.plane_height,
            plane_pose: Matrix4::from_row_slice(&file.plane_pose),
            arm_enabled: file.arm_enabled,
            arm_radius: file.arm_radius,
            background: file.background,
            clutter: file.clutter,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            plane_width: self.plane_width,
            plane_height: self.plane_height,
            plane_pose: self.plane_pose.transpose().iter().copied().collect(),
            arm_enabled: self.arm_enabled,
            arm_radius: self.arm_radius,
            background: self.background,
            clutter: self.clutter.clone(),
        }
    }
}

pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| SynthError::Parse(e.to_string()))?;
    SceneSpec::from_file(file)
}

pub fn save_scene_spec(spec: &SceneSpec, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&spec.to_file())
        .map_err(|e| SynthError::Parse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_noise_spec(path: impl AsRef<Path>) -> Result<NoiseSpec> {
    let text = fs::read_to_string(path)?;
    let noise: NoiseSpec =
        serde_json::from_str(&text).map_err(|e| SynthError::Parse(e.to_string()))?;
    noise.validate()?;
    Ok(noise)
}

/// Truth sidecar document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub world_corners: Vec<f64>,
    pub pixel_corners: Vec<f64>,
    pub po_mask_path: String,
}

/// Writes the truth JSON at `path` and the mask PGM at `mask_path`; the JSON
/// refers to the mask by file name, relative to its own directory.
pub fn save_truth(
    truth: &SceneTruth,
    path: impl AsRef<Path>,
    mask_path: impl AsRef<Path>,
) -> Result<()> {
    let mask_path = mask_path.as_ref();
    save_mask(&truth.po_mask, mask_path)?;
    let file = TruthFile {
        world_corners: truth
            .world_corners
            .iter()
            .flat_map(|p| [p.0.x, p.0.y, p.0.z])
            .collect(),
        pixel_corners: truth
            .pixel_corners
            .iter()
            .flat_map(|p| [p.x, p.y])
            .collect(),
        po_mask_path: mask_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| SynthError::Parse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<SceneTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let file: TruthFile =
        serde_json::from_str(&text).map_err(|e| SynthError::Parse(e.to_string()))?;
    if file.world_corners.len() != 12 || file.pixel_corners.len() != 8 {
        return Err(SynthError::Parse(
            "truth needs 12 world and 8 pixel coordinates".into(),
        ));
    }
    let mask_path: PathBuf = path
        .parent()
        .map(|d| d.join(&file.po_mask_path))
        .unwrap_or_else(|| PathBuf::from(&file.po_mask_path));
    let w = &file.world_corners;
    let p = &file.pixel_corners;
    Ok(SceneTruth {
        world_corners: std::array::from_fn(|i| {
            WorldPoint::new(w[3 * i], w[3 * i + 1], w[3 * i + 2])
        }),
        pixel_corners: std::array::from_fn(|i| Point2::new(p[2 * i], p[2 * i + 1])),
        po_mask: load_mask(mask_path)?,
    })
}
