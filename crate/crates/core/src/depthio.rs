//! Depth frames, camera rigs and the files they live in.
//!
//! Frames are stored as binary 16-bit PGM (`P5`, big-endian samples), one
//! unsigned millimeter value per pixel with `0` meaning "no return". Rigs are
//! JSON documents holding pinhole intrinsics, two radial distortion terms and
//! a row-major 4x4 camera-to-world transform.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when deciding whether a rig file holds a rigid transform.
pub const RIGIDITY_TOLERANCE: f64 = 1e-6;

/// Residual allowed between the forward distortion model and the pixel it inverts.
pub const UNDISTORT_TOLERANCE: f64 = 1e-9;

const UNDISTORT_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum DepthIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported PGM bit depth (maxval {0}); depth frames must be 16-bit")]
    UnsupportedBitDepth(u32),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid rig file: {0}")]
    RigParse(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("cam_to_world is not a rigid transform: {0}")]
    NonRigid(String),
    #[error("undistortion did not converge for pixel ({u}, {v})")]
    NonConvergentUndistortion { u: f64, v: f64 },
}

pub type Result<T> = std::result::Result<T, DepthIoError>;

/// A rectangular grid of millimeter depth samples in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    depths: Vec<u16>,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depths: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DepthIoError::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if depths.len() != width * height {
            return Err(DepthIoError::InvalidFrame(format!(
                "{} samples for a {width}x{height} frame",
                depths.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depths,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[u16] {
        &self.depths
    }

    pub fn into_depths(self) -> Vec<u16> {
        self.depths
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.depths[y * self.width + x]
    }

    /// Depth at signed coordinates; anything outside the frame reads as zero.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64) -> u16 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0
        } else {
            self.depths[y as usize * self.width + x as usize]
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.depths.iter().filter(|&&d| d != 0).count()
    }
}

/// Per-pixel boolean membership over a frame-sized grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(DepthIoError::InvalidFrame(format!(
                "mask of {} bits does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Keeps pixels whose whole `(2r+1)`-square neighborhood is set and inside
    /// the image.
    pub fn eroded(&self, radius: usize) -> PixelMask {
        let (w, h, r) = (self.width, self.height, radius);
        let mut bits = vec![false; w * h];
        for y in r..h.saturating_sub(r) {
            for x in r..w.saturating_sub(r) {
                bits[y * w + x] =
                    (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| self.get(xx, yy)));
            }
        }
        PixelMask {
            width: w,
            height: h,
            bits,
        }
    }
}

/// A normalized, undistorted point on the unit-focal image plane. The third
/// homogeneous coordinate is always `-1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePlanePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePlanePoint {
    pub const W: f64 = -1.0;

    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn w(&self) -> f64 {
        Self::W
    }
}

/// Pinhole intrinsics, two-term radial distortion and the rigid
/// camera-to-world transform of a depth camera.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    cam_to_world: Matrix4<f64>,
}

/// On-disk shape of a rig document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    pub cam_to_world: Vec<f64>,
}

impl CameraRig {
    /// Builds a rig, rejecting non-positive focal lengths and non-rigid
    /// transforms. A rotation block that passes the rigidity tolerance is
    /// snapped to the nearest exact rotation.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k1: f64,
        k2: f64,
        cam_to_world: Matrix4<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DepthIoError::InvalidIntrinsics(format!(
                "image size {width}x{height}"
            )));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(DepthIoError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if ![cx, cy, k1, k2].iter().all(|v| v.is_finite()) {
            return Err(DepthIoError::InvalidIntrinsics(
                "non-finite principal point or distortion".into(),
            ));
        }
        let cam_to_world = rigidify(&cam_to_world)?;
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            k1,
            k2,
            cam_to_world,
        })
    }

    /// Distortion-free rig with the principal point at the image center.
    pub fn pinhole(
        width: usize,
        height: usize,
        focal: f64,
        cam_to_world: Matrix4<f64>,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            cam_to_world,
        )
    }

    pub fn cam_to_world(&self) -> &Matrix4<f64> {
        &self.cam_to_world
    }

    /// Same intrinsics, different pose.
    pub fn with_pose(&self, cam_to_world: Matrix4<f64>) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.k1,
            self.k2,
            cam_to_world,
        )
    }

    /// Inverse of `cam_to_world`, exploiting rigidity.
    pub fn world_to_cam(&self) -> Matrix4<f64> {
        let r = self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let t = self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned();
        let rt = r.transpose();
        let mut inv = Matrix4::identity();
        inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-rt * t));
        inv
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    /// Radial distortion factor for an undistorted normalized point.
    #[inline]
    fn radial(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Forward model: undistorted image-plane point to pixel coordinates.
    pub fn image_plane_to_pixel(&self, p: ImagePlanePoint) -> (f64, f64) {
        let f = self.radial(p.u, p.v);
        (self.cx + self.fx * p.u * f, self.cy + self.fy * p.v * f)
    }

    pub fn to_file(&self) -> RigFile {
        RigFile {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            k1: self.k1,
            k2: self.k2,
            cam_to_world: (0..16).map(|i| self.cam_to_world[(i / 4, i % 4)]).collect(),
        }
    }

    pub fn from_file(file: RigFile) -> Result<Self> {
        if file.cam_to_world.len() != 16 {
            return Err(DepthIoError::RigParse(format!(
                "cam_to_world must hold 16 values, found {}",
                file.cam_to_world.len()
            )));
        }
        let m = Matrix4::from_row_slice(&file.cam_to_world);
        Self::new(
            file.width,
            file.height,
            file.fx,
            file.fy,
            file.cx,
            file.cy,
            file.k1,
            file.k2,
            m,
        )
    }
}

fn rigidify(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DepthIoError::NonRigid("non-finite entries".into()));
    }
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
    if bottom.iter().any(|v| v.abs() > RIGIDITY_TOLERANCE) {
        return Err(DepthIoError::NonRigid(
            "bottom row must be [0, 0, 0, 1]".into(),
        ));
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let gram = r.transpose() * r - Matrix3::identity();
    let worst = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if worst > RIGIDITY_TOLERANCE {
        return Err(DepthIoError::NonRigid(format!(
            "max |R^T R - I| = {worst:.3e}"
        )));
    }
    let det = r.determinant();
    if det <= 0.0 {
        return Err(DepthIoError::NonRigid(format!("det(R) = {det}")));
    }
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let snapped = u * v_t;
    let mut out = *m;
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&snapped);
    out[(3, 0)] = 0.0;
    out[(3, 1)] = 0.0;
    out[(3, 2)] = 0.0;
    out[(3, 3)] = 1.0;
    Ok(out)
}

/// Maps a (possibly fractional) pixel to the undistorted image plane.
///
/// Without distortion this is the affine map `((u - cx) / fx, (v - cy) / fy)`.
/// With distortion the radial model is inverted by fixed-point iteration and
/// the answer is only returned if re-distorting it reproduces the input.
pub fn pixel_to_image_plane(rig: &CameraRig, u: f64, v: f64) -> Result<ImagePlanePoint> {
    let xd = (u - rig.cx) / rig.fx;
    let yd = (v - rig.cy) / rig.fy;
    if !rig.has_distortion() {
        return Ok(ImagePlanePoint::new(xd, yd));
    }
    let (mut x, mut y) = (xd, yd);
    for _ in 0..UNDISTORT_MAX_ITERS {
        let f = rig.radial(x, y);
        if !(f > 0.0) || !f.is_finite() {
            break;
        }
        let (nx, ny) = (xd / f, yd / f);
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if step < 1e-15 {
            break;
        }
    }
    let f = rig.radial(x, y);
    let residual = (x * f - xd).abs().max((y * f - yd).abs());
    if residual.is_finite() && residual <= UNDISTORT_TOLERANCE {
        Ok(ImagePlanePoint::new(x, y))
    } else {
        Err(DepthIoError::NonConvergentUndistortion { u, v })
    }
}

fn next_token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(DepthIoError::MalformedHeader(
            "unexpected end of header".into(),
        ));
    }
    Ok(&data[start..*pos])
}

fn header_number(data: &[u8], pos: &mut usize, name: &str) -> Result<u32> {
    let tok = next_token(data, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| {
            DepthIoError::MalformedHeader(format!(
                "{name} is not an integer: {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pgm_header(data: &[u8]) -> Result<PgmHeader> {
    let mut pos = 0;
    let magic = next_token(data, &mut pos)?;
    if magic != b"P5" {
        return Err(DepthIoError::MalformedHeader(format!(
            "magic {:?}, expected P5",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(data, &mut pos, "width")? as usize;
    let height = header_number(data, &mut pos, "height")? as usize;
    let maxval = header_number(data, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(DepthIoError::MalformedHeader(format!(
            "dimensions {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DepthIoError::MalformedHeader(format!("maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(DepthIoError::MalformedHeader(
            "missing whitespace after maxval".into(),
        ));
    }
    Ok(PgmHeader {
        width,
        height,
        maxval,
        data_offset: pos + 1,
    })
}

/// Decodes a 16-bit binary PGM held in memory.
pub fn decode_depth_frame(data: &[u8]) -> Result<DepthFrame> {
    let header = parse_pgm_header(data)?;
    if header.maxval < 256 {
        return Err(DepthIoError::UnsupportedBitDepth(header.maxval));
    }
    let expected = header.width * header.height * 2;
    let payload = &data[header.data_offset..];
    if payload.len() < expected {
        return Err(DepthIoError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let depths = payload[..expected]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    DepthFrame::new(header.width, header.height, depths)
}

pub fn encode_depth_frame(frame: &DepthFrame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.depths.len() * 2);
    out.extend_from_slice(header.as_bytes());
    for d in &frame.depths {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

pub fn load_depth_frame(path: impl AsRef<Path>) -> Result<DepthFrame> {
    decode_depth_frame(&fs::read(path)?)
}

pub fn save_depth_frame(frame: &DepthFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_depth_frame(frame))?;
    Ok(())
}

/// Masks are written as 8-bit PGM with 0 / 255 samples.
pub fn save_mask(mask: &PixelMask, path: impl AsRef<Path>) -> Result<()> {
    let header = format!("P5\n{} {}\n255\n", mask.width, mask.height);
    let mut out = Vec::with_capacity(header.len() + mask.bits.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// Loads an 8-bit PGM mask; any nonzero sample is a member.
pub fn load_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    let data = fs::read(path)?;
    let header = parse_pgm_header(&data)?;
    if header.maxval > 255 {
        return Err(DepthIoError::UnsupportedBitDepth(header.maxval));
    }
    let expected = header.width * header.height;
    let payload = &data[header.data_offset..];
    if payload.len() < expected {
        return Err(DepthIoError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    PixelMask::new(
        header.width,
        header.height,
        payload[..expected].iter().map(|&b| b != 0).collect(),
    )
}

pub fn load_camera_rig(path: impl AsRef<Path>) -> Result<CameraRig> {
    let text = fs::read_to_string(path)?;
    parse_camera_rig(&text)
}

pub fn parse_camera_rig(text: &str) -> Result<CameraRig> {
    let file: RigFile =
        serde_json::from_str(text).map_err(|e| DepthIoError::RigParse(e.to_string()))?;
    CameraRig::from_file(file)
}

pub fn save_camera_rig(rig: &CameraRig, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&rig.to_file())
        .map_err(|e| DepthIoError::RigParse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig_json(matrix: &[f64; 16], k1: f64) -> String {
        serde_json::json!({
            "width": 488, "height": 450, "fx": 300.0, "fy": 300.0,
            "cx": 243.5, "cy": 224.5, "k1": k1, "k2": 0.0,
            "cam_to_world": matrix.to_vec(),
        })
        .to_string()
    }

    #[test]
    fn erosion_shrinks_a_block() {
        let mut bits = vec![false; 64];
        for y in 1..7 {
            for x in 2..7 {
                bits[y * 8 + x] = true;
            }
        }
        let m = PixelMask::new(8, 8, bits).unwrap();
        assert_eq!(m.eroded(0), m);
        let e = m.eroded(1);
        assert_eq!(e.count(), 4 * 3);
        assert!(e.get(3, 2) && e.get(5, 5) && !e.get(2, 2));
        assert_eq!(m.eroded(3).count(), 0);
    }

    const IDENTITY: [f64; 16] = [
        1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    ];

    #[test]
    fn small_frame_round_trips() {
        let frame = DepthFrame::new(4, 3, vec![500; 12]).unwrap();
        let bytes = encode_depth_frame(&frame);
        assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
        let back = decode_depth_frame(&bytes).unwrap();
        assert_eq!(back.width(), 4);
        assert_eq!(back.height(), 3);
        assert_eq!(back.depths(), &[500u16; 12][..]);
    }

    #[test]
    fn full_size_zero_frame_and_max_value_survive_disk() {
        let dir = tempfile::tempdir().unwrap();
        let zero = DepthFrame::zeros(488, 450).unwrap();
        let p = dir.path().join("zero.pgm");
        save_depth_frame(&zero, &p).unwrap();
        assert_eq!(load_depth_frame(&p).unwrap(), zero);

        let mut depths = vec![0u16; 6];
        depths[5] = 65535;
        let f = DepthFrame::new(3, 2, depths).unwrap();
        let p = dir.path().join("max.pgm");
        save_depth_frame(&f, &p).unwrap();
        assert_eq!(load_depth_frame(&p).unwrap().get(2, 1), 65535);
    }

    #[test]
    fn eight_bit_pgm_is_unsupported() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        assert!(matches!(
            decode_depth_frame(&bytes),
            Err(DepthIoError::UnsupportedBitDepth(255))
        ));
    }

    #[test]
    fn header_and_payload_errors_are_distinct() {
        assert!(matches!(
            decode_depth_frame(b"P2\n2 2\n65535\n"),
            Err(DepthIoError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_depth_frame(b"P5\n2 x\n65535\n"),
            Err(DepthIoError::MalformedHeader(_))
        ));
        let mut short = b"P5\n2 2\n65535\n".to_vec();
        short.extend_from_slice(&[0, 1, 0, 2]);
        assert!(matches!(
            decode_depth_frame(&short),
            Err(DepthIoError::TruncatedPayload {
                expected: 8,
                found: 4
            })
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # depth\n# another\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0xF4]);
        assert_eq!(decode_depth_frame(&bytes).unwrap().get(0, 0), 500);
    }

    #[test]
    fn identity_rig_loads() {
        let rig = parse_camera_rig(&rig_json(&IDENTITY, 0.0)).unwrap();
        assert_eq!(rig.cam_to_world(), &Matrix4::identity());
        assert!(!rig.has_distortion());
    }

    #[test]
    fn scaled_rotation_is_rejected() {
        let mut m = IDENTITY;
        for i in [0, 5, 10] {
            m[i] = 2.0;
        }
        assert!(matches!(
            parse_camera_rig(&rig_json(&m, 0.0)),
            Err(DepthIoError::NonRigid(_))
        ));
    }

    #[test]
    fn reflection_is_rejected() {
        let mut m = IDENTITY;
        m[0] = -1.0;
        assert!(matches!(
            parse_camera_rig(&rig_json(&m, 0.0)),
            Err(DepthIoError::NonRigid(_))
        ));
    }

    #[test]
    fn slightly_perturbed_rotation_is_accepted_and_snapped() {
        let mut m = IDENTITY;
        m[1] = 4e-7;
        let rig = parse_camera_rig(&rig_json(&m, 0.0)).unwrap();
        let r = rig.cam_to_world().fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        assert!(err < 1e-9);
        m[1] = 5e-6;
        assert!(parse_camera_rig(&rig_json(&m, 0.0)).is_err());
    }

    #[test]
    fn missing_field_is_rejected() {
        let text = r#"{"width": 4, "height": 4, "fx": 1.0, "cx": 0.0, "cy": 0.0,
                       "cam_to_world": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#;
        match parse_camera_rig(text) {
            Err(DepthIoError::RigParse(msg)) => assert!(msg.contains("fy")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distortion_terms_default_to_zero() {
        let text = r#"{"width": 4, "height": 4, "fx": 1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0,
                       "cam_to_world": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#;
        let rig = parse_camera_rig(text).unwrap();
        assert_eq!((rig.k1, rig.k2), (0.0, 0.0));
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let rig = parse_camera_rig(&rig_json(&IDENTITY, 0.0)).unwrap();
        let p = pixel_to_image_plane(&rig, rig.cx, rig.cy).unwrap();
        assert_eq!((p.u, p.v, p.w()), (0.0, 0.0, -1.0));
    }

    #[test]
    fn unit_intrinsics_are_identity() {
        let rig = CameraRig::new(4, 4, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, Matrix4::identity()).unwrap();
        let p = pixel_to_image_plane(&rig, 1.0, 0.0).unwrap();
        assert_eq!((p.u, p.v, p.w()), (1.0, 0.0, -1.0));
    }

    /// Independent inversion oracle: Newton iteration on the scalar radius
    /// equation r_d = r (1 + k1 r^2).
    fn newton_undistort_radius(rd: f64, k1: f64) -> f64 {
        let mut r = rd;
        for _ in 0..50 {
            let g = r * (1.0 + k1 * r * r) - rd;
            let dg = 1.0 + 3.0 * k1 * r * r;
            r -= g / dg;
        }
        r
    }

    #[test]
    fn radial_distortion_inverts() {
        let rig = CameraRig::new(
            488,
            450,
            300.0,
            300.0,
            243.5,
            224.5,
            0.1,
            0.0,
            Matrix4::identity(),
        )
        .unwrap();
        let (u, v) = (450.0, 400.0);
        let p = pixel_to_image_plane(&rig, u, v).unwrap();
        let xd = (u - rig.cx) / rig.fx;
        let yd = (v - rig.cy) / rig.fy;
        let rd = (xd * xd + yd * yd).sqrt();
        let r = newton_undistort_radius(rd, 0.1);
        assert!(((p.u * p.u + p.v * p.v).sqrt() - r).abs() < 1e-12);
        // direction is preserved by a radial model
        assert!((p.u * yd - p.v * xd).abs() < 1e-12);
        let (bu, bv) = rig.image_plane_to_pixel(p);
        assert!((bu - u).abs() < 1e-9 * rig.fx && (bv - v).abs() < 1e-9 * rig.fy);
    }

    #[test]
    fn pathological_distortion_errors() {
        let rig = CameraRig::new(
            488,
            450,
            100.0,
            100.0,
            0.0,
            0.0,
            -5.0,
            0.0,
            Matrix4::identity(),
        )
        .unwrap();
        assert!(matches!(
            pixel_to_image_plane(&rig, 480.0, 440.0),
            Err(DepthIoError::NonConvergentUndistortion { .. })
        ));
    }

    proptest! {
        #[test]
        fn frames_round_trip(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut state = seed;
            let depths: Vec<u16> = (0..w * h).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 48) as u16
            }).collect();
            let f = DepthFrame::new(w, h, depths).unwrap();
            prop_assert_eq!(decode_depth_frame(&encode_depth_frame(&f)).unwrap(), f);
        }

        #[test]
        fn undistortion_round_trips(x in -0.7f64..0.7, y in -0.7f64..0.7,
                                    k1 in -0.2f64..0.2, k2 in -0.05f64..0.05) {
            let rig = CameraRig::new(488, 450, 300.0, 300.0, 243.5, 224.5, k1, k2,
                                     Matrix4::identity()).unwrap();
            let r2 = x * x + y * y;
            let f = 1.0 + k1 * r2 + k2 * r2 * r2;
            let (u, v) = (rig.cx + rig.fx * x * f, rig.cy + rig.fy * y * f);
            let p = pixel_to_image_plane(&rig, u, v).unwrap();
            prop_assert!((p.u - x).abs() <= 1e-7);
            prop_assert!((p.v - y).abs() <= 1e-7);
        }

        #[test]
        fn zero_distortion_is_affine(u in -100.0f64..600.0, v in -100.0f64..600.0) {
            let rig = CameraRig::new(488, 450, 310.0, 290.0, 240.0, 220.0, 0.0, 0.0,
                                     Matrix4::identity()).unwrap();
            let p = pixel_to_image_plane(&rig, u, v).unwrap();
            prop_assert_eq!(p.u, (u - 240.0) / 310.0);
            prop_assert_eq!(p.v, (v - 220.0) / 290.0);
        }
    }
}
