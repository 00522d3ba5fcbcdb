//! Matrix and rigid-transform algebra, KITTI calibration text I/O and the
//! velodyne-to-pixel projection.
//!
//! Points are transformed as column vectors internally: a velodyne point `X`
//! lands in the rectified camera frame at `r0 · v2c · [X; 1]` and in pixel
//! space at `p · [cam; 1]`. In the row-vector form used by KITTI tooling this
//! is `[X, 1] · v2cᵀ · r0ᵀ` followed by `[cam, 1] · pᵀ`; the two are the same
//! numbers, only the layout differs.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3, Vector4};
use thiserror::Error;

use crate::perturbation::BiasSpec;

/// Points with camera-frame depth at or below this are dropped by [`project`].
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Orthonormality tolerance used by [`rotation_angle_deg`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("calibration is missing key `{0}`")]
    MissingKey(String),
    #[error("malformed number at line {line}, column {column}")]
    MalformedNumber { line: usize, column: usize },
    #[error("key `{key}` expects {expected} values, got {got}")]
    WrongArity {
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not a rotation (orthonormality residual {residual:e})")]
    NotARotation { residual: f64 },
}

/// The V2C / R0 / P triple that maps velodyne points to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSet {
    /// Velodyne-to-camera extrinsic `[R | t]`, meters.
    pub v2c: Matrix3x4<f64>,
    /// Rectifying rotation.
    pub r0: Matrix3<f64>,
    /// Camera projection, pixels.
    pub p: Matrix3x4<f64>,
}

impl CalibrationSet {
    pub fn new(v2c: Matrix3x4<f64>, r0: Matrix3<f64>, p: Matrix3x4<f64>) -> Self {
        Self { v2c, r0, p }
    }

    /// V2C = [I | 0], R0 = I, P = [I | 0].
    pub fn identity() -> Self {
        Self {
            v2c: Matrix3x4::identity(),
            r0: Matrix3::identity(),
            p: Matrix3x4::identity(),
        }
    }

    /// Calibration of KITTI object frame 000000 (camera 2), a realistic
    /// default for synthetic scenes.
    pub fn kitti_reference() -> Self {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01,
            0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
            0.0, 0.0, 1.0, 2.745884e-03,
        );
        #[rustfmt::skip]
        let r0 = Matrix3::new(
            9.999239e-01, 9.837760e-03, -7.445048e-03,
            -9.869795e-03, 9.999421e-01, -4.278459e-03,
            7.402527e-03, 4.351614e-03, 9.999631e-01,
        );
        #[rustfmt::skip]
        let v2c = Matrix3x4::new(
            7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
            1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
            9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01,
        );
        Self { v2c, r0, p }
    }

    pub fn is_finite(&self) -> bool {
        self.v2c
            .iter()
            .chain(self.r0.iter())
            .chain(self.p.iter())
            .all(|v| v.is_finite())
    }

    /// Rotation block of the extrinsic (not necessarily orthonormal for
    /// corrupted sets).
    pub fn extrinsic_rotation(&self) -> Matrix3<f64> {
        self.v2c.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn extrinsic_translation(&self) -> Vector3<f64> {
        self.v2c.column(3).into_owned()
    }

    /// `r0 · v2c`, velodyne to rectified camera frame.
    pub fn rectified_extrinsic(&self) -> Matrix3x4<f64> {
        self.r0 * self.v2c
    }
}

/// A rotation plus translation, acting as `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation vector (axis × angle, radians) plus translation.
    pub fn from_axis_angle(rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_scaled_axis(rotation_vector).into_inner();
        Self {
            rotation,
            translation,
        }
    }

    /// Intrinsic roll/pitch/yaw about x, y, z (radians).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        Self {
            rotation,
            translation,
        }
    }

    /// Splits a 3×4 `[R | t]` without checking `R`.
    pub fn from_matrix3x4(m: &Matrix3x4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.column(3).into_owned(),
        }
    }

    pub fn to_matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.translation);
        m
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotation vector (axis × angle) of the rotation block.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn determinant(&self) -> f64 {
        self.rotation.determinant()
    }
}

/// Nearest rotation to `m` in the Frobenius sense (orthogonal Procrustes),
/// and the Frobenius distance between the two.
pub fn nearest_rotation(m: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    let r = u * correction * v_t;
    let residual = (m - r).norm();
    (r, residual)
}

/// Max-entry residual of `m·mᵀ − I`.
pub fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m * m.transpose() - Matrix3::identity()).abs().max()
}

/// Geodesic angle between two rotations, degrees.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Result<f64, GeometryError> {
    for m in [a, b] {
        let residual = orthonormality_residual(m);
        if residual.is_nan() || residual > ROTATION_TOLERANCE || m.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation { residual });
        }
    }
    // arccos((tr(aᵀb) − 1) / 2), evaluated as atan2(sin, cos) so that
    // near-identical rotations do not lose half their digits
    let m = a.transpose() * b;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    Ok(sin.atan2(cos).to_degrees())
}

/// A velodyne point projected into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    /// Column, pixels.
    pub u: f64,
    /// Row, pixels.
    pub v: f64,
    /// Rectified camera-frame z, meters.
    pub depth: f64,
    pub source_index: usize,
}

impl PixelPoint {
    /// Integer pixel (column, row), rounding half away from zero.
    pub fn pixel(&self) -> (i64, i64) {
        (self.u.round() as i64, self.v.round() as i64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projection {
    pub points: Vec<PixelPoint>,
    /// Points removed by the depth (and optional image-bounds) filter.
    pub dropped: usize,
}

/// Velodyne → pixel map with the two matrix products folded once.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    cam_from_velo: Matrix3x4<f64>,
    p: Matrix3x4<f64>,
    clip: Option<(u32, u32)>,
}

impl Projector {
    pub fn new(calib: &CalibrationSet) -> Self {
        Self {
            cam_from_velo: calib.rectified_extrinsic(),
            p: calib.p,
            clip: None,
        }
    }

    /// Additionally drop points whose rounded pixel falls outside a
    /// `width × height` image.
    pub fn with_clip(mut self, width: u32, height: u32) -> Self {
        self.clip = Some((width, height));
        self
    }

    /// Projects a single point, `None` when filtered.
    #[inline]
    pub fn project_point(&self, x: &Vector3<f64>, source_index: usize) -> Option<PixelPoint> {
        let cam = self.cam_from_velo * Vector4::new(x.x, x.y, x.z, 1.0);
        if cam.z <= DEPTH_EPSILON {
            return None;
        }
        let h = self.p * Vector4::new(cam.x, cam.y, cam.z, 1.0);
        let point = PixelPoint {
            u: h.x / h.z,
            v: h.y / h.z,
            depth: cam.z,
            source_index,
        };
        if let Some((w, hgt)) = self.clip {
            let (col, row) = point.pixel();
            if col < 0 || row < 0 || col >= w as i64 || row >= hgt as i64 {
                return None;
            }
        }
        Some(point)
    }

    /// Projects `(source_index, point)` pairs, keeping input order.
    pub fn project_indexed<'a, I>(&self, points: I) -> Projection
    where
        I: IntoIterator<Item = (usize, &'a Vector3<f64>)>,
    {
        let mut out = Projection::default();
        for (i, x) in points {
            match self.project_point(x, i) {
                Some(p) => out.points.push(p),
                None => out.dropped += 1,
            }
        }
        out
    }
}

/// Projects a cloud; `source_index` is the position in `cloud_xyz`.
pub fn project(cloud_xyz: &[Vector3<f64>], calib: &CalibrationSet) -> Projection {
    Projector::new(calib).project_indexed(cloud_xyz.iter().enumerate())
}

/// Applies an extrinsic bias. Additive biases are added entrywise to `v2c`;
/// rigid biases left-compose: `[R | t] ↦ [R_b·R | R_b·t + t_b]`.
pub fn apply_bias(calib_in: &CalibrationSet, bias: &BiasSpec) -> CalibrationSet {
    let v2c = match bias {
        BiasSpec::Additive(delta) => calib_in.v2c + Matrix3x4::from_row_slice(delta),
        BiasSpec::Rigid(_) => {
            let b = bias.rigid_transform().expect("rigid form");
            let r = calib_in.extrinsic_rotation();
            let t = calib_in.extrinsic_translation();
            RigidTransform::new(b.rotation * r, b.rotation * t + b.translation).to_matrix3x4()
        }
    };
    CalibrationSet { v2c, ..*calib_in }
}

const KEY_P: &str = "P2";
const KEY_R0: &str = "R0_rect";
const KEY_V2C: &str = "Tr_velo_to_cam";

fn parse_values(rest: &str, line: usize, offset: usize) -> Result<Vec<f64>, GeometryError> {
    let mut values = Vec::new();
    let mut pos = 0;
    for token in rest.split_whitespace() {
        let start = rest[pos..].find(token).map(|i| i + pos).unwrap_or(pos);
        pos = start + token.len();
        let v: f64 = token.parse().map_err(|_| GeometryError::MalformedNumber {
            line,
            column: offset + start + 1,
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Parses KITTI-style calibration text (`P2:`, `R0_rect:`, `Tr_velo_to_cam:`
/// lines, row-major). Other keys are ignored.
pub fn parse_calibration(text: &str) -> Result<CalibrationSet, GeometryError> {
    let mut p = None;
    let mut r0 = None;
    let mut v2c = None;
    for (idx, raw) in text.lines().enumerate() {
        let Some((key, rest)) = raw.split_once(':') else {
            continue;
        };
        let key = key.trim();
        let expected = match key {
            KEY_P | KEY_V2C => 12,
            KEY_R0 => 9,
            _ => continue,
        };
        let values = parse_values(rest, idx + 1, raw.len() - rest.len())?;
        if values.len() != expected {
            return Err(GeometryError::WrongArity {
                key: key.to_string(),
                expected,
                got: values.len(),
            });
        }
        match key {
            KEY_P => p = Some(Matrix3x4::from_row_slice(&values)),
            KEY_R0 => r0 = Some(Matrix3::from_row_slice(&values)),
            _ => v2c = Some(Matrix3x4::from_row_slice(&values)),
        }
    }
    Ok(CalibrationSet {
        p: p.ok_or_else(|| GeometryError::MissingKey(KEY_P.into()))?,
        r0: r0.ok_or_else(|| GeometryError::MissingKey(KEY_R0.into()))?,
        v2c: v2c.ok_or_else(|| GeometryError::MissingKey(KEY_V2C.into()))?,
    })
}

fn write_row_major<'a>(out: &mut String, key: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(key);
    out.push(':');
    for v in values {
        // 17 significant digits round-trip every f64 exactly.
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

/// Inverse of [`parse_calibration`]; keys in the order P2, R0_rect,
/// Tr_velo_to_cam.
pub fn serialize_calibration(calib: &CalibrationSet) -> String {
    let mut out = String::new();
    write_row_major(&mut out, KEY_P, calib.p.transpose().iter());
    write_row_major(&mut out, KEY_R0, calib.r0.transpose().iter());
    write_row_major(&mut out, KEY_V2C, calib.v2c.transpose().iter());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY_TEXT: &str = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n\
        R0_rect: 1 0 0 0 1 0 0 0 1\n\
        Tr_velo_to_cam: 1 0 0 0  0 1 0 0  0 0 1 0\n";

    #[test]
    fn parses_identity_calibration() {
        let calib = parse_calibration(IDENTITY_TEXT).unwrap();
        assert_eq!(calib, CalibrationSet::identity());
    }

    #[test]
    fn line_order_and_unknown_keys_do_not_matter() {
        let text = "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\nP0: 1 2 3\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\nP2: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert_eq!(parse_calibration(text).unwrap(), CalibrationSet::identity());
    }

    #[test]
    fn short_r0_is_wrong_arity() {
        let text = IDENTITY_TEXT.replace("R0_rect: 1 0 0 0 1 0 0 0 1", "R0_rect: 1 0 0 0 1 0 0 0");
        assert_eq!(
            parse_calibration(&text),
            Err(GeometryError::WrongArity {
                key: "R0_rect".into(),
                expected: 9,
                got: 8
            })
        );
    }

    #[test]
    fn missing_key_and_bad_number() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
        assert_eq!(
            parse_calibration(text),
            Err(GeometryError::MissingKey("Tr_velo_to_cam".into()))
        );
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 x 0\n";
        assert_eq!(
            parse_calibration(text),
            Err(GeometryError::MalformedNumber { line: 1, column: 25 })
        );
    }

    #[test]
    fn unit_pinhole_projection() {
        let calib = CalibrationSet::identity();
        let proj = project(
            &[Vector3::new(0.5, -0.25, 5.0), Vector3::new(0.0, 0.0, -1.0)],
            &calib,
        );
        assert_eq!(proj.points.len(), 1);
        assert_eq!(proj.dropped, 1);
        let p = proj.points[0];
        assert!((p.u - 0.1).abs() < 1e-15);
        assert!((p.v + 0.05).abs() < 1e-15);
        assert_eq!(p.depth, 5.0);
        assert_eq!(p.source_index, 0);
    }

    #[test]
    fn clip_drops_out_of_image_points() {
        let calib = CalibrationSet::identity();
        let projector = Projector::new(&calib).with_clip(10, 10);
        assert!(projector.project_point(&Vector3::new(5.0, 5.0, 1.0), 0).is_some());
        assert!(projector
            .project_point(&Vector3::new(-5.0, 5.0, 1.0), 0)
            .is_none());
        assert!(projector.project_point(&Vector3::new(9.6, 5.0, 1.0), 0).is_none());
    }

    #[test]
    fn bias_identities() {
        let calib = CalibrationSet::kitti_reference();
        assert_eq!(apply_bias(&calib, &BiasSpec::Additive([0.0; 12])), calib);
        assert_eq!(apply_bias(&calib, &BiasSpec::Rigid([0.0; 6])), calib);
        let mut delta = [0.0; 12];
        delta[3] = 0.1;
        let out = apply_bias(&calib, &BiasSpec::Additive(delta));
        let diff = out.v2c - calib.v2c;
        for r in 0..3 {
            for c in 0..4 {
                if (r, c) == (0, 3) {
                    assert!((diff[(r, c)] - 0.1).abs() < 1e-15);
                } else {
                    assert_eq!(diff[(r, c)], 0.0);
                }
            }
        }
        assert_eq!(out.r0, calib.r0);
        assert_eq!(out.p, calib.p);
    }

    #[test]
    fn rotation_angle_basics() {
        let i = Matrix3::identity();
        assert_eq!(rotation_angle_deg(&i, &i).unwrap(), 0.0);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.21f64.to_radians()).into_inner();
        assert!((rotation_angle_deg(&i, &rz).unwrap() - 0.21).abs() < 1e-9);
        assert!((rotation_angle_deg(&rz, &i).unwrap() - 0.21).abs() < 1e-9);
        let mut bad = i;
        bad[(0, 1)] = 0.01;
        assert!(matches!(
            rotation_angle_deg(&bad, &i),
            Err(GeometryError::NotARotation { .. })
        ));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotation_angle_deg(&reflect, &i).is_err());
    }

    #[test]
    fn rigid_compose_inverse_is_identity() {
        let t = RigidTransform::from_euler(0.3, -1.1, 2.0, Vector3::new(1.0, -2.0, 0.5));
        assert!((t.determinant() - 1.0).abs() < 1e-9);
        assert!(orthonormality_residual(&t.rotation) < 1e-9);
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation.abs().max() < 1e-9);
        let rv = Vector3::new(0.1, 0.2, -0.3);
        let t2 = RigidTransform::from_axis_angle(rv, Vector3::zeros());
        assert!((t2.rotation_vector() - rv).abs().max() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let r = RigidTransform::from_euler(0.1, 0.2, 0.3, Vector3::zeros()).rotation;
        let (near, residual) = nearest_rotation(&r);
        assert!(residual < 1e-12);
        assert!((near - r).abs().max() < 1e-12);
        let (near, residual) = nearest_rotation(&(r * 1.01));
        assert!((near - r).abs().max() < 1e-12);
        assert!(residual > 0.0);
    }

    #[test]
    fn serialize_uses_fixed_key_order() {
        let text = serialize_calibration(&CalibrationSet::identity());
        let keys: Vec<_> = text.lines().map(|l| l.split(':').next().unwrap()).collect();
        assert_eq!(keys, ["P2", "R0_rect", "Tr_velo_to_cam"]);
        assert!(text.starts_with("P2: 1.0000000000000000e0 0.0000000000000000e0"));
    }
}
