//! Calibration corruption: per-element Gaussian noise on the extrinsic and
//! point-cloud translation with a compensating extrinsic label.
//!
//! Every corruption records its ground truth. The recorded `true_bias` always
//! points from the clean calibration to the corrupted one; [`BiasSpec::correction`]
//! gives the bias that undoes it.

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_bias, nearest_rotation, CalibrationSet, RigidTransform};
use crate::rng::seeded_rng;
use crate::scene_io::{LabeledCloud, ObjectBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("bad sampling range for component {index}: ({min}, {max})")]
    BadRange { index: usize, min: f64, max: f64 },
    #[error("expected {expected} ranges for this bias form, got {got}")]
    RangeCount { expected: usize, got: usize },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
}

/// Extrinsic perturbation.
///
/// `Additive` holds 12 row-major deltas on `v2c`. `Rigid` holds a rotation
/// vector (radians) followed by a translation (meters), left-composed onto
/// the extrinsic in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "values")]
pub enum BiasSpec {
    #[serde(rename = "additive-12")]
    Additive([f64; 12]),
    #[serde(rename = "rigid-6dof")]
    Rigid([f64; 6]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasForm {
    #[serde(rename = "additive-12")]
    Additive,
    #[serde(rename = "rigid-6dof")]
    Rigid,
}

impl BiasForm {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            BiasForm::Additive => 12,
            BiasForm::Rigid => 6,
        }
    }

    /// Positions of the three translation components in the parameter vector.
    pub fn translation_indices(self) -> [usize; 3] {
        match self {
            BiasForm::Additive => [3, 7, 11],
            BiasForm::Rigid => [3, 4, 5],
        }
    }
}

impl BiasSpec {
    pub fn zero(form: BiasForm) -> Self {
        match form {
            BiasForm::Additive => BiasSpec::Additive([0.0; 12]),
            BiasForm::Rigid => BiasSpec::Rigid([0.0; 6]),
        }
    }

    pub fn form(&self) -> BiasForm {
        match self {
            BiasSpec::Additive(_) => BiasForm::Additive,
            BiasSpec::Rigid(_) => BiasForm::Rigid,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            BiasSpec::Additive(v) => v,
            BiasSpec::Rigid(v) => v,
        }
    }

    /// Builds a bias of `form` from a parameter slice of matching length.
    pub fn from_values(form: BiasForm, values: &[f64]) -> Self {
        match form {
            BiasForm::Additive => {
                let mut v = [0.0; 12];
                v.copy_from_slice(values);
                BiasSpec::Additive(v)
            }
            BiasForm::Rigid => {
                let mut v = [0.0; 6];
                v.copy_from_slice(values);
                BiasSpec::Rigid(v)
            }
        }
    }

    pub fn from_rigid(t: &RigidTransform) -> Self {
        let rv = t.rotation_vector();
        let tr = t.translation;
        BiasSpec::Rigid([rv.x, rv.y, rv.z, tr.x, tr.y, tr.z])
    }

    /// `None` for the additive form.
    pub fn rigid_transform(&self) -> Option<RigidTransform> {
        match self {
            BiasSpec::Rigid(v) => Some(RigidTransform::from_axis_angle(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
            )),
            BiasSpec::Additive(_) => None,
        }
    }

    /// The bias that undoes this one: negation (additive) or inverse (rigid).
    pub fn correction(&self) -> BiasSpec {
        match self {
            BiasSpec::Additive(v) => BiasSpec::Additive(v.map(|x| -x)),
            BiasSpec::Rigid(_) => BiasSpec::from_rigid(&self.rigid_transform().expect("rigid").inverse()),
        }
    }

    /// Exact additive equivalent of this bias relative to `calib_in`.
    pub fn to_additive(&self, calib_in: &CalibrationSet) -> BiasSpec {
        match self {
            BiasSpec::Additive(_) => *self,
            BiasSpec::Rigid(_) => {
                let out = apply_bias(calib_in, self);
                let diff = out.v2c - calib_in.v2c;
                let mut v = [0.0; 12];
                for (k, slot) in v.iter_mut().enumerate() {
                    *slot = diff[(k / 4, k % 4)];
                }
                BiasSpec::Additive(v)
            }
        }
    }

    /// Nearest rigid bias relative to `calib_in`: the rotation block of the
    /// biased extrinsic is projected onto SO(3) (orthogonal Procrustes) and
    /// the translation is matched exactly.
    pub fn to_rigid(&self, calib_in: &CalibrationSet) -> BiasSpec {
        match self {
            BiasSpec::Rigid(_) => *self,
            BiasSpec::Additive(_) => {
                let target = apply_bias(calib_in, self);
                let (r_target, _) = nearest_rotation(&target.extrinsic_rotation());
                let (r_in, _) = nearest_rotation(&calib_in.extrinsic_rotation());
                let r_b = r_target * r_in.transpose();
                let t_b = target.extrinsic_translation() - r_b * calib_in.extrinsic_translation();
                BiasSpec::from_rigid(&RigidTransform::new(r_b, t_b))
            }
        }
    }
}

/// Which matrix receives Gaussian noise. Only the extrinsic is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    Extrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub target: NoiseTarget,
}

impl NoiseSpec {
    pub fn new(sigma: f64, rng_seed: u64) -> Self {
        Self {
            sigma,
            rng_seed,
            target: NoiseTarget::Extrinsic,
        }
    }
}

/// Velodyne-frame offset `(a, b, c)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TranslationSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TranslationSpec {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.a, -self.b, -self.c)
    }
}

/// Adds an independent `N(0, σ²)` draw to each of the 12 extrinsic entries.
/// The returned bias holds the exact deltas that were added.
pub fn gaussian_noise_calib(
    calib: &CalibrationSet,
    spec: &NoiseSpec,
) -> Result<(CalibrationSet, BiasSpec), PerturbationError> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(PerturbationError::BadSigma(spec.sigma));
    }
    if spec.sigma == 0.0 {
        return Ok((*calib, BiasSpec::Additive([0.0; 12])));
    }
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut rng = seeded_rng(spec.rng_seed);
    let mut delta = [0.0; 12];
    for d in delta.iter_mut() {
        *d = normal.sample(&mut rng);
    }
    let bias = BiasSpec::Additive(delta);
    Ok((apply_bias(calib, &bias), bias))
}

/// Shifts every point by `(a, b, c)` and returns the extrinsic label that
/// maps the shifted cloud onto the original pixels: `v2c_new = [R | t − R·(a,b,c)]`.
pub fn translate_cloud_with_label(
    cloud: &LabeledCloud,
    calib: &CalibrationSet,
    t: &TranslationSpec,
) -> (LabeledCloud, CalibrationSet) {
    let offset = t.vector();
    let mut shifted = cloud.clone();
    for p in shifted.points.iter_mut() {
        p.position += offset;
    }
    let r = calib.extrinsic_rotation();
    let mut v2c = calib.v2c;
    v2c.set_column(3, &(calib.extrinsic_translation() - r * offset));
    (shifted, CalibrationSet { v2c, ..*calib })
}

/// Ground-truth bias of a cloud translation, from the compensated label to
/// the unchanged input calibration (rigid form, pure translation `R·(a,b,c)`).
pub fn translation_true_bias(calib: &CalibrationSet, t: &TranslationSpec) -> BiasSpec {
    let shift = calib.extrinsic_rotation() * t.vector();
    BiasSpec::Rigid([0.0, 0.0, 0.0, shift.x, shift.y, shift.z])
}

/// Rotates the LiDAR mount by `rotation_vector` (velodyne frame, radians):
/// `v2c' = [R·M | t]`. Returns the corrupted calibration and the rigid bias
/// that maps the clean calibration onto it.
pub fn rotate_lidar_mount(
    calib: &CalibrationSet,
    rotation_vector: Vector3<f64>,
) -> (CalibrationSet, BiasSpec) {
    let mount = RigidTransform::from_axis_angle(rotation_vector, Vector3::zeros());
    let r = calib.extrinsic_rotation();
    let mut v2c = calib.v2c;
    v2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * mount.rotation));
    let corrupted = CalibrationSet { v2c, ..*calib };
    // Left bias R_b with R_b·R = R·M, so R_b = R·M·R⁻¹ for orthonormal R.
    let (r_clean, _) = nearest_rotation(&r);
    let r_b: Matrix3<f64> = r_clean * mount.rotation * r_clean.transpose();
    let t = calib.extrinsic_translation();
    let bias = RigidTransform::new(r_b, t - r_b * t);
    (corrupted, BiasSpec::from_rigid(&bias))
}

/// Shifts box centers by `(a, b, c)`; extents and yaw unchanged.
pub fn translate_boxes(boxes: &[ObjectBox], t: &TranslationSpec) -> Vec<ObjectBox> {
    boxes
        .iter()
        .map(|b| ObjectBox {
            center: [b.center[0] + t.a, b.center[1] + t.b, b.center[2] + t.c],
            ..*b
        })
        .collect()
}

/// Uniform independent draws per component. `ranges` must have one
/// `(min, max)` per parameter of `form`.
pub fn sample_bias(
    ranges: &[(f64, f64)],
    form: BiasForm,
    rng_seed: u64,
) -> Result<BiasSpec, PerturbationError> {
    if ranges.len() != form.len() {
        return Err(PerturbationError::RangeCount {
            expected: form.len(),
            got: ranges.len(),
        });
    }
    for (index, &(min, max)) in ranges.iter().enumerate() {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(PerturbationError::BadRange { index, min, max });
        }
    }
    let mut rng = seeded_rng(rng_seed);
    let values: Vec<f64> = ranges
        .iter()
        .map(|&(min, max)| {
            if min == max {
                min
            } else {
                rng.random_range(min..max)
            }
        })
        .collect();
    Ok(BiasSpec::from_values(form, &values))
}

/// Corruption record written next to corrupted frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionManifest {
    pub frame_id: String,
    pub corruption_type: CorruptionType,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<TranslationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_deg: Option<[f64; 3]>,
    pub true_bias: BiasSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionType {
    None,
    GaussianNoise,
    PointCloudTranslation,
    MountRotation,
    /// A labelled frame with no record of how it was corrupted.
    Unknown,
}

/// Extrinsic-only difference in row-major order.
pub fn extrinsic_delta(from: &CalibrationSet, to: &CalibrationSet) -> [f64; 12] {
    let diff: Matrix3x4<f64> = to.v2c - from.v2c;
    let mut v = [0.0; 12];
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = diff[(k / 4, k % 4)];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::scene_io::CloudPoint;

    fn cloud(points: &[[f64; 3]]) -> LabeledCloud {
        LabeledCloud {
            points: points
                .iter()
                .map(|p| CloudPoint::new(p[0], p[1], p[2], 0.25))
                .collect(),
            labels: vec![3; points.len()],
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let calib = CalibrationSet::kitti_reference();
        let (noisy, bias) = gaussian_noise_calib(&calib, &NoiseSpec::new(0.0, 7)).unwrap();
        assert_eq!(noisy, calib);
        assert_eq!(bias, BiasSpec::Additive([0.0; 12]));
    }

    #[test]
    fn noise_is_seeded_and_reversible() {
        let calib = CalibrationSet::kitti_reference();
        let spec = NoiseSpec::new(0.01, 99);
        let (a, bias_a) = gaussian_noise_calib(&calib, &spec).unwrap();
        let (b, bias_b) = gaussian_noise_calib(&calib, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(bias_a, bias_b);
        let restored = apply_bias(&a, &bias_a.correction());
        assert!((restored.v2c - calib.v2c).abs().max() <= 1e-15);
        assert_eq!(restored.r0, calib.r0);
        let (c, _) = gaussian_noise_calib(&calib, &NoiseSpec::new(0.01, 100)).unwrap();
        assert_ne!(a, c);
        assert!(gaussian_noise_calib(&calib, &NoiseSpec::new(-1.0, 0)).is_err());
    }

    #[test]
    fn translation_zero_is_identity() {
        let c = cloud(&[[1.0, 2.0, 3.0]]);
        let calib = CalibrationSet::kitti_reference();
        let (c2, calib2) = translate_cloud_with_label(&c, &calib, &TranslationSpec::default());
        assert_eq!(c2, c);
        assert_eq!(calib2, calib);
    }

    #[test]
    fn translation_shifts_points_and_compensates() {
        let c = cloud(&[[1.0, 2.0, 3.0], [10.0, -1.0, 0.5]]);
        let calib = CalibrationSet::kitti_reference();
        let t = TranslationSpec::new(0.0, 0.2, 0.0);
        let (c2, label) = translate_cloud_with_label(&c, &calib, &t);
        assert_eq!(c2.points[0].position, Vector3::new(1.0, 2.2, 3.0));
        assert_eq!(c2.points[0].reflectance, 0.25);
        assert_eq!(c2.labels, c.labels);
        let before = project(&c.positions(), &calib);
        let after = project(&c2.positions(), &label);
        assert_eq!(before.points.len(), after.points.len());
        for (p, q) in before.points.iter().zip(&after.points) {
            assert!((p.u - q.u).abs() < 1e-9 && (p.v - q.v).abs() < 1e-9);
        }
        // the recorded bias maps the label back onto the input calibration
        let bias = translation_true_bias(&calib, &t);
        let back = apply_bias(&label, &bias);
        assert!((back.v2c - calib.v2c).abs().max() < 1e-15);
    }

    #[test]
    fn box_translation_round_trip() {
        let boxes = vec![ObjectBox {
            center: [5.0, 0.0, 0.0],
            half_extents: [2.0, 0.9, 0.75],
            yaw: 0.3,
            class_id: 1,
        }];
        let t = TranslationSpec::new(0.0, 0.2, 0.0);
        let moved = translate_boxes(&boxes, &t);
        assert_eq!(moved[0].center, [5.0, 0.2, 0.0]);
        assert_eq!(moved[0].yaw, 0.3);
        assert_eq!(translate_boxes(&boxes, &TranslationSpec::default()), boxes);
        let t = TranslationSpec::new(0.5, 0.25, -0.125);
        assert_eq!(translate_boxes(&translate_boxes(&boxes, &t), &t.negated()), boxes);
    }

    #[test]
    fn sample_bias_ranges() {
        let zero = sample_bias(&[(0.0, 0.0); 6], BiasForm::Rigid, 1).unwrap();
        assert_eq!(zero, BiasSpec::Rigid([0.0; 6]));
        assert!(matches!(
            sample_bias(&[(1.0, 0.0); 6], BiasForm::Rigid, 1),
            Err(PerturbationError::BadRange { index: 0, .. })
        ));
        assert!(matches!(
            sample_bias(&[(0.0, 1.0); 6], BiasForm::Additive, 1),
            Err(PerturbationError::RangeCount { .. })
        ));
        let ranges = [(-0.1, 0.1); 12];
        assert_eq!(
            sample_bias(&ranges, BiasForm::Additive, 5).unwrap(),
            sample_bias(&ranges, BiasForm::Additive, 5).unwrap()
        );
    }

    #[test]
    fn sampled_translation_y_has_small_mean() {
        let mut ranges = [(0.0, 0.0); 6];
        ranges[4] = (-0.2, 0.2);
        let n = 10_000;
        let mut sum = 0.0;
        for seed in 0..n {
            let b = sample_bias(&ranges, BiasForm::Rigid, seed).unwrap();
            let v = b.values();
            assert!(v[4] >= -0.2 && v[4] < 0.2);
            assert_eq!(v[3], 0.0);
            sum += v[4];
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn mount_rotation_bias_reproduces_corruption() {
        let calib = CalibrationSet::kitti_reference();
        let (corrupted, bias) = rotate_lidar_mount(&calib, Vector3::new(0.0, 0.0, 0.5f64.to_radians()));
        // KITTI's rotation block is orthonormal only to ~1e-7
        let rebuilt = apply_bias(&calib, &bias);
        assert!((rebuilt.v2c - corrupted.v2c).abs().max() < 1e-6);
        let angle = bias.rigid_transform().unwrap().rotation_vector().norm();
        assert!((angle.to_degrees() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn form_conversions() {
        let calib = CalibrationSet::kitti_reference();
        let rigid = BiasSpec::Rigid([0.01, -0.02, 0.005, 0.1, 0.2, -0.05]);
        let additive = rigid.to_additive(&calib);
        let a = apply_bias(&calib, &rigid);
        let b = apply_bias(&calib, &additive);
        assert!((a.v2c - b.v2c).abs().max() < 1e-15);
        let back = additive.to_rigid(&calib);
        for (x, y) in back.values().iter().zip(rigid.values()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        let inv = apply_bias(&a, &rigid.correction());
        assert!((inv.v2c - calib.v2c).abs().max() < 1e-12);
    }

    #[test]
    fn bias_json_shape() {
        let json = serde_json::to_string(&BiasSpec::Rigid([0.0, 0.0, 0.0, 0.0, 0.2, 0.0])).unwrap();
        assert_eq!(
            json,
            r#"{"form":"rigid-6dof","values":[0.0,0.0,0.0,0.0,0.2,0.0]}"#
        );
        let back: BiasSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.form(), BiasForm::Rigid);
    }
}
