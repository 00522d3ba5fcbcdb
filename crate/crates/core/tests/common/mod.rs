#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use proptest::prelude::*;
use recalib_core::features::ClassSet;
use recalib_core::geometry::{project, CalibrationSet, RigidTransform};
use recalib_core::scene_io::{
    random_scene_spec, synth_scene, CloudPoint, LabeledCloud, RandomSceneConfig, SegMask,
};

pub fn cars() -> ClassSet {
    [1].into_iter().collect()
}

pub fn scene(cfg: &RandomSceneConfig, seed: u64) -> (LabeledCloud, SegMask, CalibrationSet) {
    let calib = CalibrationSet::kitti_reference();
    let spec = random_scene_spec(cfg, seed, &calib);
    let (cloud, mask) = synth_scene(&spec, &calib);
    (cloud, mask, calib)
}

pub fn unit_quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
        })
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// A camera-like calibration: a rotation close to the KITTI velodyne-to-camera
/// axes swap, a small rectifying rotation and a pinhole with random intrinsics.
pub fn valid_calibration() -> impl Strategy<Value = CalibrationSet> {
    (
        prop::array::uniform3(-0.2f64..0.2),
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(-0.02f64..0.02),
        (
            300.0f64..1000.0,
            300.0f64..1000.0,
            200.0f64..800.0,
            100.0f64..300.0,
        ),
        prop::array::uniform3(-50.0f64..50.0),
    )
        .prop_map(|(rv, t, r0v, (fx, fy, cx, cy), pt)| {
            let swap = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
            let small = RigidTransform::from_axis_angle(Vector3::from(rv), Vector3::zeros()).rotation;
            let r = small * swap;
            let mut v2c = Matrix3x4::zeros();
            v2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            v2c.set_column(3, &Vector3::from(t));
            let r0 = RigidTransform::from_axis_angle(Vector3::from(r0v), Vector3::zeros()).rotation;
            #[rustfmt::skip]
            let p = Matrix3x4::new(
                fx, 0.0, cx, pt[0],
                0.0, fy, cy, pt[1],
                0.0, 0.0, 1.0, pt[2] * 1e-4,
            );
            CalibrationSet::new(v2c, r0, p)
        })
}

/// Points on one horizontal line at a fixed range, and a mask that is a
/// full-width stripe around their image row.
pub fn stripe_scene() -> (LabeledCloud, SegMask, CalibrationSet) {
    let calib = CalibrationSet::kitti_reference();
    let mut cloud = LabeledCloud::default();
    for i in 0..400 {
        cloud
            .points
            .push(CloudPoint::new(15.0, -5.0 + i as f64 * 0.025, -0.5, 0.0));
        cloud.labels.push(1);
    }
    let proj = project(&cloud.positions(), &calib);
    let (lo, hi) = proj
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.v), hi.max(p.v))
        });
    let mut mask = SegMask::new(1242, 375);
    for row in (lo.round() as u32 - 2)..=(hi.round() as u32 + 2) {
        for col in 0..mask.width {
            mask.set(col, row, 1);
        }
    }
    (cloud, mask, calib)
}
