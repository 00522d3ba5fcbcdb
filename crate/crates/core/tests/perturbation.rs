mod common;

use common::valid_calibration;
use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;
use recalib_core::geometry::{apply_bias, project, CalibrationSet};
use recalib_core::perturbation::{
    gaussian_noise_calib, sample_bias, translate_boxes, translate_cloud_with_label, BiasForm, BiasSpec,
    NoiseSpec, TranslationSpec,
};
use recalib_core::scene_io::{CloudPoint, LabeledCloud, ObjectBox};

fn cloud_of(pts: &[[f64; 3]]) -> LabeledCloud {
    LabeledCloud {
        points: pts
            .iter()
            .map(|p| CloudPoint::new(p[0], p[1], p[2], 0.0))
            .collect(),
        labels: vec![1; pts.len()],
    }
}

#[test]
fn centimeter_noise_has_matching_spread() {
    let calib = CalibrationSet::kitti_reference();
    let mut draws = Vec::with_capacity(100_008);
    let mut seed = 0;
    while draws.len() < 100_000 {
        let (_, bias) = gaussian_noise_calib(&calib, &NoiseSpec::new(0.01, seed)).unwrap();
        draws.extend_from_slice(bias.values());
        seed += 1;
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.01).abs() <= 0.02 * 0.01, "std {std}");
}

#[test]
fn symmetric_translation_range_has_small_mean() {
    let mut ranges = [(0.0, 0.0); 6];
    ranges[4] = (-0.2, 0.2);
    let mean = (0..10_000)
        .map(|s| sample_bias(&ranges, BiasForm::Rigid, s).unwrap().values()[4])
        .sum::<f64>()
        / 10_000.0;
    assert!(mean.abs() < 0.01, "{mean}");
    assert_eq!(
        sample_bias(&ranges, BiasForm::Rigid, 7),
        sample_bias(&ranges, BiasForm::Rigid, 7)
    );
}

fn dyadic() -> impl Strategy<Value = f64> {
    (-4096i32..4096).prop_map(|k| k as f64 / 1024.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn translated_cloud_with_label_reprojects_identically(
        calib in valid_calibration(),
        pts in prop::collection::vec(prop::array::uniform3(-40.0f64..40.0), 1..200),
        t in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let cloud = cloud_of(&pts);
        let spec = TranslationSpec::new(t[0], t[1], t[2]);
        let (moved, label) = translate_cloud_with_label(&cloud, &calib, &spec);
        for (a, b) in moved.points.iter().zip(&cloud.points) {
            prop_assert_eq!(a.position, b.position + Vector3::from(t));
        }
        let before = project(&cloud.positions(), &calib);
        let after = project(&moved.positions(), &label);
        let kept: Vec<usize> = before.points.iter().map(|p| p.source_index).collect();
        let kept_after: Vec<usize> = after.points.iter().map(|p| p.source_index).collect();
        // points within float noise of the depth cut may flip sides
        let marginal = |i: usize| {
            let [x, y, z] = pts[i];
            let cam = calib.rectified_extrinsic() * Vector4::new(x, y, z, 1.0);
            (cam.z - 1e-6).abs() < 1e-9
        };
        for i in kept.iter().filter(|i| !kept_after.contains(i)).chain(kept_after.iter().filter(|i| !kept.contains(i))) {
            prop_assert!(marginal(*i));
        }
        for a in &after.points {
            // nearer than 10 cm the depth round-off is amplified without bound
            if let Some(b) = before.points.iter().find(|b| b.source_index == a.source_index && b.depth >= 0.1) {
                let tol = |x: f64| 1e-9 * (x.abs() / 1e3).max(1.0);
                prop_assert!((a.u - b.u).abs() <= tol(b.u), "u {} vs {}", a.u, b.u);
                prop_assert!((a.v - b.v).abs() <= tol(b.v), "v {} vs {}", a.v, b.v);
            }
        }
    }

    #[test]
    fn recorded_noise_restores_clean_extrinsic(
        calib in valid_calibration(),
        sigma in 0.0f64..0.05,
        seed in any::<u64>(),
    ) {
        let (noisy, bias) = gaussian_noise_calib(&calib, &NoiseSpec::new(sigma, seed)).unwrap();
        prop_assert!(matches!(bias, BiasSpec::Additive(_)));
        let restored = apply_bias(&noisy, &bias.correction());
        prop_assert!((restored.v2c - calib.v2c).abs().max() <= 1e-15);
        prop_assert_eq!(restored.r0, calib.r0);
        prop_assert_eq!(restored.p, calib.p);
    }

    #[test]
    fn box_translation_and_its_negation_cancel(
        centers in prop::collection::vec(prop::array::uniform3(dyadic()), 0..8),
        t in prop::array::uniform3(dyadic()),
    ) {
        let boxes: Vec<ObjectBox> = centers
            .iter()
            .map(|&center| ObjectBox { center, half_extents: [2.0, 0.9, 0.75], yaw: 0.1, class_id: 1 })
            .collect();
        let spec = TranslationSpec::new(t[0], t[1], t[2]);
        prop_assert_eq!(translate_boxes(&translate_boxes(&boxes, &spec), &spec.negated()), boxes);
    }
}
