mod common;

use common::{cars, scene};
use proptest::prelude::*;
use recalib_core::features::project_labeled;
use recalib_core::geometry::CalibrationSet;
use recalib_core::scene_io::{
    random_scene_spec, read_cloud_bin, read_labels, read_mask_pgm, synth_scene, write_cloud_bin,
    write_labels, write_mask_pgm, CloudPoint, LabeledCloud, RandomSceneConfig, SceneIoError, SegMask,
};

#[test]
fn synthetic_points_land_inside_their_mask() {
    let cfg = RandomSceneConfig {
        classes: vec![1, 2],
        ..Default::default()
    };
    let interested = [1, 2].into_iter().collect();
    for seed in 0..10 {
        let (cloud, mask, calib) = scene(&cfg, seed);
        let proj = project_labeled(&cloud, &calib, &interested);
        let mut total = 0;
        let mut inside = 0;
        for (&class, pts) in &proj.classes {
            for p in pts {
                let (c, r) = p.pixel();
                if c < 0 || r < 0 || c >= mask.width as i64 || r >= mask.height as i64 {
                    continue;
                }
                total += 1;
                if mask.get(c as u32, r as u32) as u16 == class {
                    inside += 1;
                }
            }
        }
        assert!(total > 1000, "seed {seed}: {total} points");
        assert!(
            inside as f64 >= 0.99 * total as f64,
            "seed {seed}: {inside}/{total}"
        );
    }
}

#[test]
fn random_scenes_are_deterministic() {
    let calib = CalibrationSet::kitti_reference();
    let cfg = RandomSceneConfig::default();
    let a = random_scene_spec(&cfg, 42, &calib);
    let b = random_scene_spec(&cfg, 42, &calib);
    assert_eq!(a, b);
    let (ca, ma) = synth_scene(&a, &calib);
    let (cb, mb) = synth_scene(&b, &calib);
    assert_eq!(write_cloud_bin(&ca), write_cloud_bin(&cb));
    assert_eq!(write_labels(&ca.labels), write_labels(&cb.labels));
    assert_eq!(write_mask_pgm(&ma), write_mask_pgm(&mb));
    assert!(!a.object_boxes.is_empty());
    let interested = cars();
    assert!(ca.labels.iter().any(|l| interested.contains(l)));
}

fn arb_mask() -> impl Strategy<Value = SegMask> {
    (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h) as usize).prop_map(move |class_ids| SegMask {
            width: w,
            height: h,
            class_ids,
        })
    })
}

proptest! {
    #[test]
    fn mask_round_trips(mask in arb_mask()) {
        prop_assert_eq!(read_mask_pgm(&write_mask_pgm(&mask)).unwrap(), mask);
    }

    #[test]
    fn cloud_and_labels_round_trip(
        pts in prop::collection::vec((prop::array::uniform4(-1e3f32..1e3), 0u16..300), 0..200),
    ) {
        let cloud = LabeledCloud {
            points: pts
                .iter()
                .map(|(p, _)| CloudPoint::new(p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64))
                .collect(),
            labels: pts.iter().map(|(_, l)| *l).collect(),
        };
        let back = read_cloud_bin(&write_cloud_bin(&cloud)).unwrap();
        prop_assert_eq!(&back.points, &cloud.points);
        prop_assert_eq!(read_labels(&write_labels(&cloud.labels), cloud.len()).unwrap(), cloud.labels);
    }

    #[test]
    fn readers_reject_or_decode_whole_inputs(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        match read_cloud_bin(&bytes) {
            Ok(c) => prop_assert_eq!(c.len() * 16, bytes.len()),
            Err(e) => prop_assert!(matches!(e, SceneIoError::TruncatedFile(_))),
        }
        let expected = bytes.len() / 4;
        match read_labels(&bytes, expected) {
            Ok(l) => prop_assert_eq!(l.len(), expected),
            Err(_) => prop_assert!(bytes.len() % 4 != 0),
        }
        if let Ok(m) = read_mask_pgm(&bytes) {
            prop_assert_eq!(m.class_ids.len(), (m.width * m.height) as usize);
        }
    }
}
