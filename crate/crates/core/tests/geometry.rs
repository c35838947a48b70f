use anyview::geometry::{
    box_iou_3d, fuse_views, nms_3d, unproject_depth, Box3D, CameraIntrinsics, DepthMap, PointCloud, Pose, SENTINEL,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_dev(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

fn cube(c: [f64; 3], s: f64, class_id: usize, score: f64) -> Box3D {
    Box3D::new(c, [s; 3], class_id, score)
}

proptest! {
    #[test]
    fn pose_round_trips(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.1f64..3.1,
        t in prop::array::uniform3(-10.0f64..10.0),
        p in prop::array::uniform3(-10.0f64..10.0),
    ) {
        prop_assume!(axis.iter().map(|a| a * a).sum::<f64>() > 1e-4);
        let pose = Pose::from_axis_angle(axis, angle, t);
        prop_assert!(max_dev(pose.apply_inverse(pose.apply(p)), p) <= 1e-9);
        prop_assert!(max_dev(pose.apply(pose.apply_inverse(p)), p) <= 1e-9);
        prop_assert!(max_dev(pose.inverse().apply(pose.apply(p)), p) <= 1e-9);
        let stored = Pose::from_parts(pose.rotation_row_major(), pose.translation()).unwrap();
        prop_assert!(max_dev(stored.apply(p), pose.apply(p)) <= 1e-12);
    }

    #[test]
    fn projection_inverts_unprojection(u in 0.0f64..320.0, v in 0.0f64..240.0, d in 0.05f64..10.0) {
        let k = CameraIntrinsics::new(288.0, 290.0, 160.5, 119.5, 320, 240).unwrap();
        let (pu, pv, pd) = k.project(k.unproject(u, v, d)).unwrap();
        prop_assert!((pu - u).abs() <= 1e-9 && (pv - v).abs() <= 1e-9 && (pd - d).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = || Box3D::new(
            std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
            std::array::from_fn(|_| rng.random_range(0.1..3.0)),
            0,
            1.0,
        );
        let (x, y) = (b(), b());
        let i = box_iou_3d(&x, &y);
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert_eq!(i, box_iou_3d(&y, &x));
    }
}

#[test]
fn reflection_is_rejected() {
    let r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0];
    assert!(Pose::from_parts(r, [0.0; 3]).is_err());
    let skew = [1.0, 0.01, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert!(Pose::from_parts(skew, [0.0; 3]).is_err());
}

#[test]
fn iou_hand_cases() {
    let a = Box3D::new([1.0, 0.5, 0.5], [2.0, 1.0, 1.0], 0, 1.0);
    assert_eq!(box_iou_3d(&a, &a), 1.0);
    assert_eq!(box_iou_3d(&a, &cube([10.0; 3], 1.0, 0, 1.0)), 0.0);
    // unit overlap of two 2 m³ boxes: 1 / (2 + 2 − 1)
    let b = Box3D::new([2.0, 0.5, 0.5], [2.0, 1.0, 1.0], 0, 1.0);
    assert!((box_iou_3d(&a, &b) - 1.0 / 3.0).abs() <= 1e-15);
    // touching faces do not overlap
    let c = Box3D::new([3.0, 0.5, 0.5], [2.0, 1.0, 1.0], 0, 1.0);
    assert_eq!(box_iou_3d(&a, &c), 0.0);
    // nested: the small volume over the large one
    assert!((box_iou_3d(&cube([0.0; 3], 2.0, 0, 1.0), &cube([0.0; 3], 1.0, 0, 1.0)) - 0.125).abs() <= 1e-15);
}

/// Keep-or-drop by scanning boxes sorted by score against every kept box.
fn nms_oracle(boxes: &[Box3D], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.partial_cmp(&boxes[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let clash = kept.iter().any(|&k| boxes[k].class_id == boxes[i].class_id && box_iou_3d(&boxes[k], &boxes[i]) > thr);
        if !clash {
            kept.push(i);
        }
    }
    kept
}

#[test]
fn nms_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut suppressed = 0;
    for i in 0..300 {
        let n = rng.random_range(0..20);
        let boxes: Vec<Box3D> = (0..n)
            .map(|_| {
                cube(
                    std::array::from_fn(|_| rng.random_range(0..5) as f64 * 0.5),
                    rng.random_range(1..4) as f64 * 0.5,
                    rng.random_range(0..2),
                    rng.random_range(1..=4) as f64 / 4.0,
                )
            })
            .collect();
        let thr = [0.0, 0.25, 0.5][i % 3];
        let kept = nms_3d(&boxes, thr);
        assert_eq!(kept, nms_oracle(&boxes, thr), "instance {i}");
        suppressed += n - kept.len();
    }
    assert!(suppressed > 100);
}

#[test]
fn nms_keeps_other_classes_and_orders_by_score() {
    let boxes = [cube([0.0; 3], 1.0, 0, 0.5), cube([0.0; 3], 1.0, 0, 0.9), cube([0.0; 3], 1.0, 1, 0.7)];
    assert_eq!(nms_3d(&boxes, 0.25), vec![1, 2]);
    // equal scores: the lower index wins
    let tied = [cube([0.0; 3], 1.0, 0, 0.5), cube([0.1; 3], 1.0, 0, 0.5)];
    assert_eq!(nms_3d(&tied, 0.25), vec![0]);
}

#[test]
fn unprojection_samples_valid_pixels_deterministically() {
    let k = CameraIntrinsics::new(4.0, 4.0, 2.0, 1.5, 4, 3).unwrap();
    let mut data = vec![0.0; 12];
    data[5] = 2.0;
    data[6] = 3.0;
    let depth = DepthMap::new(4, 3, data).unwrap();
    let cloud = unproject_depth(&depth, &k, 5, 1).unwrap();
    assert_eq!(cloud.len(), 5);
    for p in cloud.coords() {
        assert!(*p == k.unproject(1.0, 1.0, 2.0) || *p == k.unproject(2.0, 1.0, 3.0));
    }
    assert_eq!(cloud, unproject_depth(&depth, &k, 5, 1).unwrap());
    let empty = DepthMap::new(4, 3, vec![0.0; 12]).unwrap();
    assert!(matches!(unproject_depth(&empty, &k, 5, 1), Err(anyview::Error::EmptyView)));
}

#[test]
fn fusion_skips_sentinels() {
    let a = PointCloud::with_validity(vec![[1.0, 0.0, 0.0], SENTINEL], vec![true, false]).unwrap();
    let b = PointCloud::new(vec![[0.0, 1.0, 0.0]]);
    let poses = [Pose::from_translation([0.0, 0.0, 1.0]), Pose::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [0.0; 3])];
    let fused = fuse_views(&[a, b], &poses).unwrap();
    assert_eq!(fused.len(), 2);
    assert_eq!(fused.coords()[0], [1.0, 0.0, 1.0]);
    assert!(max_dev(fused.coords()[1], [-1.0, 0.0, 0.0]) <= 1e-15);
    assert!(fuse_views(&[PointCloud::empty()], &[]).is_err());
}
