use anyview::data::{
    load_scene, look_at, make_sv_samples, online_stream, sample_views, save_scene, synth_scene, Sampling, SynthParams,
    Trajectory,
};
use anyview::geometry::{fuse_views, unproject_depth, Box3D, CameraIntrinsics, Pose};
use anyview::Error;

fn small(objects: usize, frames: usize, trajectory: Trajectory) -> SynthParams {
    SynthParams { object_count: objects, frame_count: frames, trajectory, ..SynthParams::default() }
}

/// Nearest intersection computed face by face: each box face is a bounded
/// rectangle in a plane, and the room is six planes seen from inside.
fn plane_oracle(origin: [f64; 3], dir: [f64; 3], room: [f64; 3], objects: &[Box3D]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..3 {
        for wall in [0.0, room[a]] {
            if dir[a] != 0.0 {
                let t = (wall - origin[a]) / dir[a];
                if t > 0.0 {
                    best = best.min(t);
                }
            }
        }
    }
    for b in objects {
        for a in 0..3 {
            for side in [-0.5, 0.5] {
                let plane = b.center[a] + side * b.size[a];
                if dir[a] == 0.0 {
                    continue;
                }
                let t = (plane - origin[a]) / dir[a];
                if t <= 0.0 {
                    continue;
                }
                let p: Vec<f64> = (0..3).map(|k| origin[k] + t * dir[k]).collect();
                let on_face = (0..3)
                    .filter(|&k| k != a)
                    .all(|k| (p[k] - b.center[k]).abs() <= 0.5 * b.size[k] + 1e-12);
                if on_face {
                    best = best.min(t);
                }
            }
        }
    }
    best
}

#[test]
fn rendered_depth_matches_face_oracle() {
    let params = small(6, 6, Trajectory::Orbit);
    let scene = synth_scene(&params, 11).unwrap();
    for f in &scene.frames {
        let r = f.pose.rotation_row_major();
        for v in (0..240).step_by(7) {
            for u in (0..320).step_by(9) {
                let k = &f.intrinsics;
                let dc = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
                let dir = [
                    r[0] * dc[0] + r[1] * dc[1] + r[2] * dc[2],
                    r[3] * dc[0] + r[4] * dc[1] + r[5] * dc[2],
                    r[6] * dc[0] + r[7] * dc[1] + r[8] * dc[2],
                ];
                let expect = plane_oracle(f.pose.translation(), dir, params.room_size, &scene.gt);
                assert!((f.depth.at(u, v) - expect).abs() <= 1e-6, "pixel ({u},{v})");
            }
        }
    }
}

#[test]
fn single_centered_box_near_face_depth() {
    let b = Box3D::new([3.0, 2.5, 0.5], [1.0, 1.0, 1.0], 0, 1.0);
    let k = CameraIntrinsics::new(288.0, 288.0, 160.0, 120.0, 320, 240).unwrap();
    let pose = look_at([1.5, 2.5, 0.5], [3.0, 2.5, 0.5]).unwrap();
    let (depth, _) = anyview::data::render_depth([6.0, 5.0, 2.8], &[b], &k, &pose);
    let min = depth.data.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((min - 1.0).abs() <= 1e-6, "min depth {min}");
}

#[test]
fn empty_room_has_no_gt() {
    let scene = synth_scene(&small(0, 4, Trajectory::Orbit), 3).unwrap();
    assert!(scene.gt.is_empty());
    assert!(scene.frames.iter().all(|f| f.depth.data.iter().all(|d| *d > 0.0)));
}

#[test]
fn generation_is_deterministic() {
    let p = small(5, 5, Trajectory::RandomWalk);
    assert_eq!(synth_scene(&p, 42).unwrap(), synth_scene(&p, 42).unwrap());
}

#[test]
fn every_box_visible_somewhere() {
    for (seed, traj) in [(1, Trajectory::Orbit), (2, Trajectory::RandomWalk), (3, Trajectory::Orbit)] {
        let scene = synth_scene(&small(8, 20, traj), seed).unwrap();
        let samples = make_sv_samples(&scene);
        for b in &scene.gt {
            assert!(samples.iter().any(|(_, gt)| gt.contains(b)));
        }
        for (_, gt) in &samples {
            assert!(gt.iter().all(|b| scene.gt.contains(b)));
        }
    }
}

#[test]
fn sv_filter_matches_projection_oracle() {
    let scene = synth_scene(&small(8, 10, Trajectory::RandomWalk), 9).unwrap();
    for (f, gt) in make_sv_samples(&scene) {
        let expect: Vec<Box3D> = scene
            .gt
            .iter()
            .filter(|b| {
                // world -> camera by hand with the row-major rotation
                let r = f.pose.rotation_row_major();
                let t = f.pose.translation();
                let d = [b.center[0] - t[0], b.center[1] - t[1], b.center[2] - t[2]];
                let pc = [
                    r[0] * d[0] + r[3] * d[1] + r[6] * d[2],
                    r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
                    r[2] * d[0] + r[5] * d[1] + r[8] * d[2],
                ];
                if pc[2] <= 0.0 {
                    return false;
                }
                let u = f.intrinsics.fx * pc[0] / pc[2] + f.intrinsics.cx;
                let v = f.intrinsics.fy * pc[1] / pc[2] + f.intrinsics.cy;
                (0.0..320.0).contains(&u) && (0.0..240.0).contains(&v)
            })
            .copied()
            .collect();
        assert_eq!(gt, expect);
    }
}

#[test]
fn save_load_round_trip() {
    let scene = synth_scene(&small(4, 5, Trajectory::Orbit), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let back = load_scene(dir.path()).unwrap();
    assert_eq!(back.id, scene.id);
    assert_eq!(back.gt, scene.gt);
    assert_eq!(back.frames.len(), scene.frames.len());
    for (a, b) in scene.frames.iter().zip(&back.frames) {
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.intrinsics, b.intrinsics);
        let worst = a.depth.data.iter().zip(&b.depth.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.0005 + 1e-12);
    }
}

#[test]
fn fifty_frame_scene_loads_fifty_frames() {
    let scene = synth_scene(&small(3, 50, Trajectory::Orbit), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let back = load_scene(dir.path()).unwrap();
    assert_eq!(back.frames.len(), 50);
    assert_eq!(online_stream(&back).count(), 50);
    assert!(online_stream(&back).zip(&back.frames).all(|(a, b)| a == b));
    assert_eq!(sample_views(&back, 5, Sampling::Uniform, 0).unwrap().iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 12, 25, 37, 49]);
}

#[test]
fn reflected_pose_is_rejected_on_load() {
    let scene = synth_scene(&small(1, 2, Trajectory::Orbit), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let cam = dir.path().join("frame_0001.cam.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cam).unwrap()).unwrap();
    for i in 6..9 {
        v["R"][i] = serde_json::json!(-v["R"][i].as_f64().unwrap());
    }
    std::fs::write(&cam, v.to_string()).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");

    std::fs::remove_file(dir.path().join("frame_0000.depth")).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(err.to_string().contains("frame_0000.depth"));
}

#[test]
fn low_resolution_frames_are_resized() {
    let mut scene = synth_scene(&small(2, 2, Trajectory::Orbit), 4).unwrap();
    for f in &mut scene.frames {
        f.depth = f.depth.resize_nearest(160, 120);
        f.intrinsics = f.intrinsics.rescaled(160, 120);
    }
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let back = load_scene(dir.path()).unwrap();
    assert!(back.frames.iter().all(|f| f.depth.width == 320 && f.depth.height == 240));
    assert_eq!(back.frames[0].intrinsics.fx, 288.0);
}

#[test]
fn opposite_views_cover_both_faces() {
    let b = Box3D::new([3.0, 2.5, 0.5], [1.0, 1.0, 1.0], 0, 1.0);
    let k = CameraIntrinsics::new(288.0, 288.0, 160.0, 120.0, 320, 240).unwrap();
    let poses: Vec<Pose> = [[0.8, 2.5, 1.2], [5.2, 2.5, 1.2]]
        .into_iter()
        .map(|e| look_at(e, [3.0, 2.5, 0.5]).unwrap())
        .collect();
    let clouds: Vec<_> = poses
        .iter()
        .map(|p| {
            let (d, _) = anyview::data::render_depth([6.0, 5.0, 2.8], &[b], &k, p);
            unproject_depth(&d, &k, 20_000, 1).unwrap()
        })
        .collect();
    let fused = fuse_views(&clouds, &poses).unwrap();
    let on_box: Vec<[f64; 3]> =
        fused.coords().iter().copied().filter(|p| (0..3).all(|a| (p[a] - b.center[a]).abs() <= 0.5 + 1e-6)).collect();
    let xs = on_box.iter().map(|p| p[0]);
    let lo = xs.clone().fold(f64::INFINITY, f64::min);
    let hi = xs.fold(f64::NEG_INFINITY, f64::max);
    assert!((lo - 2.5).abs() < 1e-6 && (hi - 3.5).abs() < 1e-6, "x extent {lo}..{hi}");
}
