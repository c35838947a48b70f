use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, Scene, FRAME_HEIGHT, FRAME_WIDTH, MAX_FRAMES};
use crate::error::{Error, Result};
use crate::geometry::{boxes_in_view, Box3D, CameraIntrinsics, DepthMap, Pose};

pub const NUM_CLASSES: usize = 18;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "cabinet",
    "bed",
    "chair",
    "sofa",
    "table",
    "door",
    "window",
    "bookshelf",
    "picture",
    "counter",
    "desk",
    "curtain",
    "refrigerator",
    "showercurtain",
    "toilet",
    "sink",
    "bathtub",
    "garbagebin",
];

/// Nominal full extents (x, y, z) in meters and height of the bottom face.
pub const CLASS_SIZES: [([f64; 3], f64); NUM_CLASSES] = [
    ([0.8, 0.5, 1.0], 0.0),
    ([2.0, 1.5, 0.6], 0.0),
    ([0.5, 0.5, 0.9], 0.0),
    ([1.8, 0.9, 0.8], 0.0),
    ([1.2, 0.8, 0.75], 0.0),
    ([0.9, 0.12, 2.0], 0.0),
    ([1.0, 0.12, 1.2], 0.8),
    ([1.0, 0.35, 1.8], 0.0),
    ([0.6, 0.08, 0.5], 1.1),
    ([1.5, 0.6, 0.9], 0.0),
    ([1.2, 0.6, 0.75], 0.0),
    ([1.5, 0.12, 2.0], 0.0),
    ([0.8, 0.7, 1.8], 0.0),
    ([1.0, 0.12, 1.9], 0.0),
    ([0.4, 0.7, 0.8], 0.0),
    ([0.6, 0.5, 0.3], 0.6),
    ([1.6, 0.8, 0.6], 0.0),
    ([0.35, 0.35, 0.5], 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// Circle around the room center, always looking inward.
    Orbit,
    /// Wandering path whose view direction pans one full turn.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Interior extents of the room, floor at z = 0.
    pub room_size: [f64; 3],
    pub object_count: usize,
    /// Objects draw their class from the first `class_count` classes.
    pub class_count: usize,
    pub trajectory: Trajectory,
    pub frame_count: usize,
    pub intrinsics: CameraIntrinsics,
    /// Per-axis multiplicative jitter applied to the nominal class sizes.
    pub size_jitter: f64,
    pub camera_height: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            room_size: [6.0, 5.0, 2.8],
            object_count: 6,
            class_count: NUM_CLASSES,
            trajectory: Trajectory::Orbit,
            frame_count: MAX_FRAMES,
            intrinsics: CameraIntrinsics {
                fx: 288.0,
                fy: 288.0,
                cx: 160.0,
                cy: 120.0,
                width: FRAME_WIDTH,
                height: FRAME_HEIGHT,
            },
            size_jitter: 0.1,
            camera_height: 1.5,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.object_count > 10 {
            return Err(Error::Config(format!("object_count {} outside [0, 10]", self.object_count)));
        }
        if self.class_count == 0 || self.class_count > NUM_CLASSES {
            return Err(Error::Config(format!("class_count {} outside [1, {NUM_CLASSES}]", self.class_count)));
        }
        if self.frame_count == 0 || self.frame_count > MAX_FRAMES {
            return Err(Error::Config(format!("frame_count {} outside [1, {MAX_FRAMES}]", self.frame_count)));
        }
        if self.room_size.iter().any(|s| !(*s >= 2.0)) {
            return Err(Error::Config("room extents must be at least 2 m".into()));
        }
        if !(self.camera_height > 0.0 && self.camera_height < self.room_size[2]) {
            return Err(Error::Config("camera height must lie inside the room".into()));
        }
        if !(0.0..0.5).contains(&self.size_jitter) {
            return Err(Error::Config("size_jitter must lie in [0, 0.5)".into()));
        }
        self.intrinsics.validate()
    }
}

/// Camera at `eye` looking at `target`, z-up world, image y pointing down.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> Result<Pose> {
    let e = Vector3::from(eye);
    let f = (Vector3::from(target) - e).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let right = f.cross(&up);
    if right.norm() < 1e-6 {
        return Err(Error::Generation("viewing direction parallel to the up axis".into()));
    }
    let right = right.normalize();
    let down = f.cross(&right);
    Pose::new(Matrix3::from_columns(&[right, down, f]), e)
}

/// Distance along `dir` at which a ray from `origin` enters `b`, if the
/// origin lies outside the box and the ray hits it.
pub fn ray_box_entry(origin: [f64; 3], dir: [f64; 3], b: &Box3D) -> Option<f64> {
    let lo = b.min_corner();
    let hi = b.max_corner();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let t1 = (lo[a] - origin[a]) / dir[a];
        let t2 = (hi[a] - origin[a]) / dir[a];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

/// Distance along `dir` at which a ray from inside the room leaves it.
pub fn ray_room_exit(origin: [f64; 3], dir: [f64; 3], room: [f64; 3]) -> f64 {
    let mut t = f64::INFINITY;
    for a in 0..3 {
        if dir[a] > 0.0 {
            t = t.min((room[a] - origin[a]) / dir[a]);
        } else if dir[a] < 0.0 {
            t = t.min(-origin[a] / dir[a]);
        }
    }
    t
}

/// Renders z-depth of the room and objects. Also returns, per pixel, the
/// index of the object hit (`None` for walls, floor and ceiling).
pub fn render_depth(
    room: [f64; 3],
    objects: &[Box3D],
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> (DepthMap, Vec<Option<usize>>) {
    let origin = pose.translation();
    let r = pose.rotation_row_major();
    let mut data = Vec::with_capacity(intr.width * intr.height);
    let mut hits = Vec::with_capacity(intr.width * intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            // unit z component, so the ray parameter is the camera z-depth
            let dc = [(u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0];
            let dir = [
                r[0] * dc[0] + r[1] * dc[1] + r[2] * dc[2],
                r[3] * dc[0] + r[4] * dc[1] + r[5] * dc[2],
                r[6] * dc[0] + r[7] * dc[1] + r[8] * dc[2],
            ];
            let mut best = ray_room_exit(origin, dir, room);
            let mut hit = None;
            for (i, b) in objects.iter().enumerate() {
                if let Some(t) = ray_box_entry(origin, dir, b) {
                    if t < best {
                        best = t;
                        hit = Some(i);
                    }
                }
            }
            data.push(best);
            hits.push(hit);
        }
    }
    (DepthMap { width: intr.width, height: intr.height, data }, hits)
}

fn place_objects(p: &SynthParams, rng: &mut ChaCha8Rng) -> Option<Vec<Box3D>> {
    const MARGIN: f64 = 0.1;
    const GAP: f64 = 0.15;
    let mut placed: Vec<Box3D> = Vec::with_capacity(p.object_count);
    for _ in 0..p.object_count {
        let class_id = rng.random_range(0..p.class_count);
        let (nominal, lift) = CLASS_SIZES[class_id];
        let mut size: [f64; 3] =
            std::array::from_fn(|a| nominal[a] * rng.random_range(1.0 - p.size_jitter..=1.0 + p.size_jitter));
        if rng.random_bool(0.5) {
            size.swap(0, 1);
        }
        size[2] = size[2].min(p.room_size[2] - lift - MARGIN);
        let mut ok = None;
        for _ in 0..200 {
            let span = |a: usize| p.room_size[a] - size[a] - 2.0 * MARGIN;
            if span(0) <= 0.0 || span(1) <= 0.0 {
                break;
            }
            let cx = MARGIN + 0.5 * size[0] + rng.random_range(0.0..span(0));
            let cy = MARGIN + 0.5 * size[1] + rng.random_range(0.0..span(1));
            let cand = Box3D::new([cx, cy, lift + 0.5 * size[2]], size, class_id, 1.0);
            let clear = placed.iter().all(|o| {
                (0..2).any(|a| (o.center[a] - cand.center[a]).abs() >= 0.5 * (o.size[a] + cand.size[a]) + GAP)
            });
            if clear {
                ok = Some(cand);
                break;
            }
        }
        placed.push(ok?);
    }
    Some(placed)
}

fn camera_path(p: &SynthParams, objects: &[Box3D], rng: &mut ChaCha8Rng) -> Result<Vec<Pose>> {
    let [w, d, _] = p.room_size;
    let center = [0.5 * w, 0.5 * d];
    let inside_object = |e: [f64; 3]| {
        objects.iter().any(|b| (0..3).all(|a| (e[a] - b.center[a]).abs() <= 0.5 * b.size[a] + 0.2))
    };
    let mut poses = Vec::with_capacity(p.frame_count);
    match p.trajectory {
        Trajectory::Orbit => {
            let radius = 0.3 * w.min(d);
            let phase = rng.random_range(0.0..TAU);
            for i in 0..p.frame_count {
                let th = phase + TAU * i as f64 / p.frame_count as f64;
                let eye = [center[0] + radius * th.cos(), center[1] + radius * th.sin(), p.camera_height];
                let jitter = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
                let target = [center[0] + jitter[0] - 0.4 * radius * th.cos(), center[1] + jitter[1] - 0.4 * radius * th.sin(), 0.3];
                poses.push(look_at(eye, target)?);
            }
        }
        Trajectory::RandomWalk => {
            let margin = 0.6;
            let mut eye = [
                rng.random_range(margin..w - margin),
                rng.random_range(margin..d - margin),
                p.camera_height,
            ];
            let mut heading = rng.random_range(0.0..TAU);
            let mut yaw = rng.random_range(0.0..TAU);
            // the view direction pans one full turn over the sequence
            let pan = TAU / p.frame_count as f64;
            for _ in 0..p.frame_count {
                for _ in 0..50 {
                    let step = 0.12;
                    let next = [eye[0] + step * heading.cos(), eye[1] + step * heading.sin(), eye[2]];
                    let inside = next[0] > margin && next[0] < w - margin && next[1] > margin && next[1] < d - margin;
                    if inside && !inside_object(next) {
                        eye = next;
                        break;
                    }
                    heading += rng.random_range(0.5..2.5);
                }
                heading += rng.random_range(-0.4..0.4);
                yaw += pan * rng.random_range(0.5..1.5);
                let target = [eye[0] + yaw.cos(), eye[1] + yaw.sin(), eye[2] - 0.55];
                poses.push(look_at(eye, target)?);
            }
        }
    }
    Ok(poses)
}

/// Generates a room with axis-aligned objects and renders a depth sequence.
///
/// Every ground-truth box has its center inside at least one frame and is
/// hit by at least one pixel.
pub fn synth_scene(params: &SynthParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 25;
    for _ in 0..ATTEMPTS {
        let Some(objects) = place_objects(params, &mut rng) else { continue };
        let poses = camera_path(params, &objects, &mut rng)?;
        let mut seen_pixels = vec![0usize; objects.len()];
        let mut centered = vec![false; objects.len()];
        let mut frames = Vec::with_capacity(poses.len());
        for (index, pose) in poses.into_iter().enumerate() {
            let (depth, hits) = render_depth(params.room_size, &objects, &params.intrinsics, &pose);
            for h in hits.into_iter().flatten() {
                seen_pixels[h] += 1;
            }
            let frame = Frame { depth, intrinsics: params.intrinsics, pose, index };
            for b in boxes_in_view(&objects, &frame) {
                if let Some(i) = objects.iter().position(|o| *o == b) {
                    centered[i] = true;
                }
            }
            frames.push(frame);
        }
        if seen_pixels.iter().all(|n| *n > 0) && centered.iter().all(|c| *c) {
            return Ok(Scene {
                id: format!("synth-{seed}"),
                class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
                frames,
                gt: objects,
            });
        }
    }
    Err(Error::Generation(format!("could not place {} visible objects after {ATTEMPTS} attempts", params.object_count)))
}
