//! Training-time view dropping and global cuboid cropping. Both pad with
//! invalid sentinel points and never change shapes.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, PointCloud, Pose};
use crate::transformer::frame_cloud;

/// Cuboid draws before giving up on a crop.
pub const CUBOID_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub probability: f64,
    pub max_drop_fraction: f64,
    /// Side length as a fraction of the scene extent, drawn per axis.
    pub cuboid_ratio_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { probability: 0.75, max_drop_fraction: 0.5, cuboid_ratio_range: [0.3, 0.85] }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("augment probability {} outside [0, 1]", self.probability)));
        }
        if !(0.0..1.0).contains(&self.max_drop_fraction) {
            return Err(Error::Config(format!("max_drop_fraction {} outside [0, 1)", self.max_drop_fraction)));
        }
        let [lo, hi] = self.cuboid_ratio_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("cuboid ratio range [{lo}, {hi}] must satisfy 0 < lo ≤ hi ≤ 1")));
        }
        Ok(())
    }
}

/// Camera-frame clouds of the views of one scene with their poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<Pose>,
    pub view_valid: Vec<bool>,
    /// Frame index of each view.
    pub frame_indices: Vec<usize>,
    pub gt: Vec<Box3D>,
}

impl TrainingSample {
    pub fn from_frames(frames: &[&Frame], gt: &[Box3D], points: usize, seed: u64) -> Result<Self> {
        let clouds = frames.iter().map(|f| frame_cloud(f, points, seed)).collect::<Result<Vec<_>>>()?;
        let view_valid = clouds.iter().map(|c| c.valid_count() > 0).collect();
        Ok(Self {
            clouds,
            poses: frames.iter().map(|f| f.pose).collect(),
            view_valid,
            frame_indices: frames.iter().map(|f| f.index).collect(),
            gt: gt.to_vec(),
        })
    }

    pub fn views(&self) -> usize {
        self.clouds.len()
    }

    /// World-frame copies of every valid point, view by view.
    pub fn world_points(&self) -> Vec<[f64; 3]> {
        self.clouds
            .iter()
            .zip(&self.poses)
            .zip(&self.view_valid)
            .filter(|(_, v)| **v)
            .flat_map(|((c, pose), _)| c.valid_coords().map(move |p| pose.apply(p)))
            .collect()
    }

    fn drop_view(&mut self, v: usize) {
        self.clouds[v] = PointCloud::invalid(self.clouds[v].len());
        self.view_valid[v] = false;
    }
}

/// Drops a uniformly drawn number of views in `0..=floor(N · max_drop_fraction)`,
/// choosing the subset uniformly. Returns the dropped view positions.
pub fn random_view_drop_traced(sample: &mut TrainingSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<usize> {
    let n = sample.views();
    if n == 0 {
        return Vec::new();
    }
    let max = (n as f64 * cfg.max_drop_fraction).floor() as usize;
    let d = rng.random_range(0..=max);
    let mut dropped: Vec<usize> = index::sample(rng, n, d).into_iter().collect();
    dropped.sort_unstable();
    for &v in &dropped {
        sample.drop_view(v);
    }
    dropped
}

pub fn random_view_drop(mut sample: TrainingSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> TrainingSample {
    random_view_drop_traced(&mut sample, cfg, rng);
    sample
}

/// Draws a cuboid inside the scene extents that contains at least one valid
/// world point.
pub fn draw_cuboid(sample: &TrainingSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Option<([f64; 3], [f64; 3])> {
    let world = sample.world_points();
    let (lo, hi) = crate::geometry::bounds_of(world.iter().copied())?;
    let [rlo, rhi] = cfg.cuboid_ratio_range;
    for _ in 0..CUBOID_ATTEMPTS {
        let mut cmin = [0.0; 3];
        let mut cmax = [0.0; 3];
        for a in 0..3 {
            let ext = hi[a] - lo[a];
            let ratio = if rlo == rhi { rlo } else { rng.random_range(rlo..=rhi) };
            let side = ratio * ext;
            let start = lo[a] + rng.random::<f64>() * (ext - side);
            cmin[a] = start;
            cmax[a] = if ratio >= 1.0 { hi[a] } else { start + side };
        }
        if world.iter().any(|p| inside(p, &cmin, &cmax)) {
            return Some((cmin, cmax));
        }
    }
    None
}

fn inside(p: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> bool {
    (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
}

/// Invalidates every point whose world position lies outside `[lo, hi]`.
/// Surviving camera-frame coordinates are left untouched.
pub fn crop_to_cuboid(sample: &mut TrainingSample, lo: [f64; 3], hi: [f64; 3]) {
    for ((cloud, pose), &vv) in sample.clouds.iter_mut().zip(&sample.poses).zip(&sample.view_valid) {
        if !vv {
            continue;
        }
        for i in 0..cloud.len() {
            if cloud.valid()[i] && !inside(&pose.apply(cloud.coords()[i]), &lo, &hi) {
                cloud.invalidate(i);
            }
        }
    }
    for v in 0..sample.views() {
        if sample.view_valid[v] && sample.clouds[v].valid_count() == 0 {
            sample.view_valid[v] = false;
        }
    }
}

/// Returns the cuboid that was applied, or `None` for a no-op.
pub fn global_random_cuboid_traced(
    sample: &mut TrainingSample,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Option<([f64; 3], [f64; 3])> {
    let (lo, hi) = draw_cuboid(sample, cfg, rng)?;
    crop_to_cuboid(sample, lo, hi);
    Some((lo, hi))
}

pub fn global_random_cuboid(mut sample: TrainingSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> TrainingSample {
    global_random_cuboid_traced(&mut sample, cfg, rng);
    sample
}

/// Which augmentations fired on one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentTrace {
    pub view_drop: bool,
    pub cuboid: bool,
}

/// View drop then cuboid, each with probability `cfg.probability`.
pub fn apply_augmentations_traced(
    sample: &mut TrainingSample,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> AugmentTrace {
    let mut trace = AugmentTrace::default();
    if rng.random_bool(cfg.probability) {
        random_view_drop_traced(sample, cfg, rng);
        trace.view_drop = true;
    }
    if rng.random_bool(cfg.probability) {
        global_random_cuboid_traced(sample, cfg, rng);
        trace.cuboid = true;
    }
    trace
}

pub fn apply_augmentations(mut sample: TrainingSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> TrainingSample {
    apply_augmentations_traced(&mut sample, cfg, rng);
    sample
}
