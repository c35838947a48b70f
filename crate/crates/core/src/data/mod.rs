//! Scenes, frames, the on-disk layout, the synthetic room generator and the
//! benchmark view samplers.

mod io;
mod synth;

pub use io::{load_scene, save_scene, DEPTH_SCALE_MM};
pub use synth::{
    look_at, ray_box_entry, ray_room_exit, render_depth, synth_scene, SynthParams, Trajectory, CLASS_NAMES, CLASS_SIZES,
    NUM_CLASSES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boxes_in_view, Box3D, CameraIntrinsics, DepthMap, Pose};

/// Raster size every frame is brought to on ingestion.
pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;
/// Upper bound on frames per scene.
pub const MAX_FRAMES: usize = 50;

/// One depth view with its calibration and camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub class_names: Vec<String>,
    pub frames: Vec<Frame>,
    pub gt: Vec<Box3D>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyScene);
        }
        if self.frames.len() > MAX_FRAMES {
            return Err(Error::Validation(format!("{} frames exceed the {MAX_FRAMES}-frame limit", self.frames.len())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::Validation(format!("frame {i} carries index {}", f.index)));
            }
        }
        for b in &self.gt {
            b.validate(NUM_CLASSES)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Uniform,
    Continuous,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "continuous" => Ok(Self::Continuous),
            other => Err(Error::Config(format!("unknown sampling '{other}' (uniform|continuous)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkMode {
    #[serde(rename = "sv")]
    SingleView,
    #[serde(rename = "mv")]
    MultiView,
    #[serde(rename = "online")]
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub mode: BenchmarkMode,
    pub view_count: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

/// Frame indices selected by [`sample_views`].
pub fn view_indices(frame_count: usize, n: usize, sampling: Sampling, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > frame_count {
        return Err(Error::Validation(format!("cannot sample {n} views from {frame_count} frames")));
    }
    Ok(match sampling {
        Sampling::Uniform if n == 1 => vec![0],
        Sampling::Uniform => {
            let span = (frame_count - 1) as f64 / (n - 1) as f64;
            (0..n).map(|i| (i as f64 * span).round() as usize).collect()
        }
        Sampling::Continuous => {
            let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..=frame_count - n);
            (start..start + n).collect()
        }
    })
}

pub fn sample_views(scene: &Scene, n: usize, sampling: Sampling, seed: u64) -> Result<Vec<&Frame>> {
    Ok(view_indices(scene.frames.len(), n, sampling, seed)?.into_iter().map(|i| &scene.frames[i]).collect())
}

/// One single-view sample per frame, with the ground truth visible in it.
pub fn make_sv_samples(scene: &Scene) -> Vec<(&Frame, Vec<Box3D>)> {
    scene.frames.iter().map(|f| (f, boxes_in_view(&scene.gt, f))).collect()
}

/// Frames in index order.
pub fn online_stream(scene: &Scene) -> impl Iterator<Item = &Frame> {
    scene.frames.iter()
}
