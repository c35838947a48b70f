use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalResult, DEFAULT_THRESHOLDS};
use crate::data::{sample_views, Frame, Sampling, Scene};
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::numerics::ParamStore;
use crate::proxies::ProxyCache;
use crate::transformer::{detect, DetectConfig, ModelConfig, OnlineSession, TokenSchedule};

pub const DEFAULT_VIEW_COUNTS: [usize; 6] = [5, 10, 15, 30, 40, 50];
pub const DEFAULT_BUDGETS: [usize; 4] = [500, 1000, 2000, 4000];

/// Which views of each scene are fed to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewSelection {
    All,
    /// `n` views, capped at the scene's frame count.
    Sample { n: usize, sampling: Sampling, seed: u64 },
}

/// Detections per scene id, plus the number of scenes whose detection failed.
pub struct SceneDetections {
    pub boxes: BTreeMap<String, Vec<Box3D>>,
    pub failures: usize,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs `detect` on every scene; failures are logged and counted.
pub fn detect_scenes(
    scenes: &[Scene],
    weights: &ParamStore,
    cfg: &ModelConfig,
    det: &DetectConfig,
    views: ViewSelection,
    jobs: usize,
) -> Result<SceneDetections> {
    let run = |scene: &Scene| -> Result<Vec<Box3D>> {
        let frames: Vec<&Frame> = match views {
            ViewSelection::All => scene.frames.iter().collect(),
            ViewSelection::Sample { n, sampling, seed } => sample_views(scene, n.min(scene.frames.len()), sampling, seed)?,
        };
        detect(&frames, weights, cfg, det)
    };
    let results: Vec<Result<Vec<Box3D>>> = pool(jobs)?.install(|| scenes.par_iter().map(run).collect());
    let mut boxes = BTreeMap::new();
    let mut failures = 0;
    for (scene, r) in scenes.iter().zip(results) {
        match r {
            Ok(b) => {
                boxes.insert(scene.id.clone(), b);
            }
            Err(e) => {
                log::warn!("scene {}: detection failed: {e}", scene.id);
                failures += 1;
            }
        }
    }
    Ok(SceneDetections { boxes, failures })
}

pub fn scene_ground_truth(scenes: &[Scene]) -> BTreeMap<String, Vec<Box3D>> {
    scenes.iter().map(|s| (s.id.clone(), s.gt.clone())).collect()
}

/// Detects and evaluates a scene suite at both default thresholds.
pub fn evaluate_suite(
    scenes: &[Scene],
    weights: &ParamStore,
    cfg: &ModelConfig,
    det: &DetectConfig,
    views: ViewSelection,
    jobs: usize,
) -> Result<(EvalResult, usize)> {
    let d = detect_scenes(scenes, weights, cfg, det, views, jobs)?;
    let r = evaluate(&d.boxes, &scene_ground_truth(scenes), &DEFAULT_THRESHOLDS, cfg.num_classes)?;
    Ok((r, d.failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `views`, `budget` or the name of an ablation axis.
    pub variable: String,
    /// View count, token budget or arm name.
    pub value: String,
    pub sampling: Option<Sampling>,
    pub map25: f64,
    pub map50: f64,
    pub failures: usize,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "variable,value,sampling,map25,map50,failures";

    pub fn csv(&self) -> String {
        let s = match self.sampling {
            Some(Sampling::Uniform) => "uniform",
            Some(Sampling::Continuous) => "continuous",
            None => "",
        };
        format!("{},{},{},{:.16e},{:.16e},{}", self.variable, self.value, s, self.map25, self.map50, self.failures)
    }
}

/// One row per (view count, sampling mode).
#[allow(clippy::too_many_arguments)]
pub fn run_view_sweep(
    scenes: &[Scene],
    weights: &ParamStore,
    cfg: &ModelConfig,
    view_counts: &[usize],
    modes: &[Sampling],
    det: &DetectConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &sampling in modes {
        for &n in view_counts {
            let (r, failures) = evaluate_suite(scenes, weights, cfg, det, ViewSelection::Sample { n, sampling, seed }, jobs)?;
            rows.push(SweepRow {
                variable: "views".into(),
                value: n.to_string(),
                sampling: Some(sampling),
                map25: r.map25(),
                map50: r.map50(),
                failures,
            });
        }
    }
    Ok(rows)
}

/// One row per scene token budget, all views.
pub fn run_token_sweep(
    scenes: &[Scene],
    weights: &ParamStore,
    cfg: &ModelConfig,
    budgets: &[usize],
    det: &DetectConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &z in budgets {
        let d = DetectConfig { schedule: TokenSchedule::Dynamic { budget: z }, ..det.clone() };
        let (r, failures) = evaluate_suite(scenes, weights, cfg, &d, ViewSelection::All, jobs)?;
        rows.push(SweepRow { variable: "budget".into(), value: z.to_string(), sampling: None, map25: r.map25(), map50: r.map50(), failures });
    }
    Ok(rows)
}

/// Per-frame online detections and their accuracy against the scene ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineFrame {
    pub frame: usize,
    pub boxes: Vec<Box3D>,
    pub map25: f64,
    pub map50: f64,
    pub cached_proxies: usize,
}

pub fn run_online(
    scene: &Scene,
    weights: &ParamStore,
    cfg: &ModelConfig,
    det: &DetectConfig,
    budget: usize,
    stream_length: usize,
) -> Result<Vec<OnlineFrame>> {
    let session = OnlineSession::new(scene.id.clone(), weights, cfg.clone(), budget, stream_length).with_detect_config(det.clone());
    let mut cache = ProxyCache::new();
    let gt = BTreeMap::from([(scene.id.clone(), scene.gt.clone())]);
    let mut out = Vec::with_capacity(scene.frames.len());
    for frame in &scene.frames {
        let boxes = session.step(&mut cache, frame)?;
        let r = evaluate(&BTreeMap::from([(scene.id.clone(), boxes.clone())]), &gt, &DEFAULT_THRESHOLDS, cfg.num_classes)?;
        out.push(OnlineFrame {
            frame: frame.index,
            boxes,
            map25: r.map25(),
            map50: r.map50(),
            cached_proxies: cache.proxy_count(&scene.id),
        });
    }
    Ok(out)
}
