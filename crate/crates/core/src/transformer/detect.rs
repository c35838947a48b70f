use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, QueryMode};
use super::layers::{box_head_apply, decoder_apply, encoder_apply, head_predictions, query_embedding, BoxPrediction, HeadOutput};
use super::pe::SceneBounds;
use crate::data::{Frame, MAX_FRAMES};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample_coords, nms_3d, unproject_depth, Box3D, PointCloud, DEFAULT_NMS_IOU};
use crate::numerics::{Eager, Ops, ParamStore, Tensor};
use crate::proxies::{dynamic_token_count, extract_proxies, mix_to_world, FrameTag, ProxyCache, SceneProxySet};

/// Default expected stream length for the online token schedule.
pub const DEFAULT_STREAM_LENGTH: usize = 50;

/// Proxies per view: derived from a scene budget and the view count, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSchedule {
    Dynamic { budget: usize },
    Fixed(usize),
}

impl TokenSchedule {
    pub fn tokens(&self, views: usize, o_sa1: usize) -> usize {
        match *self {
            Self::Dynamic { budget } => dynamic_token_count(budget, views, o_sa1),
            Self::Fixed(t) => t.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub schedule: TokenSchedule,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Base seed for per-frame point sampling.
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { schedule: TokenSchedule::Dynamic { budget: 2000 }, score_threshold: 0.05, nms_iou: DEFAULT_NMS_IOU, seed: 0 }
    }
}

/// Sampling seed of one frame. Depends only on the base seed and the frame
/// index, never on the position in the input list.
pub fn frame_seed(base: u64, frame_index: usize) -> u64 {
    let mut z = base ^ (frame_index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One view after proxy extraction: world-frame proxies and the view's valid
/// world-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewProxies {
    pub proxies: SceneProxySet,
    pub points: Vec<[f64; 3]>,
}

/// Camera-frame point cloud of a frame; a frame without depth yields an
/// all-invalid cloud.
pub fn frame_cloud(frame: &Frame, points: usize, seed: u64) -> Result<PointCloud> {
    match unproject_depth(&frame.depth, &frame.intrinsics, points, frame_seed(seed, frame.index)) {
        Err(Error::EmptyView) => Ok(PointCloud::invalid(points)),
        other => other,
    }
}

/// Unprojects one frame and extracts its world-frame proxies.
pub fn prepare_view(frame: &Frame, weights: &ParamStore, cfg: &ModelConfig, tokens: usize, seed: u64) -> Result<ViewProxies> {
    let cloud = frame_cloud(frame, cfg.points_per_view, seed)?;
    let set = extract_proxies(&cloud, weights, &cfg.learner, tokens, &frame.pose, frame.index)?;
    let proxies = match set.frame {
        FrameTag::Camera => mix_to_world(&set, &frame.pose)?,
        FrameTag::World => set,
    };
    let points = cloud.valid_coords().map(|p| frame.pose.apply(p)).collect();
    Ok(ViewProxies { proxies, points })
}

/// Object query coordinates and their initial embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub coords: Vec<[f64; 3]>,
    pub embeds: Tensor,
}

fn query_coords(
    mode: QueryMode,
    count: usize,
    points: &[[f64; 3]],
    proxy_coords: &[[f64; 3]],
    proxy_valid: &[bool],
) -> Result<Vec<[f64; 3]>> {
    let (coords, valid): (&[[f64; 3]], Vec<bool>) = match mode {
        QueryMode::Global => (points, vec![true; points.len()]),
        QueryMode::Proxy => (proxy_coords, proxy_valid.to_vec()),
    };
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyScene);
    }
    Ok(farthest_point_sample_coords(coords, &valid, count)?.into_iter().map(|i| coords[i]).collect())
}

/// Samples `count` query positions and embeds them through the query MLP.
/// `points` are the fused valid world points of the scene.
pub fn generate_queries(
    points: &[[f64; 3]],
    proxies: &[SceneProxySet],
    count: usize,
    mode: QueryMode,
    cfg: &ModelConfig,
    weights: &ParamStore,
) -> Result<QuerySet> {
    let (pc, pv) = concat_coords(proxies);
    let coords = query_coords(mode, count, points, &pc, &pv)?;
    let bounds = scene_bounds(points, &pc, &pv)?;
    let mut ops = Eager::new(weights);
    let embeds = query_embedding(&mut ops, cfg, &coords, &bounds)?;
    Ok(QuerySet { coords, embeds: embeds.as_ref().clone() })
}

fn concat_coords(proxies: &[SceneProxySet]) -> (Vec<[f64; 3]>, Vec<bool>) {
    let coords = proxies.iter().flat_map(|p| p.coords.iter().copied()).collect();
    let valid = proxies.iter().flat_map(|p| p.valid.iter().copied()).collect();
    (coords, valid)
}

/// Bounds of the scene points, falling back to valid proxy coordinates.
pub fn scene_bounds(points: &[[f64; 3]], proxy_coords: &[[f64; 3]], proxy_valid: &[bool]) -> Result<SceneBounds> {
    if !points.is_empty() {
        return SceneBounds::from_points(points);
    }
    SceneBounds::from_points(proxy_coords.iter().zip(proxy_valid).filter(|(_, v)| **v).map(|(c, _)| c))
}

/// Head outputs of the decoder stages for one scene.
pub struct SceneOutput<V> {
    pub query_coords: Vec<[f64; 3]>,
    /// One entry per decoder layer, or only the last when requested.
    pub stages: Vec<HeadOutput<V>>,
}

/// Encoder, queries, decoder and heads over concatenated world-frame proxy
/// tokens. Shared by batch, online and training paths.
pub fn scene_forward<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    feats: &O::V,
    coords: &[[f64; 3]],
    valid: &[bool],
    points: &[[f64; 3]],
    all_stages: bool,
) -> Result<SceneOutput<O::V>> {
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyScene);
    }
    let bounds = scene_bounds(points, coords, valid)?;
    let memory = encoder_apply(ops, cfg, feats, coords, valid, &bounds)?;
    let qc = query_coords(cfg.decoder.query_mode, cfg.decoder.num_queries, points, coords, valid)?;
    let qpos = query_embedding(ops, cfg, &qc, &bounds)?;
    let layers = decoder_apply(ops, cfg, &qpos, &memory, valid)?;
    let chosen: Vec<&O::V> = if all_stages { layers.iter().collect() } else { layers.last().into_iter().collect() };
    let mut stages = Vec::with_capacity(chosen.len());
    for l in chosen {
        stages.push(box_head_apply(ops, cfg, l, &qc)?);
    }
    Ok(SceneOutput { query_coords: qc, stages })
}

/// Final-stage predictions for a set of prepared views.
pub fn predict_views(
    views: &[(&SceneProxySet, &[[f64; 3]])],
    cfg: &ModelConfig,
    weights: &ParamStore,
) -> Result<Vec<BoxPrediction>> {
    let coords: Vec<[f64; 3]> = views.iter().flat_map(|v| v.0.coords.iter().copied()).collect();
    let valid: Vec<bool> = views.iter().flat_map(|v| v.0.valid.iter().copied()).collect();
    let points: Vec<[f64; 3]> = views.iter().flat_map(|v| v.1.iter().copied()).collect();
    if !valid.iter().any(|v| *v) {
        return Ok(Vec::new());
    }
    let mut ops = Eager::new(weights);
    let parts: Vec<_> = views.iter().map(|v| ops.constant(v.0.feats.clone())).collect();
    let feats = if parts.len() == 1 { parts[0].clone() } else { ops.concat_rows(&parts)? };
    let out = scene_forward(&mut ops, cfg, &feats, &coords, &valid, &points, false)?;
    let last = out.stages.last().ok_or_else(|| Error::State("decoder produced no stages".into()))?;
    Ok(head_predictions(&last.center, &last.size, &last.logits))
}

/// Score threshold then per-class NMS. Boxes come back in selection order.
pub fn postprocess(preds: &[BoxPrediction], score_threshold: f64, nms_iou: f64) -> Vec<Box3D> {
    let candidates: Vec<Box3D> = preds
        .iter()
        .filter_map(|p| {
            let (class_id, score) = p.best_class();
            (score >= score_threshold).then(|| Box3D::new(p.center, p.size, class_id, score))
        })
        .collect();
    nms_3d(&candidates, nms_iou).into_iter().map(|i| candidates[i]).collect()
}

/// Detects boxes in the world frame from any number of views.
pub fn detect(frames: &[&Frame], weights: &ParamStore, cfg: &ModelConfig, det: &DetectConfig) -> Result<Vec<Box3D>> {
    if frames.is_empty() {
        return Err(Error::Validation("detect needs at least one frame".into()));
    }
    if frames.len() > MAX_FRAMES {
        log::warn!("{} views exceed the {MAX_FRAMES}-view design limit", frames.len());
    }
    let tokens = det.schedule.tokens(frames.len(), cfg.learner.sa1.centroid_count);
    let views = frames.iter().map(|f| prepare_view(f, weights, cfg, tokens, det.seed)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = views.iter().map(|v| (&v.proxies, v.points.as_slice())).collect();
    let preds = predict_views(&refs, cfg, weights)?;
    Ok(postprocess(&preds, det.score_threshold, det.nms_iou))
}

/// Incremental detection over a growing frame stream.
///
/// Every frame is extracted once with the token count implied by the
/// declared stream length and kept in the cache.
pub struct OnlineSession<'w> {
    pub stream: String,
    weights: &'w ParamStore,
    cfg: ModelConfig,
    det: DetectConfig,
    tokens: usize,
}

impl<'w> OnlineSession<'w> {
    pub fn new(stream: impl Into<String>, weights: &'w ParamStore, cfg: ModelConfig, budget: usize, stream_length: usize) -> Self {
        let tokens = dynamic_token_count(budget, stream_length, cfg.learner.sa1.centroid_count);
        let det = DetectConfig { schedule: TokenSchedule::Fixed(tokens), ..DetectConfig::default() };
        Self { stream: stream.into(), weights, cfg, det, tokens }
    }

    pub fn with_detect_config(mut self, det: DetectConfig) -> Self {
        self.det = DetectConfig { schedule: TokenSchedule::Fixed(self.tokens), ..det };
        self
    }

    /// Batch configuration that reproduces this session's outputs.
    pub fn batch_config(&self) -> &DetectConfig {
        &self.det
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn step(&self, cache: &mut ProxyCache, frame: &Frame) -> Result<Vec<Box3D>> {
        detect_online_step(cache, &self.stream, frame, self.weights, &self.cfg, &self.det)
    }
}

/// Extracts the new frame, caches it and detects over every cached frame.
/// `det.schedule` decides the new frame's token count with one view.
pub fn detect_online_step(
    cache: &mut ProxyCache,
    stream: &str,
    frame: &Frame,
    weights: &ParamStore,
    cfg: &ModelConfig,
    det: &DetectConfig,
) -> Result<Vec<Box3D>> {
    if let Some(last) = cache.last_index(stream) {
        if frame.index <= last {
            return Err(Error::Ordering { stream: stream.to_string(), last, got: frame.index });
        }
    }
    let tokens = det.schedule.tokens(1, cfg.learner.sa1.centroid_count);
    let view = prepare_view(frame, weights, cfg, tokens, det.seed)?;
    cache.put_entry(stream, frame.index, view.proxies, view.points)?;
    let entries = cache.entries(stream, frame.index)?;
    let refs: Vec<_> = entries.iter().map(|e| (e.proxies.as_ref(), e.points.as_slice())).collect();
    let preds = predict_views(&refs, cfg, weights)?;
    Ok(postprocess(&preds, det.score_threshold, det.nms_iou))
}
