use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_query_coords, farthest_point_sample_coords, PointCloud, Pose, SENTINEL};
use crate::numerics::{Eager, MlpSpec, Ops, ParamStore, Tensor};

/// One set-abstraction layer: FPS centroids, radius grouping, shared MLP over
/// `(relative coords / radius ‖ features)`, max-pool per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaLayerConfig {
    pub radius: f64,
    /// 0 means the count is chosen at call time.
    pub centroid_count: usize,
    pub max_group_size: usize,
    pub mlp: MlpSpec,
}

impl SaLayerConfig {
    pub fn validate(&self, input_feats: usize) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("SA radius must be positive, got {}", self.radius)));
        }
        if self.max_group_size == 0 {
            return Err(Error::Config("SA max_group_size must be at least 1".into()));
        }
        self.mlp.validate()?;
        if self.mlp.in_dim() != input_feats + 3 {
            return Err(Error::Config(format!(
                "SA MLP input width {} must equal feature width {input_feats} + 3",
                self.mlp.in_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    /// Learner runs on camera-frame points; proxies are moved to world after.
    #[default]
    Camera,
    /// Raw points are moved to world before the learner runs.
    World,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub sa1: SaLayerConfig,
    pub sa2: SaLayerConfig,
    #[serde(default)]
    pub coord_mode: CoordMode,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.sa1.validate(0)?;
        self.sa2.validate(self.sa1.mlp.out_dim())?;
        if self.sa1.centroid_count == 0 {
            return Err(Error::Config("first SA layer needs a fixed centroid count".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.sa2.mlp.out_dim()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.sa1.mlp.init(store, "geometry_learner.sa1.mlp", rng);
        self.sa2.mlp.init(store, "geometry_learner.sa2.mlp", rng);
    }
}

/// `max(1, min(floor(Z / N), o_sa1))`.
pub fn dynamic_token_count(budget: usize, views: usize, o_sa1: usize) -> usize {
    (budget / views.max(1)).min(o_sa1).max(1)
}

/// Runs one SA layer. `feats` has one row per input point (or is absent for
/// the first layer). Returns the centroid coordinates and pooled features.
pub fn sa_layer_apply<O: Ops>(
    ops: &mut O,
    coords: &[[f64; 3]],
    valid: &[bool],
    feats: Option<&O::V>,
    cfg: &SaLayerConfig,
    centroid_count: usize,
    prefix: &str,
) -> Result<(Vec<[f64; 3]>, O::V)> {
    if let Some(f) = feats {
        if ops.value(f).rows() != coords.len() {
            return Err(Error::dim("sa_layer_forward", "feature rows differ from point count"));
        }
    }
    let centers_idx = farthest_point_sample_coords(coords, valid, centroid_count)?;
    let centers: Vec<[f64; 3]> = centers_idx.iter().map(|&i| coords[i]).collect();
    let groups = ball_query_coords(&centers, coords, valid, cfg.radius, cfg.max_group_size)?;

    let total: usize = groups.iter().map(Vec::len).sum();
    let mut offsets = Vec::with_capacity(groups.len() + 1);
    let mut members = Vec::with_capacity(total);
    let mut rel = Vec::with_capacity(total * 3);
    offsets.push(0);
    for (c, g) in centers.iter().zip(&groups) {
        for &j in g {
            let p = coords[j];
            rel.extend((0..3).map(|a| (p[a] - c[a]) / cfg.radius));
            members.push(j);
        }
        offsets.push(members.len());
    }
    let rel = ops.constant(Tensor::matrix(total, 3, rel)?);
    let input = match feats {
        Some(f) => {
            let gathered = ops.gather_rows(f, &members)?;
            ops.concat_cols(&[rel, gathered])?
        }
        None => rel,
    };
    let h = cfg.mlp.forward(ops, &input, prefix)?;
    let pooled = ops.segment_max(&h, &offsets)?;
    Ok((centers, pooled))
}

/// Eager single-layer entry point over a [`PointCloud`] with optional features.
pub fn sa_layer_forward(
    pc: &PointCloud,
    cfg: &SaLayerConfig,
    centroid_count: usize,
    weights: &ParamStore,
    prefix: &str,
) -> Result<PointCloud> {
    let mut ops = Eager::new(weights);
    let feats = pc.feats.clone().map(|f| ops.constant(f));
    let (centers, pooled) =
        sa_layer_apply(&mut ops, pc.coords(), pc.valid(), feats.as_ref(), cfg, centroid_count, prefix)?;
    let mut out = PointCloud::new(centers);
    out.feats = Some(pooled.as_ref().clone());
    Ok(out)
}

/// Output of both SA layers for one view.
pub struct LearnerOutput<V> {
    pub sa1_centers: Vec<[f64; 3]>,
    /// Number of points SA layer 2 received.
    pub sa2_input: usize,
    pub centers: Vec<[f64; 3]>,
    pub feats: V,
}

/// The two-layer geometry learner on one view's points.
pub fn geometry_learner_forward<O: Ops>(
    ops: &mut O,
    cfg: &LearnerConfig,
    coords: &[[f64; 3]],
    valid: &[bool],
    tokens: usize,
) -> Result<LearnerOutput<O::V>> {
    let o1 = cfg.sa1.centroid_count;
    let (c1, f1) = sa_layer_apply(ops, coords, valid, None, &cfg.sa1, o1, "geometry_learner.sa1.mlp")?;
    if c1.len() != o1 || ops.value(&f1).rows() != o1 {
        return Err(Error::State(format!("SA layer 2 must receive {o1} points, got {}", c1.len())));
    }
    let all = vec![true; c1.len()];
    let (c2, f2) = sa_layer_apply(ops, &c1, &all, Some(&f1), &cfg.sa2, tokens, "geometry_learner.sa2.mlp")?;
    Ok(LearnerOutput { sa2_input: c1.len(), sa1_centers: c1, centers: c2, feats: f2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    Camera,
    World,
}

/// Per-view proxies: coordinates, features and validity.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneProxySet {
    pub coords: Vec<[f64; 3]>,
    pub feats: Tensor,
    pub valid: Vec<bool>,
    pub view_index: usize,
    pub frame: FrameTag,
}

impl SceneProxySet {
    /// `tokens` sentinel entries with zero features.
    pub fn invalid(tokens: usize, dim: usize, view_index: usize, frame: FrameTag) -> Self {
        Self {
            coords: vec![SENTINEL; tokens],
            feats: Tensor::zeros(&[tokens, dim]),
            valid: vec![false; tokens],
            view_index,
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Extracts `tokens` proxies from one camera-frame view.
///
/// A view without valid points yields an all-invalid set.
pub fn extract_proxies(
    view: &PointCloud,
    weights: &ParamStore,
    cfg: &LearnerConfig,
    tokens: usize,
    pose: &Pose,
    view_index: usize,
) -> Result<SceneProxySet> {
    let dim = cfg.feature_dim();
    let (coords, frame) = match cfg.coord_mode {
        CoordMode::Camera => (view.coords().to_vec(), FrameTag::Camera),
        CoordMode::World => (
            view.coords().iter().zip(view.valid()).map(|(p, &v)| if v { pose.apply(*p) } else { SENTINEL }).collect(),
            FrameTag::World,
        ),
    };
    if view.valid_count() == 0 {
        return Ok(SceneProxySet::invalid(tokens, dim, view_index, frame));
    }
    let mut ops = Eager::new(weights);
    let out = geometry_learner_forward(&mut ops, cfg, &coords, view.valid(), tokens)?;
    let n = out.centers.len();
    Ok(SceneProxySet {
        coords: out.centers,
        feats: out.feats.as_ref().clone(),
        valid: vec![true; n],
        view_index,
        frame,
    })
}

/// Extracts every view of a batch in parallel. Entry `i` equals
/// `extract_proxies(&views[i], .., &poses[i], i)`.
pub fn extract_proxies_batch(
    views: &[PointCloud],
    poses: &[Pose],
    weights: &ParamStore,
    cfg: &LearnerConfig,
    tokens: usize,
) -> Result<Vec<SceneProxySet>> {
    if views.len() != poses.len() {
        return Err(Error::dim("extract_proxies_batch", "one pose per view"));
    }
    views
        .par_iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (v, p))| extract_proxies(v, weights, cfg, tokens, p, i))
        .collect()
}

/// Moves a camera-frame set to the world frame. Features are not touched.
pub fn mix_to_world(proxies: &SceneProxySet, pose: &Pose) -> Result<SceneProxySet> {
    if proxies.frame == FrameTag::World {
        return Err(Error::State(format!("proxies of view {} are already in the world frame", proxies.view_index)));
    }
    let coords = proxies
        .coords
        .iter()
        .zip(&proxies.valid)
        .map(|(p, &v)| if v { pose.apply(*p) } else { SENTINEL })
        .collect();
    Ok(SceneProxySet { coords, frame: FrameTag::World, ..proxies.clone() })
}
