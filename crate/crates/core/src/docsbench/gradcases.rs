//! Seeded finite-difference problems for every differentiable component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::TrainingSample;
use crate::error::Result;
use crate::geometry::{Box3D, PointCloud, Pose};
use crate::numerics::{
    check_selected_gradients, init_layer_norm, init_linear, layer_norm_params, linear_params, Eager, GradCheckRegistry,
    GradCheckReport, Mask, MlpSpec, Ops, ParamStore, Tape, Tensor, CHECK_STEP,
};
use crate::proxies::{sa_layer_apply, CoordMode, LearnerConfig, SaLayerConfig};
use crate::supervision::{detection_loss, match_stages, sample_forward, LossConfig};
use crate::transformer::{
    box_head_apply, cross_attention_mask, decoder_layer, DecoderConfig, EncoderConfig, FourierConfig, ModelConfig,
    PeMode, QueryMode,
};

/// Names of the registered problems.
pub const GRAD_CASES: [&str; 10] = [
    "linear",
    "masked_softmax",
    "layer_norm",
    "mlp",
    "sa_layer",
    "self_attention",
    "decoder_layer",
    "box_head",
    "detection_loss",
    "full_pipeline",
];

/// A scalar objective written once against [`Ops`].
trait Objective {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V>;
}

fn verify(store: &ParamStore, obj: &impl Objective) -> Result<GradCheckReport> {
    let mut tape = Tape::new(store);
    let out = obj.eval(&mut tape)?;
    let grads = tape.backward(out).params();
    check_selected_gradients(
        store,
        &grads,
        |p| {
            let mut ops = Eager::new(p);
            let v = obj.eval(&mut ops)?;
            Ok(ops.value(&v).scalar_value())
        },
        CHECK_STEP,
        |_| false,
    )
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Moves every stored value away from its initialization so that zero biases,
/// unit gains and zeroed layers do not hide gradient paths.
fn perturb(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        store.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
    }
}

/// `Σ (y · r)` for a fixed random column `r`.
fn readout<O: Ops>(ops: &mut O, y: &O::V, r: &Tensor) -> Result<O::V> {
    let r = ops.constant(r.clone());
    let p = ops.matmul(y, &r, false)?;
    Ok(ops.sum(&p))
}

fn readout_vector(rng: &mut impl Rng, dim: usize) -> Tensor {
    random_matrix(rng, dim, 1, 1.0)
}

/// Random mask with every row keeping at least one column.
fn random_mask(rng: &mut impl Rng, rows: usize, cols: usize) -> Mask {
    let mut keep: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
    for r in 0..rows {
        let c = rng.random_range(0..cols);
        keep[r * cols + c] = true;
    }
    Mask::new(rows, cols, keep).unwrap()
}

/// Small architecture whose every registry entry is exercised by the full
/// pipeline check.
pub fn tiny_model() -> ModelConfig {
    let d = 4;
    ModelConfig {
        points_per_view: 24,
        learner: LearnerConfig {
            sa1: SaLayerConfig { radius: 0.6, centroid_count: 6, max_group_size: 4, mlp: MlpSpec::new(vec![3, 4, 4]) },
            sa2: SaLayerConfig { radius: 1.2, centroid_count: 0, max_group_size: 4, mlp: MlpSpec::new(vec![7, 4, d]) },
            coord_mode: CoordMode::Camera,
        },
        encoder: EncoderConfig {
            num_layers: 1,
            radii: vec![1.5],
            model_dim: d,
            heads: 2,
            ffn_dim: 6,
            pe_mode: PeMode::MlpFourier,
        },
        decoder: DecoderConfig { num_layers: 2, num_queries: 3, query_mode: QueryMode::Global, model_dim: d, heads: 2, ffn_dim: 6 },
        fourier: FourierConfig { bands: 1, max_freq: 1.0 },
        num_classes: 3,
        train_tokens: 3,
    }
}

fn subset(store: &ParamStore, prefixes: &[&str]) -> ParamStore {
    let mut out = ParamStore::new();
    for (n, t) in store.iter() {
        if prefixes.iter().any(|p| n.starts_with(p)) {
            out.insert(n, t.clone());
        }
    }
    out
}

struct Linear(Tensor);
impl Objective for Linear {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let x = ops.param("x")?;
        let y = linear_params(ops, &x, "lin")?;
        readout(ops, &y, &self.0)
    }
}

fn linear_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 5, 4, 1.0));
    init_linear(&mut store, "lin", 4, 3, &mut rng);
    perturb(&mut store, &mut rng, 0.3);
    verify(&store, &Linear(readout_vector(&mut rng, 3)))
}

struct Softmax(Mask, Tensor);
impl Objective for Softmax {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let x = ops.param("x")?;
        let y = ops.masked_softmax(&x, &self.0)?;
        readout(ops, &y, &self.1)
    }
}

fn masked_softmax_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 4, 6, 2.0));
    let mask = random_mask(&mut rng, 4, 6);
    verify(&store, &Softmax(mask, readout_vector(&mut rng, 6)))
}

struct Norm(Tensor);
impl Objective for Norm {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let x = ops.param("x")?;
        let y = layer_norm_params(ops, &x, "ln")?;
        readout(ops, &y, &self.0)
    }
}

fn layer_norm_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 4, 5, 1.5));
    init_layer_norm(&mut store, "ln", 5);
    perturb(&mut store, &mut rng, 0.3);
    verify(&store, &Norm(readout_vector(&mut rng, 5)))
}

struct Mlp(MlpSpec, Tensor);
impl Objective for Mlp {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let x = ops.param("x")?;
        let y = self.0.forward(ops, &x, "mlp")?;
        readout(ops, &y, &self.1)
    }
}

fn mlp_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(vec![4, 6, 5, 3]);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 5, 4, 1.0));
    spec.init(&mut store, "mlp", &mut rng);
    perturb(&mut store, &mut rng, 0.3);
    verify(&store, &Mlp(spec, readout_vector(&mut rng, 3)))
}

struct Sa {
    coords: Vec<[f64; 3]>,
    cfg: SaLayerConfig,
    r: Tensor,
}
impl Objective for Sa {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let f = ops.param("feats")?;
        let valid = vec![true; self.coords.len()];
        let (_, y) = sa_layer_apply(ops, &self.coords, &valid, Some(&f), &self.cfg, 4, "sa")?;
        readout(ops, &y, &self.r)
    }
}

/// Second SA layer shape on a 12-point cloud with 2 input channels.
fn sa_layer_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<[f64; 3]> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let cfg = SaLayerConfig { radius: 0.9, centroid_count: 4, max_group_size: 5, mlp: MlpSpec::new(vec![5, 6, 4]) };
    let mut store = ParamStore::new();
    store.insert("feats", random_matrix(&mut rng, 12, 2, 1.0));
    cfg.mlp.init(&mut store, "sa", &mut rng);
    perturb(&mut store, &mut rng, 0.3);
    verify(&store, &Sa { coords, cfg, r: readout_vector(&mut rng, 4) })
}

struct SelfAttention(Mask, Tensor);
impl Objective for SelfAttention {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let x = ops.param("x")?;
        let (y, _) = crate::transformer::multi_head_attention(ops, &x, &x, &x, &self.0, 2, "attn")?;
        readout(ops, &y, &self.1)
    }
}

fn self_attention_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 5, 4, 1.0));
    for p in ["q", "k", "v", "o"] {
        init_linear(&mut store, &format!("attn.{p}"), 4, 4, &mut rng);
    }
    store.remove("attn.k.bias");
    perturb(&mut store, &mut rng, 0.3);
    let mask = random_mask(&mut rng, 5, 5);
    verify(&store, &SelfAttention(mask, readout_vector(&mut rng, 4)))
}

struct Decoder(Mask, Tensor);
impl Objective for Decoder {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let t = ops.param("tgt")?;
        let qp = ops.param("query_pos")?;
        let keys = ops.param("memory_keys")?;
        let mem = ops.param("memory")?;
        let y = decoder_layer(ops, &t, &qp, &keys, &mem, &self.0, 2, "decoder.layer0")?;
        readout(ops, &y, &self.1)
    }
}

fn decoder_layer_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = tiny_model();
    let mut store = subset(&model.init(seed)?, &["decoder.layer0."]);
    for (name, rows) in [("tgt", 3), ("query_pos", 3), ("memory_keys", 5), ("memory", 5)] {
        store.insert(name, random_matrix(&mut rng, rows, 4, 1.0));
    }
    perturb(&mut store, &mut rng, 0.3);
    let mut valid: Vec<bool> = (0..5).map(|_| rng.random_bool(0.7)).collect();
    valid[rng.random_range(0..5)] = true;
    verify(&store, &Decoder(cross_attention_mask(3, &valid), readout_vector(&mut rng, 4)))
}

struct Head {
    model: ModelConfig,
    queries: Vec<[f64; 3]>,
    r3: Tensor,
    rk: Tensor,
}
impl Objective for Head {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let f = ops.param("feats")?;
        let out = box_head_apply(ops, &self.model, &f, &self.queries)?;
        let a = readout(ops, &out.center, &self.r3)?;
        let b = readout(ops, &out.size, &self.r3)?;
        let c = readout(ops, &out.logits, &self.rk)?;
        let ab = ops.add(&a, &b)?;
        ops.add(&ab, &c)
    }
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

fn box_head_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = tiny_model();
    let mut store = subset(&model.init(seed)?, &["box_head."]);
    store.insert("feats", random_matrix(&mut rng, 3, 4, 1.0));
    perturb(&mut store, &mut rng, 0.3);
    let queries = random_points(&mut rng, 3);
    let (r3, rk) = (readout_vector(&mut rng, 3), readout_vector(&mut rng, model.logits()));
    verify(&store, &Head { model, queries, r3, rk })
}

/// Boxes just beyond every predicted center so that each center residual
/// keeps one sign per axis.
fn boxes_beyond(rng: &mut impl Rng, predicted: &[[f64; 3]], n: usize, classes: usize) -> Vec<Box3D> {
    let mut edge = [f64::NEG_INFINITY; 3];
    for p in predicted {
        (0..3).for_each(|a| edge[a] = edge[a].max(p[a]));
    }
    (0..n)
        .map(|_| {
            let center = std::array::from_fn(|a| edge[a] + rng.random_range(0.05..0.5));
            let size = std::array::from_fn(|_| rng.random_range(0.3..1.5));
            Box3D::new(center, size, rng.random_range(0..classes), 1.0)
        })
        .collect()
}

fn stage_centers<O: Ops>(ops: &O, stages: &[crate::transformer::HeadOutput<O::V>]) -> Vec<[f64; 3]> {
    stages.iter().flat_map(|s| crate::supervision::stage_predictions(ops, s)).map(|p| p.center).collect()
}

struct Loss {
    model: ModelConfig,
    queries: Vec<[f64; 3]>,
    gts: Vec<Box3D>,
    assignments: Vec<Vec<(usize, usize)>>,
    cfg: LossConfig,
}
impl Loss {
    fn stages<O: Ops>(&self, ops: &mut O) -> Result<Vec<crate::transformer::HeadOutput<O::V>>> {
        ["feats0", "feats1"]
            .iter()
            .map(|n| {
                let f = ops.param(n)?;
                box_head_apply(ops, &self.model, &f, &self.queries)
            })
            .collect()
    }
}
impl Objective for Loss {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let stages = self.stages(ops)?;
        Ok(detection_loss(ops, &stages, &self.gts, &self.assignments, &self.cfg, self.model.background())?.0)
    }
}

/// Two decoder stages of three queries against two boxes. The matching is
/// computed once at the base point and held fixed.
fn detection_loss_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = tiny_model();
    let mut store = subset(&model.init(seed)?, &["box_head."]);
    store.insert("feats0", random_matrix(&mut rng, 3, 4, 1.0));
    store.insert("feats1", random_matrix(&mut rng, 3, 4, 1.0));
    perturb(&mut store, &mut rng, 0.3);
    let cfg = LossConfig { no_object_weight: rng.random_range(0.1..1.0), ..LossConfig::default() };
    let mut obj = Loss { queries: random_points(&mut rng, 3), gts: Vec::new(), model, assignments: Vec::new(), cfg };
    let mut ops = Eager::new(&store);
    let stages = obj.stages(&mut ops)?;
    obj.gts = boxes_beyond(&mut rng, &stage_centers(&ops, &stages), 2, obj.model.num_classes);
    obj.assignments = match_stages(&ops, &stages, &obj.gts, &obj.cfg.matching)?;
    verify(&store, &obj)
}

struct Pipeline {
    model: ModelConfig,
    sample: TrainingSample,
    assignments: Vec<Vec<(usize, usize)>>,
    cfg: LossConfig,
}
impl Objective for Pipeline {
    fn eval<O: Ops>(&self, ops: &mut O) -> Result<O::V> {
        let out = sample_forward(ops, &self.model, &self.sample, self.model.train_tokens)?;
        Ok(detection_loss(ops, &out.stages, &self.sample.gt, &self.assignments, &self.cfg, self.model.background())?.0)
    }
}

/// Learner, encoder, decoder, heads and loss on a two-view scene with two
/// boxes.
fn full_pipeline_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = tiny_model();
    model.decoder.num_layers = 1;
    let mut store = model.init(seed)?;
    perturb(&mut store, &mut rng, 0.2);
    let mut clouds = Vec::new();
    let mut poses = Vec::new();
    for _ in 0..2 {
        let pts: Vec<[f64; 3]> = (0..model.points_per_view)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..2.5)])
            .collect();
        clouds.push(PointCloud::new(pts));
        let t = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        poses.push(Pose::from_axis_angle([0.0, 0.0, 1.0], rng.random_range(-0.5..0.5), t));
    }
    let mut sample =
        TrainingSample { clouds, poses, view_valid: vec![true, true], frame_indices: vec![0, 1], gt: Vec::new() };
    let cfg = LossConfig { no_object_weight: 0.5, ..LossConfig::default() };
    let mut ops = Eager::new(&store);
    let out = sample_forward(&mut ops, &model, &sample, model.train_tokens)?;
    sample.gt = boxes_beyond(&mut rng, &stage_centers(&ops, &out.stages), 2, model.num_classes);
    let assignments = match_stages(&ops, &out.stages, &sample.gt, &cfg.matching)?;
    verify(&store, &Pipeline { model, sample, assignments, cfg })
}

/// Registry with every problem of [`GRAD_CASES`].
pub fn gradient_registry() -> GradCheckRegistry {
    let mut reg = GradCheckRegistry::new();
    reg.register("linear", linear_case);
    reg.register("masked_softmax", masked_softmax_case);
    reg.register("layer_norm", layer_norm_case);
    reg.register("mlp", mlp_case);
    reg.register("sa_layer", sa_layer_case);
    reg.register("self_attention", self_attention_case);
    reg.register("decoder_layer", decoder_layer_case);
    reg.register("box_head", box_head_case);
    reg.register("detection_loss", detection_loss_case);
    reg.register("full_pipeline", full_pipeline_case);
    reg
}
