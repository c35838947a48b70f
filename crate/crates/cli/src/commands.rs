use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use anyview::data::{load_scene, sample_views, save_scene, synth_scene, Frame, Sampling, Scene, SynthParams, CLASS_NAMES, NUM_CLASSES};
use anyview::docsbench::{run_acceptance, selects, Status, CRITERIA};
use anyview::evalkit::{
    evaluate, evaluate_suite, run_online, run_token_sweep, run_view_sweep, scene_ground_truth, EvalResult, SweepRow,
    DEFAULT_BUDGETS, DEFAULT_THRESHOLDS, DEFAULT_VIEW_COUNTS,
};
use anyview::geometry::Box3D;
use anyview::numerics::ParamStore;
use anyview::proxies::CoordMode;
use anyview::supervision::{train_checkpointed, write_loss_csv};
use anyview::transformer::{detect as detect_frames, ModelConfig, PeMode, QueryMode};

use crate::config::RunConfig;

/// A failure reported with the numerical exit status.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// 3 for numerical failures, 2 for everything else that reaches `main`.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<anyview::Error>() {
            return match err {
                anyview::Error::Numerical(_) | anyview::Error::Divergence { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

/// Detection output of `detect`, keyed by scene id. Also the input of `eval`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub scenes: BTreeMap<String, Vec<Box3D>>,
}

#[derive(Serialize)]
struct Timing {
    total_seconds: f64,
    scenes: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ManifestEntry {
    id: String,
    seed: u64,
    dir: String,
}

#[derive(Serialize)]
struct Manifest {
    params: SynthParams,
    scenes: Vec<ManifestEntry>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Expands each path: a scene directory is taken as is, any other directory
/// contributes its scene subdirectories in name order.
fn scene_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("meta.json").is_file() {
            out.push(p.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("meta.json").is_file())
            .collect();
        if found.is_empty() {
            bail!(anyview::Error::Validation(format!("{} holds no scene directories", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    let mut seen = BTreeMap::new();
    for dir in scene_dirs(paths)? {
        let scene = load_scene(&dir).with_context(|| format!("loading scene {}", dir.display()))?;
        scene.validate().with_context(|| format!("validating scene {}", dir.display()))?;
        if let Some(prev) = seen.insert(scene.id.clone(), dir.clone()) {
            bail!(anyview::Error::Validation(format!(
                "scene id '{}' appears in both {} and {}",
                scene.id,
                prev.display(),
                dir.display()
            )));
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

fn load_weights(path: &Path) -> Result<(ParamStore, ModelConfig)> {
    let w = ParamStore::load(path).with_context(|| format!("loading weights {}", path.display()))?;
    let cfg = ModelConfig::from_weights(&w).with_context(|| format!("weights {}", path.display()))?;
    Ok((w, cfg))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Scene `i` uses seed `seed + i` and lands in `scene_{i:04}`.
pub fn synth(cfg: RunConfig, a: SynthArgs) -> Result<()> {
    cfg.echo(&a.out)?;
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for i in 0..a.count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let dir = format!("scene_{i:04}");
        let made = synth_scene(&cfg.data, seed).and_then(|s| save_scene(&s, &a.out.join(&dir)).map(|()| s.id));
        match made {
            Ok(id) => entries.push(ManifestEntry { id, seed, dir }),
            Err(e) => {
                log::error!("{dir} (seed {seed}): {e}");
                failures.push(format!("{dir} (seed {seed}): {e}"));
            }
        }
    }
    let written = entries.len();
    write_json(&a.out.join("manifest.json"), &Manifest { params: cfg.data.clone(), scenes: entries })?;
    if !failures.is_empty() {
        bail!("{} of {} scenes failed: {}", failures.len(), a.count, failures.join("; "));
    }
    println!("wrote {written} scenes to {}", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct DetectArgs {
    /// Scene directory, or a directory of scene directories; repeatable.
    #[arg(long = "scene", required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    /// Views per scene; every frame when omitted.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    sampling: Option<Sampling>,
    /// Scene token budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn scene_frames<'s>(scene: &'s Scene, cfg: &RunConfig) -> Result<Vec<&'s Frame>> {
    Ok(match cfg.eval.views {
        None => scene.frames.iter().collect(),
        Some(n) => sample_views(scene, n, cfg.eval.sampling, cfg.seed)?,
    })
}

/// Writes `detections.json` (boxes only, so repeated runs match bytewise)
/// and `timing.json`.
pub fn detect(mut cfg: RunConfig, a: DetectArgs, jobs: usize) -> Result<()> {
    if a.views.is_some() {
        cfg.eval.views = a.views;
    }
    if let Some(s) = a.sampling {
        cfg.eval.sampling = s;
    }
    if let Some(z) = a.budget {
        cfg.eval.budget = z;
    }
    let scenes = load_scenes(&a.scenes)?;
    let (weights, model) = load_weights(&a.weights)?;
    cfg.model = model;
    let det = cfg.detect_config();
    let start = Instant::now();
    let results: Vec<(f64, Result<Vec<Box3D>>)> = thread_pool(jobs)?.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let t = Instant::now();
                let r = scene_frames(scene, &cfg).and_then(|f| Ok(detect_frames(&f, &weights, &cfg.model, &det)?));
                (t.elapsed().as_secs_f64(), r)
            })
            .collect()
    });
    let total_seconds = start.elapsed().as_secs_f64();
    let mut boxes = BTreeMap::new();
    let mut timing = BTreeMap::new();
    for (scene, (secs, r)) in scenes.iter().zip(results) {
        let b = r.with_context(|| format!("detection failed on scene '{}'", scene.id))?;
        boxes.insert(scene.id.clone(), b);
        timing.insert(scene.id.clone(), secs);
    }
    cfg.echo(&a.out)?;
    let count: usize = boxes.values().map(Vec::len).sum();
    write_json(&a.out.join("detections.json"), &DetectionsFile { scenes: boxes })?;
    write_json(&a.out.join("timing.json"), &Timing { total_seconds, scenes: timing })?;
    println!("{count} boxes over {} scenes in {total_seconds:.2} s", scenes.len());
    Ok(())
}

#[derive(Args)]
pub struct OnlineArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    /// Expected stream length used for the per-frame token count.
    #[arg(long)]
    stream_length: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Writes `frames.json` (one detection list per frame) and `curve.csv`.
pub fn online(mut cfg: RunConfig, a: OnlineArgs) -> Result<()> {
    if let Some(z) = a.budget {
        cfg.eval.budget = z;
    }
    if let Some(n) = a.stream_length {
        cfg.eval.stream_length = n;
    }
    let scene = load_scene(&a.scene).with_context(|| format!("loading scene {}", a.scene.display()))?;
    scene.validate()?;
    let (weights, model) = load_weights(&a.weights)?;
    cfg.model = model;
    let frames = run_online(&scene, &weights, &cfg.model, &cfg.detect_config(), cfg.eval.budget, cfg.eval.stream_length)?;
    cfg.echo(&a.out)?;
    write_json(&a.out.join("frames.json"), &frames)?;
    write_lines(
        &a.out.join("curve.csv"),
        "frame,map25,map50",
        frames.iter().map(|f| format!("{},{:.16e},{:.16e}", f.frame, f.map25, f.map50)),
    )?;
    if let Some(last) = frames.last() {
        println!("{} frames; final mAP@0.25 {:.4}, mAP@0.5 {:.4}", frames.len(), last.map25, last.map50);
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Detection file written by `detect`; repeatable.
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    #[arg(long = "scene", required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn class_rows(r: &EvalResult) -> Vec<String> {
    let mut rows = Vec::new();
    for c in &r.classes {
        let name = CLASS_NAMES.get(c.class_id).copied().unwrap_or("");
        for (t, thr) in r.thresholds.iter().enumerate() {
            let ap = c.ap[t].map(|v| format!("{v:.16e}")).unwrap_or_default();
            rows.push(format!("{},{name},{thr},{},{},{},{},{ap}", c.class_id, c.gt, c.detections, c.tp[t], c.fp[t]));
        }
    }
    rows
}

/// Writes `result.json`, `classes.csv` and `map.csv`.
pub fn eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let mut preds: BTreeMap<String, Vec<Box3D>> = BTreeMap::new();
    for path in &a.preds {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: DetectionsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for (id, boxes) in file.scenes {
            if preds.insert(id.clone(), boxes).is_some() {
                bail!(anyview::Error::Validation(format!("scene '{id}' has predictions in more than one file")));
            }
        }
    }
    let gts = scene_ground_truth(&load_scenes(&a.scenes)?);
    let unknown: Vec<&str> = preds.keys().filter(|k| !gts.contains_key(*k)).map(String::as_str).collect();
    let missing: Vec<&str> = gts.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !unknown.is_empty() || !missing.is_empty() {
        bail!(anyview::Error::Lookup(format!(
            "prediction and ground-truth scene ids differ; predictions without scene: [{}]; scenes without predictions: [{}]",
            unknown.join(", "),
            missing.join(", ")
        )));
    }
    let result = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS, NUM_CLASSES)?;
    cfg.echo(&a.out)?;
    write_json(&a.out.join("result.json"), &result)?;
    write_lines(&a.out.join("classes.csv"), "class_id,class_name,threshold,gt,detections,tp,fp,ap", class_rows(&result))?;
    write_lines(
        &a.out.join("map.csv"),
        "threshold,map",
        result.thresholds.iter().zip(&result.map).map(|(t, m)| format!("{t},{m:.16e}")),
    )?;
    println!("mAP@0.25 {:.4}  mAP@0.5 {:.4}", result.map25(), result.map50());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long = "scene", required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Writes `weights.bin` and `loss.csv`. On divergence both hold the state
/// before the failing step and the command exits with the numerical status.
pub fn train_toy(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    let scenes = load_scenes(&a.scenes)?;
    let tc = cfg.train_config();
    tc.validate()?;
    let init = cfg.model.init(tc.init_seed)?;
    cfg.echo(&a.out)?;
    let run = train_checkpointed(&scenes, &cfg.model, &tc, init)?;
    let weights_path = a.out.join("weights.bin");
    run.output.weights.save(&weights_path)?;
    let loss_path = a.out.join("loss.csv");
    let file = fs::File::create(&loss_path).with_context(|| format!("creating {}", loss_path.display()))?;
    write_loss_csv(&run.output.curve, std::io::BufWriter::new(file))?;
    if let Some(e) = run.divergence {
        return Err(anyhow!(e).context(format!("training stopped; last finite weights saved to {}", weights_path.display())));
    }
    if let (Some(first), Some(last)) = (run.output.curve.first(), run.output.curve.last()) {
        println!("{} steps; loss {:.4} -> {:.4}", run.output.curve.len(), first.total, last.total);
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Tokens,
    Views,
    Pe,
    Query,
    Coords,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Self::Tokens => "tokens",
            Self::Views => "views",
            Self::Pe => "pe",
            Self::Query => "query",
            Self::Coords => "coords",
        }
    }

    fn arms(self) -> &'static [&'static str] {
        match self {
            Self::Tokens | Self::Views => &[],
            Self::Pe => &["none", "fourier", "mlp_fourier"],
            Self::Query => &["global", "proxy"],
            Self::Coords => &["camera", "world"],
        }
    }
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long = "scene", required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Weights for the tokens and views axes.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Weights for one arm of the pe, query or coords axis; repeatable.
    #[arg(long = "arm", value_name = "ARM=PATH")]
    arms: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn arm_model(axis: Axis, arm: &str, base: &ModelConfig) -> Result<ModelConfig> {
    let value = serde_json::Value::String(arm.to_string());
    Ok(match axis {
        Axis::Pe => base.with_arm(Some(serde_json::from_value::<PeMode>(value)?), None, None),
        Axis::Query => base.with_arm(None, Some(serde_json::from_value::<QueryMode>(value)?), None),
        Axis::Coords => base.with_arm(None, None, Some(serde_json::from_value::<CoordMode>(value)?)),
        Axis::Tokens | Axis::Views => base.clone(),
    })
}

/// Writes `<axis>.csv` and `<axis>.json` with one row per setting.
pub fn ablate(mut cfg: RunConfig, a: AblateArgs, jobs: usize) -> Result<()> {
    let scenes = load_scenes(&a.scenes)?;
    let axis = a.axis;
    let det = cfg.detect_config();
    let rows: Vec<SweepRow> = match axis {
        Axis::Tokens | Axis::Views => {
            let path = a.weights.as_ref().ok_or_else(|| anyhow!("--weights is required for the {} axis", axis.name()))?;
            let (weights, model) = load_weights(path)?;
            cfg.model = model;
            if axis == Axis::Tokens {
                run_token_sweep(&scenes, &weights, &cfg.model, &DEFAULT_BUDGETS, &det, jobs)?
            } else {
                let modes = [Sampling::Uniform, Sampling::Continuous];
                run_view_sweep(&scenes, &weights, &cfg.model, &DEFAULT_VIEW_COUNTS, &modes, &det, cfg.seed, jobs)?
            }
        }
        Axis::Pe | Axis::Query | Axis::Coords => {
            let mut paths = BTreeMap::new();
            for spec in &a.arms {
                let (arm, path) = spec.split_once('=').ok_or_else(|| anyhow!("--arm '{spec}' is not ARM=PATH"))?;
                if !axis.arms().contains(&arm) {
                    bail!(anyview::Error::Config(format!(
                        "'{arm}' is not an arm of the {} axis ({})",
                        axis.name(),
                        axis.arms().join("|")
                    )));
                }
                paths.insert(arm.to_string(), PathBuf::from(path));
            }
            let mut rows = Vec::new();
            for arm in axis.arms() {
                let path = paths.get(*arm).ok_or_else(|| {
                    anyview::Error::Lookup(format!("missing weights for arm '{arm}' of the {} axis", axis.name()))
                })?;
                let (weights, model) = load_weights(path)?;
                let model = arm_model(axis, arm, &model)?;
                let (r, failures) = evaluate_suite(&scenes, &weights, &model, &det, cfg.view_selection(), jobs)?;
                rows.push(SweepRow {
                    variable: axis.name().into(),
                    value: arm.to_string(),
                    sampling: None,
                    map25: r.map25(),
                    map50: r.map50(),
                    failures,
                });
            }
            rows
        }
    };
    cfg.echo(&a.out)?;
    write_lines(&a.out.join(format!("{}.csv", axis.name())), SweepRow::CSV_HEADER, rows.iter().map(SweepRow::csv))?;
    write_json(&a.out.join(format!("{}.json", axis.name())), &rows)?;
    for r in &rows {
        println!("{}", r.csv());
    }
    Ok(())
}

#[derive(Args)]
pub struct AcceptArgs {
    /// Comma-separated criterion ids, names or groups.
    #[arg(long)]
    filter: Option<String>,
    /// Directory for `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn accept(a: AcceptArgs) -> Result<()> {
    let filter = a.filter.as_deref();
    if let Some(f) = filter {
        if !CRITERIA.iter().any(|c| selects(Some(f), c)) {
            bail!(anyview::Error::Config(format!("filter '{f}' selects no criterion")));
        }
    }
    let report = run_acceptance(filter);
    for c in &report.criteria {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        println!("{tag} [{:>2}] {} ({:.1} s): {}", c.id, c.name, c.seconds, c.detail);
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report)?;
    }
    let failed: Vec<String> = report.failures().iter().map(|c| format!("{} ({})", c.id, c.name)).collect();
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("acceptance criteria failed: {}", failed.join(", "))).into());
    }
    Ok(())
}
