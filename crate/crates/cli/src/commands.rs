//! The operations behind each subcommand. Every function writes its files
//! under the output directory and returns the paths it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ilvm_core::autodiff::checkpoint;
use ilvm_core::autodiff::ParamStore;
use ilvm_core::dataset::{build_dataset_stamped, read_split, DatasetManifest};
use ilvm_core::geometry::{OrientedBox, Point, Pose2};
use ilvm_core::metrics::{aggregate, evaluate_scene, most_distinct_pair, MetricReport};
use ilvm_core::model::{train, AnyModel, Forecaster, TrainRecord};
use ilvm_core::planner::{plan, CandidateSet, CostBreakdown};
use ilvm_core::samples::SceneSampleSet;
use ilvm_core::scene::Scene;
use ilvm_core::scenegen::mix64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{usage, CliResult};
use crate::provenance::Provenance;
use crate::svg::{rate_curve, Canvas};

const SCENE_SALT: u64 = 0x5A3C_E5EE;

/// Per-scene sampling stream, independent of evaluation order.
pub fn scene_seed(seed: u64, scene_id: u64) -> u64 {
    mix64(seed ^ mix64(scene_id ^ SCENE_SALT))
}

/// Contents of a `samples.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub provenance: Provenance,
    pub sets: Vec<SceneSampleSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub provenance: Provenance,
    pub report: MetricReport,
    pub scenes: Vec<SceneEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene_id: u64,
    pub kind: String,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub provenance: Provenance,
    pub scene_id: u64,
    pub sdv: usize,
    pub chosen: usize,
    pub cost: CostBreakdown,
    pub trajectory: Vec<Pose2>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, bytes)
}

/// Scenes from a split file (`.jsonl`) or a JSON file holding one scene or
/// an array of scenes.
pub fn load_scenes(path: &Path) -> CliResult<Vec<Scene>> {
    if !path.exists() {
        return Err(usage(format!("no such scene file: {}", path.display())));
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(read_split(path)
            .with_context(|| format!("reading {}", path.display()))?
            .1);
    }
    let value: serde_json::Value = serde_json::from_slice(&fs::read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let scenes: Vec<Scene> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

/// Picks scenes by id, by index, or the first `limit`.
pub fn select(
    scenes: Vec<Scene>,
    id: Option<u64>,
    index: Option<usize>,
    limit: Option<usize>,
) -> CliResult<Vec<Scene>> {
    let picked = match (id, index) {
        (Some(id), _) => scenes.into_iter().filter(|s| s.id == id).collect(),
        (None, Some(i)) => scenes.into_iter().nth(i).into_iter().collect(),
        (None, None) => scenes
            .into_iter()
            .take(limit.unwrap_or(usize::MAX))
            .collect::<Vec<_>>(),
    };
    if picked.is_empty() {
        return Err(usage("scene selection is empty"));
    }
    Ok(picked)
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub model: AnyModel,
    pub store: ParamStore,
}

/// Reads a checkpoint and rebuilds its model. The stored experiment
/// config becomes the base for further overrides.
pub fn load_checkpoint(path: &Path) -> CliResult<Loaded> {
    let stem = path.with_extension("");
    if !checkpoint::manifest_path(&stem).exists() {
        return Err(usage(format!("no checkpoint at {}", path.display())));
    }
    let (manifest, store) =
        checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let config = ExperimentConfig::from_value(manifest.config)?;
    let model = AnyModel::build(config.model, config.model_config.clone())?;
    Ok(Loaded {
        config,
        model,
        store,
    })
}

pub fn gen_data(
    out: &Path,
    cfg: &ExperimentConfig,
    manifest: Option<DatasetManifest>,
) -> CliResult<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if let Some(m) = manifest {
        cfg.data.manifest = m;
    }
    cfg.validate()?;
    let prov = Provenance::new("gen-data", &cfg);
    Ok(build_dataset_stamped(
        &cfg.data.manifest,
        &cfg.data_dir(out),
        prov.to_value(),
    )?)
}

fn loss_csv(curve: &[TrainRecord], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s.push_str("step,recon,kl,beta,total,grad_norm\n");
    for r in curve {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.recon, r.kl, r.beta, r.total, r.grad_norm
        );
    }
    s
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub blob_sha256: String,
    pub final_record: Option<TrainRecord>,
    pub written: Vec<PathBuf>,
}

pub fn train_cmd(
    out: &Path,
    cfg: &ExperimentConfig,
    checkpoint_path: Option<PathBuf>,
) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let train_file = cfg.data_dir(out).join("train.jsonl");
    if !train_file.exists() {
        return Err(usage(format!(
            "{} not found; run gen-data first",
            train_file.display()
        )));
    }
    let scenes = load_scenes(&train_file)?;
    let model = AnyModel::build(cfg.model, cfg.model_config.clone())?;
    let outcome = train(&model, &scenes, &cfg.train_config())?;
    let prov = Provenance::new("train", cfg);
    let stem = checkpoint_path
        .unwrap_or_else(|| out.join("checkpoint"))
        .with_extension("");
    let manifest = checkpoint::save(
        &stem,
        &outcome.store,
        &cfg.model.to_string(),
        cfg.to_value(),
        prov.to_value(),
    )?;
    let loss = write(&out.join("loss.csv"), loss_csv(&outcome.curve, &prov))?;
    Ok(TrainSummary {
        checkpoint: checkpoint::manifest_path(&stem),
        blob_sha256: manifest.blob_sha256,
        final_record: outcome.curve.last().copied(),
        written: vec![
            checkpoint::manifest_path(&stem),
            checkpoint::blob_path(&stem),
            loss,
        ],
    })
}

fn sample_one(l: &Loaded, scene: &Scene, num: usize, seed: u64) -> CliResult<SceneSampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, scene.id));
    Ok(l.model.sample(&l.store, scene, num, &mut rng)?)
}

/// Runs `f` over `items` on all available threads, keeping input order.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> CliResult<R> + Sync,
) -> CliResult<Vec<R>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len())
        .max(1);
    let chunk = items.len().div_ceil(threads).max(1);
    let f = &f;
    let parts: Vec<CliResult<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<CliResult<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn world_points(set: &SceneSampleSet) -> Vec<Point> {
    let mut pts: Vec<Point> = set.world().into_iter().flatten().flatten().collect();
    pts.extend(set.poses.iter().map(|p| p.position()));
    pts
}

/// Overlay of every sample (translucent, time-colored), the ground truth
/// (dashed) and the current boxes.
pub fn samples_svg(set: &SceneSampleSet, scene: Option<&Scene>, prov: &Provenance) -> String {
    let mut c = Canvas::fit(&world_points(set), 640.0, 1);
    let opacity = (3.0 / set.num_samples() as f64).clamp(0.15, 1.0);
    for ws in set.world() {
        for (k, tr) in ws.iter().enumerate() {
            c.time_polyline(set.poses[k].position(), tr, 2.0, opacity);
        }
    }
    if let Some(scene) = scene {
        for a in &scene.actors {
            let mut gt = vec![a.pose.position()];
            gt.extend(a.future_world());
            c.polyline(&gt, "#000000", 1.0, 0.8, true);
        }
    }
    for (k, p) in set.poses.iter().enumerate() {
        c.oriented_box(&set.footprint(k, *p), "#333333", "#4a90d9", 0.5);
    }
    c.label(&format!("scene {}  S={}", set.scene_id, set.num_samples()));
    c.finish(prov)
}

pub fn sample_cmd(
    out: &Path,
    l: &Loaded,
    scenes: &[Scene],
    num: usize,
    svg_limit: usize,
) -> CliResult<(PathBuf, Vec<PathBuf>)> {
    if num == 0 {
        return Err(usage("--samples must be positive"));
    }
    let prov = Provenance::new("sample", &l.config);
    let sets = par_map(scenes, |s| sample_one(l, s, num, l.config.seed))?;
    let mut written = Vec::new();
    for (set, scene) in sets.iter().zip(scenes).take(svg_limit) {
        let path = out.join("samples").join(format!("scene_{}.svg", scene.id));
        written.push(write(&path, samples_svg(set, Some(scene), &prov))?);
    }
    let file = write_json(
        &out.join("samples.json"),
        &SampleFile {
            provenance: prov,
            sets,
        },
    )?;
    Ok((file, written))
}

fn report_csv(r: &MetricReport, prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s.push_str("metric,value\n");
    let rows = [
        ("num_scenes", r.num_scenes as f64),
        ("min_sade", r.min_sade),
        ("mean_sade", r.mean_sade),
        ("min_sfde", r.min_sfde),
        ("mean_sfde", r.mean_sfde),
        ("scr", r.scr),
        ("min_sade_at", r.at_ct.min_sade_at),
        ("min_sade_ct", r.at_ct.min_sade_ct),
        ("mean_sade_at", r.at_ct.mean_sade_at),
        ("mean_sade_ct", r.at_ct.mean_sade_ct),
        ("min_sfde_at", r.at_ct.min_sfde_at),
        ("min_sfde_ct", r.at_ct.min_sfde_ct),
        ("mean_sfde_at", r.at_ct.mean_sfde_at),
        ("mean_sfde_ct", r.at_ct.mean_sfde_ct),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    for (eps, rate) in &r.hit_rate {
        let _ = writeln!(s, "hit_rate@{eps},{rate}");
    }
    s
}

fn scenes_csv(rows: &[SceneEval], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s.push_str("scene_id,kind,min_sade,mean_sade,min_sfde,mean_sfde,scr\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scene_id, r.kind, m.min_sade, m.mean_sade, m.min_sfde, m.mean_sfde, m.scr
        );
    }
    s
}

/// Where evaluation samples come from.
pub enum SampleSource<'a> {
    Model(&'a Loaded),
    File(SampleFile),
}

pub fn eval_cmd(
    out: &Path,
    cfg: &ExperimentConfig,
    scenes: &[Scene],
    source: SampleSource<'_>,
) -> CliResult<(EvalFile, Vec<PathBuf>)> {
    let opts = &cfg.eval.metrics;
    let rows: Vec<SceneEval> = match source {
        SampleSource::Model(l) => par_map(scenes, |s| {
            let set = sample_one(l, s, cfg.eval.samples, cfg.seed)?;
            Ok(SceneEval {
                scene_id: s.id,
                kind: s.kind.name().to_string(),
                report: evaluate_scene(&set, s, opts)?,
            })
        })?,
        SampleSource::File(file) => {
            let by_id: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.id, s)).collect();
            let pairs = file
                .sets
                .iter()
                .map(|set| {
                    by_id.get(&set.scene_id).map(|s| (set, *s)).ok_or_else(|| {
                        anyhow!("samples for scene {} but no such scene", set.scene_id)
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            par_map(&pairs, |(set, s)| {
                Ok(SceneEval {
                    scene_id: s.id,
                    kind: s.kind.name().to_string(),
                    report: evaluate_scene(set, s, opts)?,
                })
            })?
        }
    };
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.report.clone()).collect();
    let report = aggregate(&reports)?;
    let prov = Provenance::new("eval", cfg);
    let dir = out.join("eval");
    let written = vec![
        write(&dir.join("report.csv"), report_csv(&report, &prov))?,
        write(&dir.join("scenes.csv"), scenes_csv(&rows, &prov))?,
        write(
            &dir.join("hit_rate.svg"),
            rate_curve(&report.hit_rate, "threshold (m)", "hit rate", &prov),
        )?,
    ];
    let file = EvalFile {
        provenance: prov,
        report,
        scenes: rows,
    };
    let mut all = vec![write_json(&dir.join("report.json"), &file)?];
    all.extend(written);
    Ok((file, all))
}

fn plan_csv(
    cands: &CandidateSet,
    costs: &[CostBreakdown],
    chosen: usize,
    prov: &Provenance,
) -> String {
    let mut s = prov.csv_header();
    s.push_str(
        "index,target_speed,lateral_offset,accel,collision,lat_accel,jerk,progress,total,chosen\n",
    );
    for (i, c) in costs.iter().enumerate() {
        let (v, d, a) = cands
            .labels
            .get(i)
            .copied()
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        let _ = writeln!(
            s,
            "{i},{v},{d},{a},{},{},{},{},{},{}",
            c.collision,
            c.lat_accel,
            c.jerk,
            c.progress,
            c.total,
            u8::from(i == chosen)
        );
    }
    s
}

fn plan_svg(
    cands: &CandidateSet,
    samples: &SceneSampleSet,
    sdv: usize,
    chosen: usize,
    prov: &Provenance,
) -> String {
    let mut pts = world_points(samples);
    pts.extend(cands.trajectories.iter().flatten().map(|p| p.position()));
    let mut c = Canvas::fit(&pts, 640.0, 1);
    let start = cands.start.position();
    for traj in &cands.trajectories {
        let mut line = vec![start];
        line.extend(traj.iter().map(|p| p.position()));
        c.polyline(&line, "#888888", 1.0, 0.5, false);
    }
    let opacity = (3.0 / samples.num_samples() as f64).clamp(0.1, 1.0);
    for ws in samples.world() {
        for (k, tr) in ws.iter().enumerate().filter(|(k, _)| *k != sdv) {
            c.time_polyline(samples.poses[k].position(), tr, 1.5, opacity);
        }
    }
    for (k, p) in samples.poses.iter().enumerate() {
        let fill = if k == sdv { "#2ca02c" } else { "#4a90d9" };
        c.oriented_box(&samples.footprint(k, *p), "#333333", fill, 0.6);
    }
    let best = &cands.trajectories[chosen];
    for p in best {
        c.oriented_box(
            &OrientedBox::new(*p, cands.length, cands.width),
            "#2ca02c",
            "none",
            0.0,
        );
    }
    c.time_polyline(
        start,
        &best.iter().map(|p| p.position()).collect::<Vec<_>>(),
        3.5,
        1.0,
    );
    c.label(&format!(
        "scene {}  candidate {chosen} of {}",
        samples.scene_id,
        cands.len()
    ));
    c.finish(prov)
}

pub fn plan_cmd(out: &Path, l: &Loaded, scene: &Scene) -> CliResult<(PlanFile, Vec<PathBuf>)> {
    let cfg = &l.config;
    cfg.plan
        .weights
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    let sdv = cfg.plan.sdv;
    let ego = scene.actors.get(sdv).ok_or_else(|| {
        usage(format!(
            "sdv index {sdv} but scene has {} actors",
            scene.num_actors()
        ))
    })?;
    let spec = ilvm_core::planner::LatticeSpec {
        horizon: scene.horizon(),
        dt: scene.dt,
        length: ego.length,
        width: ego.width,
        ..cfg.plan.lattice.clone()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let cands = CandidateSet::lattice(ego.pose, ego.current_speed(scene.dt), &spec)?;
    let samples = sample_one(l, scene, cfg.plan.samples, cfg.seed)?;
    let p = plan(&cands, &samples, Some(sdv), &cfg.plan.weights)?;
    let prov = Provenance::new("plan", cfg);
    let dir = out.join("plan");
    let written = vec![
        write(
            &dir.join("plan.csv"),
            plan_csv(&cands, &p.costs, p.index, &prov),
        )?,
        write(
            &dir.join("plan.svg"),
            plan_svg(&cands, &samples, sdv, p.index, &prov),
        )?,
    ];
    let file = PlanFile {
        provenance: prov,
        scene_id: scene.id,
        sdv,
        chosen: p.index,
        cost: p.costs[p.index],
        trajectory: cands.trajectories[p.index].clone(),
    };
    let mut all = vec![write_json(&dir.join("plan.json"), &file)?];
    all.extend(written);
    Ok((file, all))
}

/// Decodes a path between the two most distinct of `pool` prior samples
/// and renders one panel per step.
pub fn interpolate_cmd(
    out: &Path,
    l: &Loaded,
    scene: &Scene,
    steps: usize,
    pool: usize,
) -> CliResult<Vec<PathBuf>> {
    let AnyModel::Ilvm(m) = &l.model else {
        return Err(usage(format!(
            "interpolation needs an ilvm checkpoint, got {}",
            l.config.model
        )));
    };
    if steps < 2 || pool < 2 {
        return Err(usage(
            "interpolation needs --steps >= 2 and a pool of at least two samples",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(l.config.seed, scene.id));
    let zs = m.sample_latents(&l.store, scene, pool, &mut rng)?;
    let (x, _) = m.prior_distribution(&l.store, scene)?;
    let decoded = zs
        .iter()
        .map(|z| m.decode_scene(&l.store, scene, &x, z))
        .collect::<ilvm_core::Result<Vec<_>>>()?;
    let (a, b) = most_distinct_pair(&SceneSampleSet::new(scene, decoded)?)?;
    let frames = m.interpolate_latents(&l.store, scene, &zs[a], &zs[b], steps)?;
    let set = SceneSampleSet::new(scene, frames)?;
    let prov = Provenance::new("interpolate", &l.config);
    let mut c = Canvas::fit(&world_points(&set), 320.0, steps);
    for (k, ws) in set.world().iter().enumerate() {
        c.set_panel(k);
        for (j, tr) in ws.iter().enumerate() {
            c.time_polyline(set.poses[j].position(), tr, 2.0, 1.0);
            c.oriented_box(&set.footprint(j, set.poses[j]), "#333333", "#4a90d9", 0.5);
        }
        c.label(&format!("{:.2}", k as f64 / (steps - 1) as f64));
    }
    let dir = out.join("interpolate");
    Ok(vec![
        write(
            &dir.join(format!("scene_{}.svg", scene.id)),
            c.finish(&prov),
        )?,
        write_json(
            &dir.join(format!("scene_{}.json", scene.id)),
            &SampleFile {
                provenance: prov,
                sets: vec![set],
            },
        )?,
    ])
}
