//! Scene-level sample-quality metrics.
//!
//! All displacements are measured in the world frame. Per-scene values are
//! averaged over scenes for dataset-level reports.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::geometry::{
    along_cross_error, headings_with_initial, obb_iou, OrientedBox, Point, Pose2,
};
use crate::samples::SceneSampleSet;
use crate::scene::Scene;

pub const DEFAULT_EPS_IOU: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub min_sade: f64,
    pub mean_sade: f64,
    pub min_sfde: f64,
    pub mean_sfde: f64,
}

/// Along-track (AT) and cross-track (CT) absolute errors aggregated like
/// the displacement family. Each min is taken independently over samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AtCt {
    pub min_sade_at: f64,
    pub min_sade_ct: f64,
    pub mean_sade_at: f64,
    pub mean_sade_ct: f64,
    pub min_sfde_at: f64,
    pub min_sfde_ct: f64,
    pub mean_sfde_at: f64,
    pub mean_sfde_ct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_scenes: usize,
    pub min_sade: f64,
    pub mean_sade: f64,
    pub min_sfde: f64,
    pub mean_sfde: f64,
    pub scr: f64,
    pub hit_rate: Vec<(f64, f64)>,
    pub at_ct: AtCt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub eps_iou: f64,
    /// Use squared displacements instead of Euclidean norms.
    pub squared: bool,
    /// Hit-rate time index (0-based); `None` is the final step.
    pub hit_time: Option<usize>,
    pub hit_thresholds: Vec<f64>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            eps_iou: DEFAULT_EPS_IOU,
            squared: false,
            hit_time: None,
            hit_thresholds: (0..=20).map(|k| k as f64 * 0.25).collect(),
        }
    }
}

fn check(samples: &SceneSampleSet, gt: &[Vec<Point>]) -> Result<()> {
    if samples.num_samples() == 0 {
        return Err(invalid("empty sample set"));
    }
    samples.validate()?;
    let t = samples.horizon();
    if gt.len() != samples.num_actors() || gt.iter().any(|g| g.len() != t) || t == 0 {
        return Err(shape(
            "metrics",
            format!(
                "{} samples of {} actors x {t} vs ground truth of {} actors",
                samples.num_samples(),
                samples.num_actors(),
                gt.len()
            ),
        ));
    }
    Ok(())
}

fn world_gt(samples: &SceneSampleSet, gt: &[Vec<Point>]) -> Vec<Vec<Point>> {
    gt.iter()
        .zip(&samples.poses)
        .map(|(tr, pose)| tr.iter().map(|&p| pose.to_world(p)).collect())
        .collect()
}

fn dist(a: Point, b: Point, squared: bool) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    if squared {
        d2
    } else {
        d2.sqrt()
    }
}

fn min_mean(v: &[f64]) -> (f64, f64) {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, v.iter().sum::<f64>() / v.len() as f64)
}

/// Scene-level minSADE, meanSADE, minSFDE and meanSFDE. `gt` is
/// `[actor][t]` in each actor's frame.
pub fn displacement(
    samples: &SceneSampleSet,
    gt: &[Vec<Point>],
    squared: bool,
) -> Result<Displacement> {
    check(samples, gt)?;
    let gw = world_gt(samples, gt);
    let (n, t) = (samples.num_actors(), samples.horizon());
    let mut sade = Vec::with_capacity(samples.num_samples());
    let mut sfde = Vec::with_capacity(samples.num_samples());
    for s in samples.world() {
        let mut ade = 0.0;
        let mut fde = 0.0;
        for (pred, truth) in s.iter().zip(&gw) {
            for k in 0..t {
                ade += dist(pred[k], truth[k], squared);
            }
            fde += dist(pred[t - 1], truth[t - 1], squared);
        }
        sade.push(ade / (n * t) as f64);
        sfde.push(fde / n as f64);
    }
    let (min_sade, mean_sade) = min_mean(&sade);
    let (min_sfde, mean_sfde) = min_mean(&sfde);
    Ok(Displacement {
        min_sade,
        mean_sade,
        min_sfde,
        mean_sfde,
    })
}

/// Oriented footprints `[actor][t]` of one sample, with headings from
/// finite differences that start at each actor's current pose.
pub fn sample_footprints(
    samples: &SceneSampleSet,
    world_sample: &[Vec<Point>],
) -> Result<Vec<Vec<OrientedBox>>> {
    world_sample
        .iter()
        .enumerate()
        .map(|(k, tr)| {
            let pose = samples.poses[k];
            let mut pts = Vec::with_capacity(tr.len() + 1);
            pts.push(pose.position());
            pts.extend_from_slice(tr);
            let h = headings_with_initial(&pts, pose.heading)?;
            Ok(tr
                .iter()
                .zip(&h[1..])
                .map(|(p, &hd)| samples.footprint(k, Pose2::new(p[0], p[1], hd)))
                .collect())
        })
        .collect()
}

/// Per `[sample][actor]` collision flags: whether the actor's box overlaps
/// any other actor's box of the same sample with IoU above `eps_iou` at
/// some time step.
pub fn collision_flags(samples: &SceneSampleSet, eps_iou: f64) -> Result<Vec<Vec<bool>>> {
    samples.validate()?;
    let n = samples.num_actors();
    samples
        .world()
        .iter()
        .map(|ws| {
            let boxes = sample_footprints(samples, ws)?;
            let mut flags = vec![false; n];
            for i in 0..n {
                for j in i + 1..n {
                    for t in 0..samples.horizon() {
                        // cheap reject before clipping
                        let (a, b) = (&boxes[i][t], &boxes[j][t]);
                        let reach = a.circumradius() + b.circumradius();
                        if (a.center.x - b.center.x).hypot(a.center.y - b.center.y) > reach {
                            continue;
                        }
                        if obb_iou(a, b)? > eps_iou {
                            flags[i] = true;
                            flags[j] = true;
                            break;
                        }
                    }
                }
            }
            Ok(flags)
        })
        .collect()
}

/// Scene collision rate: fraction of (sample, actor) pairs flagged by
/// [`collision_flags`].
pub fn scene_collision_rate(samples: &SceneSampleSet, eps_iou: f64) -> Result<f64> {
    if samples.num_samples() == 0 {
        return Err(invalid("empty sample set"));
    }
    let flags = collision_flags(samples, eps_iou)?;
    let hits = flags.iter().flatten().filter(|&&f| f).count();
    Ok(hits as f64 / (samples.num_actors() * samples.num_samples()) as f64)
}

/// Fraction of (actor, sample) pairs whose error at time index `t` is
/// strictly below each threshold. Actors with `gate[n] == false` are
/// excluded; `None` keeps every actor.
pub fn hit_rate(
    samples: &SceneSampleSet,
    gt: &[Vec<Point>],
    t: usize,
    thresholds: &[f64],
    gate: Option<&[bool]>,
) -> Result<Vec<(f64, f64)>> {
    check(samples, gt)?;
    if t >= samples.horizon() {
        return Err(invalid(format!(
            "hit-rate time {t} outside horizon {}",
            samples.horizon()
        )));
    }
    let gw = world_gt(samples, gt);
    let mut errors = Vec::new();
    for s in samples.world() {
        for (k, (pred, truth)) in s.iter().zip(&gw).enumerate() {
            if gate.is_none_or(|g| g[k]) {
                errors.push(dist(pred[t], truth[t], false));
            }
        }
    }
    Ok(thresholds
        .iter()
        .map(|&eps| {
            let rate = if errors.is_empty() {
                0.0
            } else {
                errors.iter().filter(|&&e| e < eps).count() as f64 / errors.len() as f64
            };
            (eps, rate)
        })
        .collect())
}

/// `(at, ct)` per `[sample][actor][t]`, projected into the ground-truth
/// heading frame.
pub fn at_ct_errors(
    samples: &SceneSampleSet,
    gt: &[Vec<Point>],
) -> Result<Vec<Vec<Vec<(f64, f64)>>>> {
    check(samples, gt)?;
    let gw = world_gt(samples, gt);
    let headings = gw
        .iter()
        .zip(&samples.poses)
        .map(|(tr, pose)| {
            let mut pts = vec![pose.position()];
            pts.extend_from_slice(tr);
            Ok(headings_with_initial(&pts, pose.heading)?[1..].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(samples
        .world()
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(k, pred)| {
                    (0..pred.len())
                        .map(|t| along_cross_error(pred[t], gw[k][t], headings[k][t]))
                        .collect()
                })
                .collect()
        })
        .collect())
}

pub fn at_ct_breakdown(samples: &SceneSampleSet, gt: &[Vec<Point>]) -> Result<AtCt> {
    let errs = at_ct_errors(samples, gt)?;
    let (n, t) = (samples.num_actors(), samples.horizon());
    let mut cols: [Vec<f64>; 4] = Default::default();
    for s in &errs {
        let (mut ade_at, mut ade_ct, mut fde_at, mut fde_ct) = (0.0, 0.0, 0.0, 0.0);
        for actor in s {
            for &(at, ct) in actor {
                ade_at += at.abs();
                ade_ct += ct.abs();
            }
            fde_at += actor[t - 1].0.abs();
            fde_ct += actor[t - 1].1.abs();
        }
        cols[0].push(ade_at / (n * t) as f64);
        cols[1].push(ade_ct / (n * t) as f64);
        cols[2].push(fde_at / n as f64);
        cols[3].push(fde_ct / n as f64);
    }
    let [a, b, c, d] = cols.map(|v| min_mean(&v));
    Ok(AtCt {
        min_sade_at: a.0,
        mean_sade_at: a.1,
        min_sade_ct: b.0,
        mean_sade_ct: b.1,
        min_sfde_at: c.0,
        mean_sfde_at: c.1,
        min_sfde_ct: d.0,
        mean_sfde_ct: d.1,
    })
}

/// Mean over actors and steps of the distance between two samples.
fn sample_distance(a: &[Vec<Point>], b: &[Vec<Point>]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (ta, tb) in a.iter().zip(b) {
        for (p, q) in ta.iter().zip(tb) {
            acc += dist(*p, *q, false);
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

/// The two samples with the largest mean distance to all other samples,
/// highest first; ties go to the lower index.
pub fn most_distinct_pair(samples: &SceneSampleSet) -> Result<(usize, usize)> {
    let s = samples.num_samples();
    if s < 2 {
        return Err(invalid("most_distinct_pair needs at least two samples"));
    }
    let w = samples.world();
    let mut score = vec![0.0; s];
    for i in 0..s {
        for j in i + 1..s {
            let d = sample_distance(&w[i], &w[j]);
            score[i] += d;
            score[j] += d;
        }
    }
    let mut idx: Vec<usize> = (0..s).collect();
    // stable sort keeps lower indices first among equal scores
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
    Ok((idx[0], idx[1]))
}

/// Every metric for one scene.
pub fn evaluate_scene(
    samples: &SceneSampleSet,
    scene: &Scene,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let gt = scene.futures();
    let d = displacement(samples, &gt, opts.squared)?;
    let t = opts.hit_time.unwrap_or(samples.horizon().saturating_sub(1));
    Ok(MetricReport {
        num_scenes: 1,
        min_sade: d.min_sade,
        mean_sade: d.mean_sade,
        min_sfde: d.min_sfde,
        mean_sfde: d.mean_sfde,
        scr: scene_collision_rate(samples, opts.eps_iou)?,
        hit_rate: hit_rate(samples, &gt, t, &opts.hit_thresholds, None)?,
        at_ct: at_ct_breakdown(samples, &gt)?,
    })
}

/// Mean of per-scene reports.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(invalid("no scenes to aggregate"));
    }
    let k = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let hits = reports[0]
        .hit_rate
        .iter()
        .enumerate()
        .map(|(i, &(eps, _))| (eps, mean(&|r| r.hit_rate[i].1)))
        .collect();
    Ok(MetricReport {
        num_scenes: reports.len(),
        min_sade: mean(&|r| r.min_sade),
        mean_sade: mean(&|r| r.mean_sade),
        min_sfde: mean(&|r| r.min_sfde),
        mean_sfde: mean(&|r| r.mean_sfde),
        scr: mean(&|r| r.scr),
        hit_rate: hits,
        at_ct: AtCt {
            min_sade_at: mean(&|r| r.at_ct.min_sade_at),
            min_sade_ct: mean(&|r| r.at_ct.min_sade_ct),
            mean_sade_at: mean(&|r| r.at_ct.mean_sade_at),
            mean_sade_ct: mean(&|r| r.at_ct.mean_sade_ct),
            min_sfde_at: mean(&|r| r.at_ct.min_sfde_at),
            min_sfde_ct: mean(&|r| r.at_ct.min_sfde_ct),
            mean_sfde_at: mean(&|r| r.at_ct.mean_sfde_at),
            mean_sfde_ct: mean(&|r| r.at_ct.mean_sfde_ct),
        },
    })
}

/// Evaluates paired (samples, scene) lists and aggregates.
pub fn evaluate(pairs: &[(SceneSampleSet, &Scene)], opts: &MetricOptions) -> Result<MetricReport> {
    let reports = pairs
        .iter()
        .map(|(s, scene)| evaluate_scene(s, scene, opts))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&reports)
}
