//! Sampling-based ego planning: every candidate trajectory is scored by its
//! Monte-Carlo expected cost under joint scene samples of the other actors,
//! and the cheapest candidate is chosen.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{obb_iou, OrientedBox, Point, Pose2};
use crate::metrics::sample_footprints;
use crate::samples::SceneSampleSet;

/// Default number of scene samples drawn for planning.
pub const DEFAULT_PLAN_SAMPLES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeSpec {
    pub target_speeds: Vec<f64>,
    pub lateral_offsets: Vec<f64>,
    /// Magnitudes of the acceleration used to reach each target speed.
    pub accels: Vec<f64>,
    pub horizon: usize,
    pub dt: f64,
    pub max_accel: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            target_speeds: vec![0.0, 2.5, 5.0, 7.5, 10.0],
            lateral_offsets: vec![-3.5, -1.75, 0.0, 1.75, 3.5],
            accels: vec![1.0, 3.0],
            horizon: 10,
            dt: 0.5,
            max_accel: 4.0,
            length: 4.5,
            width: 2.0,
        }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_speeds.is_empty()
            || self.lateral_offsets.is_empty()
            || self.accels.is_empty()
        {
            return Err(invalid("lattice axes must be nonempty"));
        }
        if self.horizon == 0 || !(self.dt > 0.0) || !(self.length > 0.0 && self.width > 0.0) {
            return Err(invalid("lattice horizon, dt and box must be positive"));
        }
        if self
            .target_speeds
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(invalid("target speeds must be finite and non-negative"));
        }
        if self
            .accels
            .iter()
            .any(|a| !(*a > 0.0 && *a <= self.max_accel))
        {
            return Err(invalid(format!(
                "accelerations must lie in (0, {}]",
                self.max_accel
            )));
        }
        let t = self.horizon as f64 * self.dt;
        let worst_lat = self
            .lateral_offsets
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()))
            * std::f64::consts::PI.powi(2)
            / (2.0 * t * t);
        if !worst_lat.is_finite() || worst_lat > self.max_accel {
            return Err(invalid(
                "lateral offsets need acceleration beyond max_accel",
            ));
        }
        Ok(())
    }
}

/// Ego candidate trajectories in the world frame. Every trajectory starts
/// at `start` (not included) and has the same number of poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub start: Pose2,
    pub dt: f64,
    pub length: f64,
    pub width: f64,
    pub trajectories: Vec<Vec<Pose2>>,
    /// `(target speed, lateral offset, accel)` per candidate, when built
    /// from a lattice.
    #[serde(default)]
    pub labels: Vec<(f64, f64, f64)>,
}

/// Arc length along a straight road when moving from speed `v0` toward
/// `target` at constant acceleration magnitude `a`.
fn longitudinal(v0: f64, target: f64, a: f64, t: f64) -> (f64, f64) {
    let sign = if target >= v0 { 1.0 } else { -1.0 };
    let reach = (target - v0).abs() / a;
    if t <= reach {
        (v0 * t + 0.5 * sign * a * t * t, v0 + sign * a * t)
    } else {
        (
            v0 * reach + 0.5 * sign * a * reach * reach + target * (t - reach),
            target,
        )
    }
}

impl CandidateSet {
    /// Lattice over target speed x lateral offset x acceleration. The
    /// lateral offset is blended in with a half-cosine over the horizon.
    pub fn lattice(start: Pose2, speed: f64, spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(invalid("current speed must be finite and non-negative"));
        }
        let total = spec.horizon as f64 * spec.dt;
        let mut trajectories = Vec::new();
        let mut labels = Vec::new();
        for &v in &spec.target_speeds {
            for &d in &spec.lateral_offsets {
                for &a in &spec.accels {
                    let mut heading = 0.0;
                    let traj = (1..=spec.horizon)
                        .map(|k| {
                            let t = k as f64 * spec.dt;
                            let (s, vs) = longitudinal(speed, v, a, t);
                            let w = std::f64::consts::PI / total;
                            let y = 0.5 * d * (1.0 - (w * t).cos());
                            let vy = 0.5 * d * w * (w * t).sin();
                            if vs.hypot(vy) > 1e-9 {
                                heading = vy.atan2(vs);
                            }
                            start.compose(&Pose2::new(s, y, heading))
                        })
                        .collect();
                    trajectories.push(traj);
                    labels.push((v, d, a));
                }
            }
        }
        Ok(Self {
            start,
            dt: spec.dt,
            length: spec.length,
            width: spec.width,
            trajectories,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn footprint(&self, at: Pose2) -> OrientedBox {
        OrientedBox::new(at, self.length, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_collision: f64,
    pub w_lat_accel: f64,
    pub w_jerk: f64,
    pub w_progress: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_collision: 100.0,
            w_lat_accel: 0.1,
            w_jerk: 0.01,
            w_progress: 1.0,
        }
    }
}

impl CostWeights {
    pub fn collision_only() -> Self {
        Self {
            w_collision: 1.0,
            w_lat_accel: 0.0,
            w_jerk: 0.0,
            w_progress: 0.0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w_collision: k * self.w_collision,
            w_lat_accel: k * self.w_lat_accel,
            w_jerk: k * self.w_jerk,
            w_progress: k * self.w_progress,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [
            self.w_collision,
            self.w_lat_accel,
            self.w_jerk,
            self.w_progress,
        ];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("cost weights must be finite and non-negative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(invalid("cost weights must not all be zero"));
        }
        Ok(())
    }
}

/// Terms of the expected cost of one candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Fraction of samples in which the candidate overlaps an obstacle.
    pub collision: f64,
    /// Sum of squared lateral accelerations (m^2/s^4).
    pub lat_accel: f64,
    /// Sum of squared jerk magnitudes (m^2/s^6).
    pub jerk: f64,
    /// Arc length of the candidate (m).
    pub progress: f64,
    pub total: f64,
}

/// Comfort and progress terms by finite differences over the start
/// position followed by the candidate's waypoints.
fn comfort(start: Point, traj: &[Pose2], dt: f64) -> (f64, f64, f64) {
    let mut pts = Vec::with_capacity(traj.len() + 1);
    pts.push(start);
    pts.extend(traj.iter().map(|p| p.position()));
    let vel: Vec<Point> = pts
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt])
        .collect();
    let progress = vel.iter().map(|v| v[0].hypot(v[1]) * dt).sum();
    let acc: Vec<Point> = vel
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt])
        .collect();
    let mut lat = 0.0;
    for (k, a) in acc.iter().enumerate() {
        let v = vel[k + 1];
        let speed = v[0].hypot(v[1]);
        if speed > 1e-9 {
            let cross = (v[0] * a[1] - v[1] * a[0]) / speed;
            lat += cross * cross;
        }
    }
    let jerk = acc
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]) / dt).powi(2) + ((w[1][1] - w[0][1]) / dt).powi(2))
        .sum();
    (lat, jerk, progress)
}

/// Number of samples in which `traj` overlaps (IoU > 0) any obstacle box
/// at a shared time step. Actor `sdv` of the samples is ignored.
pub fn colliding_samples(
    cands: &CandidateSet,
    traj: &[Pose2],
    samples: &SceneSampleSet,
    sdv: Option<usize>,
) -> Result<usize> {
    let ego: Vec<OrientedBox> = traj.iter().map(|p| cands.footprint(*p)).collect();
    let steps = ego.len().min(samples.horizon());
    let mut hits = 0;
    for ws in samples.world() {
        let boxes = sample_footprints(samples, &ws)?;
        let hit = boxes
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != sdv)
            .any(|(_, actor)| {
                (0..steps).any(|t| {
                    let (a, b) = (&ego[t], &actor[t]);
                    let reach = a.circumradius() + b.circumradius();
                    (a.center.x - b.center.x).hypot(a.center.y - b.center.y) <= reach
                        && obb_iou(a, b).map(|v| v > 0.0).unwrap_or(false)
                })
            });
        hits += usize::from(hit);
    }
    Ok(hits)
}

pub fn cost_breakdown(
    cands: &CandidateSet,
    index: usize,
    samples: &SceneSampleSet,
    sdv: Option<usize>,
    w: &CostWeights,
) -> Result<CostBreakdown> {
    let traj = cands
        .trajectories
        .get(index)
        .ok_or_else(|| invalid(format!("candidate {index} of {}", cands.len())))?;
    let collision = if samples.num_samples() == 0 {
        0.0
    } else {
        colliding_samples(cands, traj, samples, sdv)? as f64 / samples.num_samples() as f64
    };
    let (lat_accel, jerk, progress) = comfort(cands.start.position(), traj, cands.dt);
    let total = w.w_collision * collision + w.w_lat_accel * lat_accel + w.w_jerk * jerk
        - w.w_progress * progress;
    Ok(CostBreakdown {
        collision,
        lat_accel,
        jerk,
        progress,
        total,
    })
}

/// Monte-Carlo expected cost of candidate `index`.
pub fn expected_cost(
    cands: &CandidateSet,
    index: usize,
    samples: &SceneSampleSet,
    sdv: Option<usize>,
    w: &CostWeights,
) -> Result<f64> {
    Ok(cost_breakdown(cands, index, samples, sdv, w)?.total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub index: usize,
    pub costs: Vec<CostBreakdown>,
}

/// Cheapest candidate; ties (equal up to 1e-12 relative) go to the lowest
/// index. Candidates are scored on all available threads.
pub fn plan(
    cands: &CandidateSet,
    samples: &SceneSampleSet,
    sdv: Option<usize>,
    w: &CostWeights,
) -> Result<Plan> {
    if cands.is_empty() {
        return Err(invalid("empty candidate set"));
    }
    w.validate()?;
    samples.validate()?;
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cands.len());
    let chunk = cands.len().div_ceil(threads);
    let costs: Vec<CostBreakdown> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|k| {
                scope.spawn(move || {
                    (k * chunk..((k + 1) * chunk).min(cands.len()))
                        .map(|i| cost_breakdown(cands, i, samples, sdv, w))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cost worker panicked"))
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    let mut best = 0;
    for (i, c) in costs.iter().enumerate().skip(1) {
        let b = costs[best].total;
        let tol = 1e-12 * c.total.abs().max(b.abs());
        if c.total < b - tol {
            best = i;
        }
    }
    Ok(Plan { index: best, costs })
}
