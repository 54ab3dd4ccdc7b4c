//! Synthetic interacting-traffic scenes with known joint modes.
//!
//! Three scenario families are generated:
//!
//! * `car_follow`: a follower trails a leader in one lane. The leader either
//!   cruises (mode 0) or brakes (mode 1); the follower replays the leader's
//!   speed profile, so the gap stays constant.
//! * `yield_go`: two actors approach a crossing on perpendicular lanes and
//!   would reach it at the same instant. Exactly one goes while the other
//!   brakes to a stop before the crossing: mode 0 is "actor 0 goes", mode 1
//!   "actor 1 goes", drawn with probability `p_first_goes` for mode 0.
//! * `turn_branch`: a single actor approaching an intersection goes
//!   straight (0), turns left (1) or turns right (2).
//!
//! Every scene is drawn from its own RNG stream derived from
//! `(seed, scene id)`, so generation order does not matter.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{obb_iou, Point, Pose2};
use crate::scene::{Actor, ScenarioKind, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub dt: f64,
    pub horizon: usize,
    pub history: usize,
    pub box_length: f64,
    pub box_width: f64,
    pub max_accel: f64,
    /// Probability of mode 0 in `yield_go` (actor 0 goes first).
    pub p_first_goes: f64,
    pub yield_speed: [f64; 2],
    /// Candidate arrival times at the crossing (seconds); one is drawn per
    /// scene and shared by both actors.
    pub yield_arrival_times: Vec<f64>,
    pub yield_arrival_jitter: f64,
    pub yield_stop_gap: [f64; 2],
    pub follow_speed: [f64; 2],
    pub follow_gap: [f64; 2],
    pub follow_brake: [f64; 2],
    pub turn_speed: [f64; 2],
    pub turn_radius: [f64; 2],
    pub turn_distance: [f64; 2],
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            dt: 0.5,
            horizon: 10,
            history: 6,
            box_length: 4.5,
            box_width: 2.0,
            max_accel: 4.0,
            p_first_goes: 0.5,
            yield_speed: [6.0, 8.5],
            yield_arrival_times: vec![2.0, 2.5],
            yield_arrival_jitter: 0.05,
            yield_stop_gap: [6.5, 7.5],
            follow_speed: [6.0, 12.0],
            follow_gap: [10.0, 20.0],
            follow_brake: [1.5, 3.5],
            turn_speed: [4.0, 6.0],
            turn_radius: [10.0, 14.0],
            turn_distance: [4.0, 10.0],
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("yield_speed", self.yield_speed),
            ("yield_stop_gap", self.yield_stop_gap),
            ("follow_speed", self.follow_speed),
            ("follow_gap", self.follow_gap),
            ("follow_brake", self.follow_brake),
            ("turn_speed", self.turn_speed),
            ("turn_radius", self.turn_radius),
            ("turn_distance", self.turn_distance),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid(format!(
                    "{name} must be a positive range, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.dt > 0.0) || self.horizon == 0 || self.history == 0 {
            return Err(invalid("dt, horizon and history must be positive"));
        }
        if !(self.box_length > 0.0 && self.box_width > 0.0) {
            return Err(invalid("box extents must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_first_goes) {
            return Err(invalid("p_first_goes must lie in [0, 1]"));
        }
        if self.yield_arrival_times.is_empty()
            || self.yield_arrival_times.iter().any(|&t| !(t > 0.0))
        {
            return Err(invalid("yield_arrival_times must be positive and nonempty"));
        }
        if self.follow_gap[0] <= self.box_length {
            return Err(invalid("follow gap must exceed the box length"));
        }
        // worst-case braking demand of the yielding actor
        let t_min = self
            .yield_arrival_times
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min)
            - self.yield_arrival_jitter;
        let v = self.yield_speed[1];
        let room = v * t_min - self.yield_stop_gap[1];
        if room <= 0.0 || v * v / (2.0 * room) > self.max_accel {
            return Err(invalid("yield_go parameters need braking beyond max_accel"));
        }
        if self.follow_brake[1] > self.max_accel {
            return Err(invalid("follow_brake exceeds max_accel"));
        }
        if self.turn_speed[1].powi(2) / self.turn_radius[0] > self.max_accel {
            return Err(invalid("turn parameters exceed max lateral acceleration"));
        }
        Ok(())
    }
}

/// Independent stream for one scene id.
pub fn scene_rng(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(id.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lane centerline: straight for `pre` meters, then an arc of signed
/// angle `turn` (left positive), then straight again. Negative arc lengths
/// extend the initial straight backwards.
#[derive(Clone, Copy, Debug)]
struct Path {
    start: Pose2,
    pre: f64,
    radius: f64,
    turn: f64,
}

impl Path {
    fn straight(start: Pose2) -> Self {
        Self {
            start,
            pre: f64::INFINITY,
            radius: 1.0,
            turn: 0.0,
        }
    }

    /// Pose at arc length `s`, in the frame of the path start.
    fn local(&self, s: f64) -> Pose2 {
        if s <= self.pre || self.turn == 0.0 {
            Pose2::new(s, 0.0, 0.0)
        } else {
            let sign = self.turn.signum();
            let arc = self.radius * self.turn.abs();
            let phi = ((s - self.pre) / self.radius).min(self.turn.abs());
            let x = self.pre + self.radius * phi.sin();
            let y = sign * self.radius * (1.0 - phi.cos());
            let end = Pose2::new(x, y, sign * phi);
            let rest = (s - self.pre - arc).max(0.0);
            end.compose(&Pose2::new(rest, 0.0, 0.0))
        }
    }
}

/// Arc length travelled at each of `times` under acceleration `accel(t, v)`,
/// with speed clamped at zero.
fn integrate(v0: f64, times: &[f64], accel: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    const SUB: f64 = 0.005;
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut s, mut v) = (0.0, 0.0, v0);
    for &target in times {
        while t < target - 1e-12 {
            let h = SUB.min(target - t);
            let a = accel(t, v);
            let v_next = v + a * h;
            if v_next < 0.0 {
                // stops inside the substep
                s += v * v / (2.0 * -a);
                v = 0.0;
            } else {
                s += 0.5 * (v + v_next) * h;
                v = v_next;
            }
            t += h;
        }
        out.push(s);
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn build_actor(id: u32, path: &Path, v0: f64, future_s: &[f64], p: &GenParams) -> Actor {
    let past = (0..p.history)
        .rev()
        .map(|k| path.local(-((k + 1) as f64) * v0 * p.dt).position())
        .collect();
    let future = future_s.iter().map(|&s| path.local(s).position()).collect();
    Actor {
        id,
        pose: path.start,
        length: p.box_length,
        width: p.box_width,
        past,
        future,
    }
}

fn future_times(p: &GenParams) -> Vec<f64> {
    (1..=p.horizon).map(|k| k as f64 * p.dt).collect()
}

pub fn generate(
    kind: ScenarioKind,
    id: u64,
    params: &GenParams,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    params.validate()?;
    let scene = match kind {
        ScenarioKind::CarFollow => car_follow(id, params, rng),
        ScenarioKind::YieldGo => yield_go(id, params, rng),
        ScenarioKind::TurnBranch => turn_branch(id, params, rng),
    };
    debug_assert!(scene.validate().is_ok());
    Ok(scene)
}

fn car_follow(id: u64, p: &GenParams, rng: &mut ChaCha8Rng) -> Scene {
    let heading = rng.random_range(-PI..PI);
    let origin = Pose2::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        heading,
    );
    let v = uniform(rng, p.follow_speed);
    let gap = uniform(rng, p.follow_gap);
    let brake = rng.random_bool(0.5);
    let decel = uniform(rng, p.follow_brake);
    let t0 = rng.random_range(0.0..1.5);
    let v_floor = v * rng.random_range(0.2..0.6);
    let s = integrate(v, &future_times(p), |t, vel| {
        if brake && t >= t0 && vel > v_floor {
            -decel
        } else {
            0.0
        }
    });
    let follower_path = Path::straight(origin);
    let leader_path = Path::straight(origin.compose(&Pose2::new(gap, 0.0, 0.0)));
    Scene {
        id,
        kind: ScenarioKind::CarFollow,
        mode_label: brake as u32,
        dt: p.dt,
        actors: vec![
            build_actor(0, &follower_path, v, &s, p),
            build_actor(1, &leader_path, v, &s, p),
        ],
        conflict_point: None,
    }
}

fn yield_go(id: u64, p: &GenParams, rng: &mut ChaCha8Rng) -> Scene {
    let t_arrive = p.yield_arrival_times[rng.random_range(0..p.yield_arrival_times.len())];
    // a fixed-width draw keeps the stream aligned for every p
    let first_goes = rng.random::<f64>() < p.p_first_goes;
    let times = future_times(p);
    let mut actors = Vec::with_capacity(2);
    for k in 0..2u32 {
        let v = uniform(rng, p.yield_speed);
        let jitter = if p.yield_arrival_jitter > 0.0 {
            rng.random_range(-p.yield_arrival_jitter..p.yield_arrival_jitter)
        } else {
            0.0
        };
        let d = v * (t_arrive + jitter);
        let stop_gap = uniform(rng, p.yield_stop_gap);
        // actor 0 drives north towards the origin, actor 1 east
        let start = if k == 0 {
            Pose2::new(0.0, -d, FRAC_PI_2)
        } else {
            Pose2::new(-d, 0.0, 0.0)
        };
        let goes = (k == 0) == first_goes;
        let decel = v * v / (2.0 * (d - stop_gap));
        let s = integrate(v, &times, |_, _| if goes { 0.0 } else { -decel });
        actors.push(build_actor(k, &Path::straight(start), v, &s, p));
    }
    Scene {
        id,
        kind: ScenarioKind::YieldGo,
        mode_label: if first_goes { 0 } else { 1 },
        dt: p.dt,
        actors,
        conflict_point: Some([0.0, 0.0]),
    }
}

fn turn_branch(id: u64, p: &GenParams, rng: &mut ChaCha8Rng) -> Scene {
    let heading = rng.random_range(-PI..PI);
    let start = Pose2::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        heading,
    );
    let mode = rng.random_range(0..3u32);
    let path = Path {
        start,
        pre: uniform(rng, p.turn_distance),
        radius: uniform(rng, p.turn_radius),
        turn: match mode {
            0 => 0.0,
            1 => FRAC_PI_2,
            _ => -FRAC_PI_2,
        },
    };
    let v = uniform(rng, p.turn_speed);
    let s: Vec<f64> = future_times(p).iter().map(|t| v * t).collect();
    Scene {
        id,
        kind: ScenarioKind::TurnBranch,
        mode_label: mode,
        dt: p.dt,
        actors: vec![build_actor(0, &path, v, &s, p)],
        conflict_point: None,
    }
}

/// Recovers the generator branch from a joint future given as world-frame
/// waypoints `[actor][t]`.
pub fn classify_mode(scene: &Scene, world: &[Vec<Point>]) -> u32 {
    match scene.kind {
        ScenarioKind::YieldGo => {
            let conflict = scene.conflict_point.unwrap_or([0.0, 0.0]);
            // (crossing index, progress fraction) per actor
            let key = |k: usize| -> (usize, f64) {
                let pose = scene.actors[k].pose;
                let dist = pose.to_local(conflict)[0];
                let mut best = f64::MIN;
                for (t, &w) in world[k].iter().enumerate() {
                    let along = pose.to_local(w)[0];
                    if along >= dist {
                        return (t, along - dist);
                    }
                    best = best.max(along);
                }
                (usize::MAX, best / dist.max(1e-9))
            };
            let (a, b) = (key(0), key(1));
            let first = if a.0 != b.0 { a.0 < b.0 } else { a.1 >= b.1 };
            if first {
                0
            } else {
                1
            }
        }
        ScenarioKind::CarFollow => {
            let leader = &scene.actors[1];
            let v = leader.current_speed(scene.dt);
            let expected = v * scene.dt * world[1].len() as f64;
            let last = leader.pose.to_local(*world[1].last().unwrap())[0];
            (last < expected - 0.5) as u32
        }
        ScenarioKind::TurnBranch => {
            let a = &scene.actors[0];
            let last = a.pose.to_local(*world[0].last().unwrap());
            let lateral = last[1];
            if lateral.abs() < 1.5 {
                0
            } else if lateral > 0.0 {
                1
            } else {
                2
            }
        }
    }
}

/// Largest pairwise IoU between the actors' future footprints at any time
/// step, with headings from finite differences of the world waypoints.
pub fn max_future_iou(scene: &Scene, world: &[Vec<Point>]) -> Result<f64> {
    let n = scene.num_actors();
    let headings: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut pts = vec![scene.actors[k].pose.position()];
            pts.extend_from_slice(&world[k]);
            let h = crate::geometry::headings_with_initial(&pts, scene.actors[k].pose.heading)?;
            Ok(h[1..].to_vec())
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for t in 0..world.first().map_or(0, |w| w.len()) {
        for i in 0..n {
            for j in i + 1..n {
                let bi = scene.actors[i].footprint(Pose2::new(
                    world[i][t][0],
                    world[i][t][1],
                    headings[i][t],
                ));
                let bj = scene.actors[j].footprint(Pose2::new(
                    world[j][t][0],
                    world[j][t][1],
                    headings[j][t],
                ));
                worst = worst.max(obb_iou(&bi, &bj)?);
            }
        }
    }
    Ok(worst)
}

/// Unstructured scene of `n` actors on random smooth paths near the
/// origin, for tests and benchmarks. Not part of any dataset.
pub fn random_scene(
    id: u64,
    n: usize,
    history: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Scene {
    let actors = (0..n)
        .map(|k| {
            let pose = Pose2::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-3.1..3.1),
            );
            let v: f64 = rng.random_range(0.5..4.0);
            let curv: f64 = rng.random_range(-0.05..0.05);
            let at = |s: f64| {
                let phi = curv * s;
                if curv.abs() < 1e-9 {
                    [s, 0.0]
                } else {
                    [phi.sin() / curv, (1.0 - phi.cos()) / curv]
                }
            };
            Actor {
                id: 3 * k as u32 + 1,
                pose,
                length: 4.5,
                width: 2.0,
                past: (0..history)
                    .rev()
                    .map(|j| at(-((j + 1) as f64) * v * 0.5))
                    .collect(),
                future: (1..=horizon).map(|j| at(j as f64 * v * 0.5)).collect(),
            }
        })
        .collect();
    Scene {
        id,
        kind: ScenarioKind::CarFollow,
        mode_label: 0,
        dt: 0.5,
        actors,
        conflict_point: None,
    }
}
