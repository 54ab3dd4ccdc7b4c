//! Scene records shared by the generator, models, metrics and planner.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{OrientedBox, Point, Pose2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CarFollow,
    YieldGo,
    TurnBranch,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [Self::CarFollow, Self::YieldGo, Self::TurnBranch];

    pub fn name(self) -> &'static str {
        match self {
            Self::CarFollow => "car_follow",
            Self::YieldGo => "yield_go",
            Self::TurnBranch => "turn_branch",
        }
    }
}

/// One traffic participant. `past` and `future` are expressed in the frame
/// of `pose` (the actor's current position and heading); `past` runs oldest
/// first and excludes the current position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub pose: Pose2,
    pub length: f64,
    pub width: f64,
    pub past: Vec<Point>,
    pub future: Vec<Point>,
}

impl Actor {
    pub fn footprint(&self, at: Pose2) -> OrientedBox {
        OrientedBox::new(at, self.length, self.width)
    }

    pub fn current_box(&self) -> OrientedBox {
        self.footprint(self.pose)
    }

    pub fn future_world(&self) -> Vec<Point> {
        self.future.iter().map(|&p| self.pose.to_world(p)).collect()
    }

    /// Speed over the last history step (m/s).
    pub fn current_speed(&self, dt: f64) -> f64 {
        match self.past.last() {
            Some(p) => p[0].hypot(p[1]) / dt,
            None => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub kind: ScenarioKind,
    /// Generator branch that produced the ground-truth future.
    pub mode_label: u32,
    pub dt: f64,
    pub actors: Vec<Actor>,
    /// Crossing point of the approach lanes (world frame), when the
    /// scenario has one.
    #[serde(default)]
    pub conflict_point: Option<Point>,
}

impl Scene {
    pub fn num_actors(&self) -> usize {
        self.actors.len()
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.actors.iter().map(|a| a.pose).collect()
    }

    pub fn horizon(&self) -> usize {
        self.actors.first().map_or(0, |a| a.future.len())
    }

    pub fn history(&self) -> usize {
        self.actors.first().map_or(0, |a| a.past.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.actors.is_empty() {
            return Err(invalid(format!("scene {} has no actors", self.id)));
        }
        let (h, t) = (self.history(), self.horizon());
        for a in &self.actors {
            if a.past.len() != h || a.future.len() != t {
                return Err(invalid(format!(
                    "scene {}: ragged actor trajectories",
                    self.id
                )));
            }
            let finite = a
                .past
                .iter()
                .chain(&a.future)
                .all(|p| p[0].is_finite() && p[1].is_finite());
            if !finite || !(a.length > 0.0 && a.width > 0.0) {
                return Err(invalid(format!(
                    "scene {}: invalid actor {}",
                    self.id, a.id
                )));
            }
        }
        Ok(())
    }

    /// Reorders actors; `perm[k]` is the old index of the new `k`-th actor.
    pub fn permuted(&self, perm: &[usize]) -> Scene {
        let mut s = self.clone();
        s.actors = perm.iter().map(|&i| self.actors[i].clone()).collect();
        s
    }

    /// Ground-truth futures, `[actor][t]` in each actor's frame.
    pub fn futures(&self) -> Vec<Vec<Point>> {
        self.actors.iter().map(|a| a.future.clone()).collect()
    }
}
