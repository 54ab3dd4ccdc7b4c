//! Joint scene samples: the common currency of metrics and the planner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{OrientedBox, Point, Pose2};
use crate::scene::Scene;
use crate::scenegen::mix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSampleSet {
    pub scene_id: u64,
    /// `[sample][actor][t]`, each trajectory in its actor's current frame.
    pub trajectories: Vec<Vec<Vec<Point>>>,
    pub poses: Vec<Pose2>,
    /// `(length, width)` per actor.
    pub boxes: Vec<(f64, f64)>,
}

impl SceneSampleSet {
    pub fn new(scene: &Scene, trajectories: Vec<Vec<Vec<Point>>>) -> Result<Self> {
        let s = Self {
            scene_id: scene.id,
            trajectories,
            poses: scene.poses(),
            boxes: scene.actors.iter().map(|a| (a.length, a.width)).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// The ground truth as a single-sample set.
    pub fn ground_truth(scene: &Scene) -> Result<Self> {
        Self::new(scene, vec![scene.futures()])
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_actors(&self) -> usize {
        self.poses.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|s| s.first())
            .map_or(0, |t| t.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.poses.len();
        if self.boxes.len() != n {
            return Err(invalid("sample set: boxes and poses differ in length"));
        }
        let t = self.horizon();
        for sample in &self.trajectories {
            if sample.len() != n || sample.iter().any(|tr| tr.len() != t) {
                return Err(invalid("sample set: ragged trajectories"));
            }
            if sample
                .iter()
                .flatten()
                .any(|p| !(p[0].is_finite() && p[1].is_finite()))
            {
                return Err(invalid("sample set: non-finite waypoint"));
            }
        }
        Ok(())
    }

    /// `[sample][actor][t]` in world coordinates.
    pub fn world(&self) -> Vec<Vec<Vec<Point>>> {
        self.trajectories
            .iter()
            .map(|sample| {
                sample
                    .iter()
                    .zip(&self.poses)
                    .map(|(tr, pose)| tr.iter().map(|&p| pose.to_world(p)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn footprint(&self, actor: usize, at: Pose2) -> OrientedBox {
        let (l, w) = self.boxes[actor];
        OrientedBox::new(at, l, w)
    }

    /// Keeps the first `k` samples.
    pub fn truncated(&self, k: usize) -> Self {
        let mut s = self.clone();
        s.trajectories.truncate(k);
        s
    }
}

/// Independent noise stream for one (draw, sample, actor) triple. Keying on
/// the actor id rather than its position keeps sampling equivariant under
/// actor reordering.
pub fn noise_rng(base: u64, sample: usize, actor_id: u32) -> ChaCha8Rng {
    let k = mix64(base ^ mix64(sample as u64 ^ mix64(actor_id as u64 ^ 0xA5A5_5A5A)));
    ChaCha8Rng::seed_from_u64(k)
}
