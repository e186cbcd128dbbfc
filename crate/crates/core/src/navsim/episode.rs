//! Navigation episodes and the episode sampler.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{geodesic, Cell, Pose, Scene};
use super::SimError;
use crate::scalar::Scalar;

/// Episodes shorter than this are rejected as trivial.
pub const MIN_EPISODE_GEODESIC_M: f64 = 1.5;
const SAMPLE_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: Pose,
    pub goal: Pose,
    /// Geodesic start→goal distance, metres.
    #[serde(default)]
    pub geodesic_start: f64,
}

impl Episode {
    /// Validate and fill in the geodesic distance.
    pub fn new(scene: &Scene, start: Pose, goal: Pose) -> Result<Self, SimError> {
        for p in [&start, &goal] {
            if !scene.is_navigable(p) {
                return Err(SimError::NotNavigable { x: p.x, y: p.y });
            }
        }
        let geodesic_start = geodesic(scene, &start, &goal).ok_or(SimError::Unreachable)?;
        Ok(Self {
            start,
            goal,
            geodesic_start,
        })
    }

    pub fn goal_embedding<T: Scalar>(&self, scene: &Scene) -> Vec<T> {
        scene.features.embed(&self.goal)
    }
}

/// Draw `count` solvable episodes with start and goal at cell centres and
/// geodesic distance at least [`MIN_EPISODE_GEODESIC_M`].
pub fn sample_episodes<R: Rng + ?Sized>(scene: &Scene, count: usize, rng: &mut R) -> Result<Vec<Episode>, SimError> {
    let free: Vec<Cell> = scene.free_cells();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > SAMPLE_ATTEMPTS {
            return Err(SimError::NoPairs);
        }
        let (s, g) = (
            *free.choose(rng).ok_or(SimError::NoPairs)?,
            *free.choose(rng).ok_or(SimError::NoPairs)?,
        );
        let Some(d) = scene.distance_field(g).meters(s) else {
            continue;
        };
        if d < MIN_EPISODE_GEODESIC_M {
            continue;
        }
        out.push(Episode {
            start: s.center(),
            goal: g.center(),
            geodesic_start: d,
        });
    }
    Ok(out)
}
