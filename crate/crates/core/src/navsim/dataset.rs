//! Retrieval database generation by replaying shortest-path trajectories.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::scene::{Cell, Scene};
use super::SimError;
use crate::embedstore::EmbeddingRecord;
use crate::scalar::Scalar;

const PAIR_ATTEMPTS: usize = 1000;

/// Sample a start cell and a distinct goal reachable from it.
fn sample_pair<R: Rng + ?Sized>(scene: &Scene, free: &[Cell], rng: &mut R) -> Option<(Cell, Cell)> {
    for _ in 0..PAIR_ATTEMPTS {
        let start = *free.choose(rng)?;
        let goal = *free.choose(rng)?;
        if start != goal && scene.distance_field(goal).steps(start).is_some() {
            return Some((start, goal));
        }
    }
    None
}

/// Record `target_count` frames by repeatedly picking a random start and
/// goal and walking one shortest path between them, one frame per visited
/// cell. Equal-length continuations are chosen at random so repeated
/// pairs still spread over the free space.
///
/// Frame ids are `first_frame_id, first_frame_id + 1, …`. Each record keeps
/// its pose as evaluation metadata.
pub fn generate_dataset<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene,
    target_count: usize,
    first_frame_id: u64,
    rng: &mut R,
) -> Result<Vec<EmbeddingRecord<T>>, SimError> {
    let free = scene.free_cells();
    let mut out = Vec::with_capacity(target_count);
    while out.len() < target_count {
        let (start, goal) = sample_pair(scene, &free, rng).ok_or(SimError::NoPairs)?;
        let path = scene
            .geodesic_path_with(start, goal, |opts| {
                *opts.choose(rng).expect("a shortest path continues")
            })
            .ok_or(SimError::NoPairs)?;
        for cell in path {
            if out.len() == target_count {
                break;
            }
            let pose = cell.center();
            let id = first_frame_id + out.len() as u64;
            out.push(
                EmbeddingRecord::new(id, scene.scene_id.clone(), scene.features.embed(&pose))
                    .with_pose(pose.as_array()),
            );
        }
    }
    Ok(out)
}
