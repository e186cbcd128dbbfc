//! Gridworld navigation harness: scenes, synthetic features, dataset
//! generation, scripted agents and SR/SPL evaluation.

pub mod agent;
pub mod dataset;
pub mod episode;
pub mod features;
pub mod metrics;
pub mod scene;
pub mod suite;

use thiserror::Error;

pub use agent::{run_agent, Action, AgentConfig, AgentKind, AgentTrace, World};
pub use dataset::generate_dataset;
pub use episode::{sample_episodes, Episode};
pub use features::{FeatureMap, FeatureSpec};
pub use metrics::{compute_metrics, step_reward, Metrics};
pub use scene::{geodesic, synth_scene, Cell, Pose, Scene, SceneKind, SceneSpec, CELL_M};

/// STOP within this geodesic distance of the goal counts as success.
pub const SUCCESS_RADIUS_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error("pose ({x:.3}, {y:.3}) is not navigable")]
    NotNavigable { x: f64, y: f64 },
    #[error("no navigable start/goal pair exists")]
    NoPairs,
    #[error("goal is unreachable from start")]
    Unreachable,
    #[error("empty trace list")]
    NoTraces,
    #[error("agent configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Context(#[from] Box<crate::contextkit::ContextError>),
}

impl From<crate::contextkit::ContextError> for SimError {
    fn from(e: crate::contextkit::ContextError) -> Self {
        SimError::Context(Box::new(e))
    }
}

/// Embedding of the view at `pose`.
pub fn features<T: crate::Scalar>(scene: &Scene, pose: &Pose) -> Result<Vec<T>, SimError> {
    if !scene.is_navigable(pose) {
        return Err(SimError::NotNavigable { x: pose.x, y: pose.y });
    }
    Ok(scene.features.embed(pose))
}
