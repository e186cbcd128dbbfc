//! Context construction strategies and Gumbel-softmax slot selection.
//!
//! A context is a fixed-length list of database frames shown to the agent
//! at every step:
//!
//! * static: MMR-diversified neighbours of the goal, fixed per episode;
//! * dynamic: the observation's and goal's nearest frames plus frames
//!   sampled on the similarity-graph path between them, refreshed per step;
//! * random: uniform frames of the scene;
//! * oracle: frames synthesized from privileged simulator poses, either a
//!   panorama at the goal or poses spread along the geodesic.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{Store, StoreError};
use crate::navsim::scene::{Cell, Pose, Scene};
use crate::navsim::SimError;
use crate::retrieval::{build_shortlist, mmr_rerank, retrieve_goal, RetrievalError, DEFAULT_SHORTLIST};
use crate::scalar::Scalar;
use crate::simgraph::{path_to_context, GraphError, PathResult, ShortestPathTree, SimilarityGraph};

pub const DEFAULT_CONTEXT_SIZE: usize = 8;
pub const DEFAULT_TAU: f64 = 1.0;
/// Heading increment of the panorama oracle.
pub const PANORAMA_STEP_DEG: f64 = 45.0;
/// Largest gap between consecutive shortest-path oracle views, metres.
pub const ORACLE_MAX_SPACING_M: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("context size must be at least {min}, got {got}")]
    BadSize { min: usize, got: usize },
    #[error("scene {scene:?} has {have} records, fewer than the context size {need}")]
    SceneTooSmall { scene: String, have: usize, need: usize },
    #[error("selector logits must be finite and non-empty")]
    BadLogits,
    #[error("temperature must be positive and finite")]
    BadTemperature,
}

impl From<StoreError> for ContextError {
    fn from(e: StoreError) -> Self {
        ContextError::Retrieval(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStrategy {
    Static,
    Dynamic,
    Random,
    OraclePanorama,
    OracleShortestPath,
}

impl ContextStrategy {
    pub fn name(self) -> &'static str {
        match self {
            ContextStrategy::Static => "static",
            ContextStrategy::Dynamic => "dynamic",
            ContextStrategy::Random => "random",
            ContextStrategy::OraclePanorama => "oracle_panorama",
            ContextStrategy::OracleShortestPath => "oracle_shortest_path",
        }
    }
}

impl std::str::FromStr for ContextStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "static" => Ok(ContextStrategy::Static),
            "dynamic" => Ok(ContextStrategy::Dynamic),
            "random" => Ok(ContextStrategy::Random),
            "oracle_panorama" => Ok(ContextStrategy::OraclePanorama),
            "oracle_shortest_path" => Ok(ContextStrategy::OracleShortestPath),
            _ => Err(format!("unknown context strategy {s:?}")),
        }
    }
}

/// Record indices shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub slots: Vec<usize>,
    pub strategy: ContextStrategy,
}

impl Context {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Goal-conditioned context: shortlist of the goal's neighbours re-ranked
/// by MMR. When the scene holds fewer distinct frames than `size`, the
/// selection is repeated cyclically to keep the context length fixed.
pub fn build_static_context<T: Scalar>(
    store: &Store<T>,
    scene: &str,
    goal: &[T],
    size: usize,
    beta: T,
) -> Result<Context, ContextError> {
    if size == 0 {
        return Err(ContextError::BadSize { min: 1, got: 0 });
    }
    let shortlist = build_shortlist(store, scene, goal, DEFAULT_SHORTLIST.max(size))?;
    let picked = mmr_rerank(&shortlist, size, beta)?;
    let slots = picked.iter().cycle().take(size).copied().collect();
    Ok(Context {
        slots,
        strategy: ContextStrategy::Static,
    })
}

/// Result of one dynamic update.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicUpdate {
    pub context: Context,
    /// Number of leading slots written this step, in path order.
    pub fresh: usize,
    pub r_obs: usize,
    pub r_goal: usize,
    pub path: PathResult,
}

/// Per-episode planner for dynamic contexts. The goal's nearest frame is
/// fixed for the episode, so one shortest-path tree toward it answers
/// every step.
#[derive(Debug)]
pub struct DynamicPlanner<'a, T> {
    store: &'a Store<T>,
    scene: String,
    tree: ShortestPathTree<'a>,
    r_goal: usize,
}

impl<'a, T: Scalar> DynamicPlanner<'a, T> {
    pub fn new(store: &'a Store<T>, scene: &str, graph: &'a SimilarityGraph, goal: &[T]) -> Result<Self, ContextError> {
        let r_goal = retrieve_goal(store, scene, goal)?;
        Ok(Self {
            store,
            scene: scene.to_string(),
            tree: ShortestPathTree::to_target(graph, r_goal)?,
            r_goal,
        })
    }

    pub fn r_goal(&self) -> usize {
        self.r_goal
    }

    /// Update with the observation's nearest frame already known.
    pub fn update_from<R: Rng + ?Sized>(
        &self,
        r_obs: usize,
        previous: &Context,
        rng: &mut R,
    ) -> Result<DynamicUpdate, ContextError> {
        let path = self.tree.path_from(r_obs)?;
        let (slots, fresh) = path_to_context(&path, r_obs, self.r_goal, previous.len(), &previous.slots, rng)?;
        Ok(DynamicUpdate {
            context: Context {
                slots,
                strategy: ContextStrategy::Dynamic,
            },
            fresh,
            r_obs,
            r_goal: self.r_goal,
            path,
        })
    }

    pub fn update<R: Rng + ?Sized>(
        &self,
        observation: &[T],
        previous: &Context,
        rng: &mut R,
    ) -> Result<DynamicUpdate, ContextError> {
        let r_obs = retrieve_goal(self.store, &self.scene, observation)?;
        self.update_from(r_obs, previous, rng)
    }
}

/// One dynamic-context step: retrieve the observation's and goal's nearest
/// frames, plan between them on the graph, and write the path into the
/// previous context.
#[allow(clippy::too_many_arguments)]
pub fn build_dynamic_context<T: Scalar, R: Rng + ?Sized>(
    store: &Store<T>,
    scene: &str,
    graph: &SimilarityGraph,
    observation: &[T],
    goal: &[T],
    previous: &Context,
    rng: &mut R,
) -> Result<DynamicUpdate, ContextError> {
    if previous.len() < 2 {
        return Err(ContextError::BadSize {
            min: 2,
            got: previous.len(),
        });
    }
    DynamicPlanner::new(store, scene, graph, goal)?.update(observation, previous, rng)
}

/// `size` distinct frames drawn uniformly from the scene.
pub fn build_random_context<T: Scalar, R: Rng + ?Sized>(
    store: &Store<T>,
    scene: &str,
    size: usize,
    rng: &mut R,
) -> Result<Context, ContextError> {
    let part = store.partition(scene)?;
    if part.len() < size {
        return Err(ContextError::SceneTooSmall {
            scene: scene.to_string(),
            have: part.len(),
            need: size,
        });
    }
    let slots = sample(rng, part.len(), size).into_iter().map(|i| part[i]).collect();
    Ok(Context {
        slots,
        strategy: ContextStrategy::Random,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Panorama,
    ShortestPath,
}

/// A frame rendered from privileged simulator state rather than retrieved.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFrame<T> {
    pub pose: Pose,
    pub heading_deg: f64,
    pub embedding: Vec<T>,
}

/// Synthesize an oracle context.
///
/// Panorama: `size` views at the goal with headings `0°, 45°, …`.
/// Shortest path: `size` views at poses evenly spaced along the current
/// geodesic from the agent to the goal, starting at the agent and facing
/// along the path. The gap between views is capped at
/// [`ORACLE_MAX_SPACING_M`]; when the path is longer than the capped
/// spread the views cover its leading part and the goal is not included.
pub fn build_oracle_context<T: Scalar>(
    scene: &Scene,
    kind: OracleKind,
    agent: &Pose,
    goal: &Pose,
    size: usize,
) -> Result<Vec<OracleFrame<T>>, ContextError> {
    if size == 0 {
        return Err(ContextError::BadSize { min: 1, got: 0 });
    }
    for p in [agent, goal] {
        if !scene.is_navigable(p) {
            return Err(SimError::NotNavigable { x: p.x, y: p.y }.into());
        }
    }
    match kind {
        OracleKind::Panorama => {
            let embedding = scene.features.embed(goal);
            Ok((0..size)
                .map(|i| OracleFrame {
                    pose: *goal,
                    heading_deg: (i as f64 * PANORAMA_STEP_DEG) % 360.0,
                    embedding: embedding.clone(),
                })
                .collect())
        }
        OracleKind::ShortestPath => {
            let from = Cell::of_pose(agent).expect("navigable pose has a cell");
            let to = Cell::of_pose(goal).expect("navigable pose has a cell");
            let path = scene.geodesic_path(from, to).ok_or(SimError::Unreachable)?;
            let cap = (ORACLE_MAX_SPACING_M / crate::navsim::CELL_M).round() as usize;
            Ok(spread_along_capped(&path, size, cap.max(1))
                .into_iter()
                .map(|i| {
                    let pose = path[i].center();
                    let next = path[(i + 1).min(path.len() - 1)].center();
                    let heading_deg = if i + 1 < path.len() {
                        (next.y - pose.y).atan2(next.x - pose.x).to_degrees().rem_euclid(360.0)
                    } else {
                        0.0
                    };
                    OracleFrame {
                        pose,
                        heading_deg,
                        embedding: scene.features.embed(&pose),
                    }
                })
                .collect())
        }
    }
}

/// `size` indices into a path of `path.len()` cells, evenly spaced, first
/// and last included.
pub fn spread_along<P>(path: &[P], size: usize) -> Vec<usize> {
    let last = path.len() - 1;
    if size == 1 {
        return vec![last];
    }
    (0..size)
        .map(|i| ((i * last) as f64 / (size - 1) as f64).round() as usize)
        .collect()
}

/// Like [`spread_along`] but with at most `max_gap` cells between picks.
pub fn spread_along_capped<P>(path: &[P], size: usize, max_gap: usize) -> Vec<usize> {
    let last = path.len() - 1;
    if size == 1 || last <= max_gap * (size - 1) {
        return spread_along(path, size);
    }
    (0..size).map(|i| i * max_gap).collect()
}

/// Per-slot relevance logits and the sampling temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorLogits<T> {
    pub alphas: Vec<T>,
    pub tau: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Perturb with standard Gumbel noise.
    #[default]
    Sample,
    /// No noise: deterministic argmax of the logits.
    Argmax,
}

/// Gumbel-softmax selection over context slots.
///
/// Draws `g_n ~ Gumbel(0, 1)`, returns `argmax(α + g)` and the relaxed
/// weights `softmax((α + g) / τ)`. The hard choice is distributed as
/// `softmax(α)` whatever the temperature.
pub fn gumbel_select<T: Scalar, R: Rng + ?Sized>(
    logits: &SelectorLogits<T>,
    mode: SelectMode,
    rng: &mut R,
) -> Result<(usize, Vec<T>), ContextError> {
    if logits.alphas.is_empty() || logits.alphas.iter().any(|a| !a.is_finite()) {
        return Err(ContextError::BadLogits);
    }
    if !(logits.tau > T::zero() && logits.tau.is_finite()) {
        return Err(ContextError::BadTemperature);
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let perturbed: Vec<T> = logits
        .alphas
        .iter()
        .map(|&a| match mode {
            SelectMode::Sample => a + T::of(gumbel.sample(rng)),
            SelectMode::Argmax => a,
        })
        .collect();
    let scaled: Vec<T> = perturbed.iter().map(|&v| v / logits.tau).collect();
    let weights = crate::retrieval::softmax(&scaled);
    let selected = perturbed
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > perturbed[best] { i } else { best });
    Ok((selected, weights))
}

/// Per-step record of a context for offline inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDump {
    pub step: usize,
    pub strategy: ContextStrategy,
    pub slots: Vec<u64>,
    pub selected: usize,
    pub soft_weights: Vec<f64>,
}
