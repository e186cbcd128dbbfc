//! Scripted agents.
//!
//! * `oracle` walks the grid geodesic and stops on the goal.
//! * `goal_greedy` moves to whichever free neighbour looks most like the
//!   goal and stops once the view matches the goal closely enough.
//! * `context_follower` does the same hill-climb, but toward the earliest
//!   context frame it has not reached yet, so retrieved waypoints can lead
//!   it around walls. It uses the same stop rule as `goal_greedy`.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::Episode;
use super::metrics::step_reward;
use super::scene::{Cell, Pose, Scene, CELL_M};
use super::{SimError, SUCCESS_RADIUS_M};
use crate::contextkit::{
    build_oracle_context, build_random_context, build_static_context, gumbel_select, Context, ContextDump,
    ContextStrategy, DynamicPlanner, OracleKind, SelectMode, SelectorLogits, DEFAULT_CONTEXT_SIZE, DEFAULT_TAU,
};
use crate::embedstore::Store;
use crate::retrieval::{retrieve_goal, DEFAULT_BETA};
use crate::scalar::{dot, Scalar};
use crate::simgraph::SimilarityGraph;

pub const DEFAULT_MAX_STEPS: usize = 500;
pub const DEFAULT_STOP_THRESHOLD: f64 = 0.95;
pub const DEFAULT_WAYPOINT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    N,
    S,
    E,
    W,
    #[serde(rename = "STOP")]
    Stop,
}

const MOVES: [Action; 4] = [Action::N, Action::S, Action::E, Action::W];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Oracle,
    GoalGreedy,
    ContextFollower,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Oracle => "oracle",
            AgentKind::GoalGreedy => "goal_greedy",
            AgentKind::ContextFollower => "context_follower",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "oracle" => Ok(AgentKind::Oracle),
            "goal_greedy" => Ok(AgentKind::GoalGreedy),
            "context_follower" => Ok(AgentKind::ContextFollower),
            _ => Err(format!("unknown agent {s:?}")),
        }
    }
}

fn default_size() -> usize {
    DEFAULT_CONTEXT_SIZE
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_strategy() -> ContextStrategy {
    ContextStrategy::Dynamic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    #[serde(default = "default_strategy")]
    pub strategy: ContextStrategy,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub select: SelectMode,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            size: default_size(),
            beta: default_beta(),
            tau: default_tau(),
            select: SelectMode::default(),
        }
    }
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}
fn default_stop() -> f64 {
    DEFAULT_STOP_THRESHOLD
}
fn default_waypoint() -> f64 {
    DEFAULT_WAYPOINT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// STOP once cosine(view, goal) reaches this.
    #[serde(default = "default_stop")]
    pub stop_threshold: f64,
    /// A waypoint counts as reached once cosine(view, waypoint) reaches this.
    #[serde(default = "default_waypoint")]
    pub waypoint_threshold: f64,
    #[serde(default)]
    pub context: ContextConfig,
    /// Keep a per-step [`ContextDump`] in the trace.
    #[serde(default)]
    pub record_contexts: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: default_max_steps(),
            stop_threshold: default_stop(),
            waypoint_threshold: default_waypoint(),
            context: ContextConfig::default(),
            record_contexts: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub success: bool,
    /// ℓ: metres travelled.
    pub path_length: f64,
    /// ℓ*: geodesic start→goal.
    pub shortest_length: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contexts: Vec<ContextDump>,
}

/// A scene with cached per-cell embeddings and, optionally, the retrieval
/// database used by context-following agents.
pub struct World<'a, T> {
    pub scene: &'a Scene,
    feats: Vec<Vec<T>>,
    database: Option<(&'a Store<T>, &'a SimilarityGraph)>,
    nearest: Vec<OnceLock<usize>>,
}

impl<'a, T: Scalar> World<'a, T> {
    pub fn new(scene: &'a Scene) -> Self {
        let n = scene.width * scene.height;
        let feats = (0..n)
            .map(|i| {
                let c = scene.cell_at(i);
                if scene.is_free(c) {
                    scene.features.embed(&c.center())
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self {
            scene,
            feats,
            database: None,
            nearest: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn with_database(mut self, store: &'a Store<T>, graph: &'a SimilarityGraph) -> Self {
        self.database = Some((store, graph));
        self
    }

    /// Cached embedding of a free cell.
    pub fn feature(&self, c: Cell) -> &[T] {
        &self.feats[self.scene.index(c)]
    }

    /// Nearest database frame to the view from `c`, memoized per cell.
    pub fn nearest_frame(&self, c: Cell) -> Result<usize, SimError> {
        let (store, _) = self
            .database
            .ok_or_else(|| SimError::BadConfig("no database attached".into()))?;
        let slot = &self.nearest[self.scene.index(c)];
        if let Some(&r) = slot.get() {
            return Ok(r);
        }
        let r = retrieve_goal(store, &self.scene.scene_id, self.feature(c))
            .map_err(crate::contextkit::ContextError::from)?;
        Ok(*slot.get_or_init(|| r))
    }
}

struct Recorder<'s> {
    scene: &'s Scene,
    goal_field: super::scene::DistanceField,
    cur: Cell,
    trace: AgentTrace,
}

impl<'s> Recorder<'s> {
    fn geo(&self, c: Cell) -> f64 {
        self.goal_field.meters(c).expect("agent stays in the goal's component")
    }

    fn step(&mut self, action: Action, next: Cell) {
        let r = step_reward(self.geo(self.cur), self.geo(next), false);
        self.cur = next;
        self.trace.actions.push(action);
        self.trace.poses.push(next.center());
        self.trace.rewards.push(r);
        self.trace.path_length += CELL_M;
    }

    fn stop(&mut self) {
        let g = self.geo(self.cur);
        let success = g <= SUCCESS_RADIUS_M + 1e-9;
        self.trace.actions.push(Action::Stop);
        self.trace.poses.push(self.cur.center());
        self.trace.rewards.push(step_reward(g, g, success));
        self.trace.success = success;
    }

    fn steps(&self) -> usize {
        self.trace.actions.len()
    }

    /// Free neighbour whose view best matches `target`; first in N, S, E, W
    /// order on ties.
    fn climb<T: Scalar>(&self, world: &World<'_, T>, target: &[T]) -> Option<(Action, Cell)> {
        let mut best: Option<(Action, Cell, T)> = None;
        for (k, n) in self.scene.neighbours(self.cur) {
            let s = dot(world.feature(n), target);
            if best.as_ref().is_none_or(|b| s > b.2) {
                best = Some((MOVES[k], n, s));
            }
        }
        best.map(|(a, c, _)| (a, c))
    }
}

fn cell_of(scene: &Scene, p: &Pose) -> Result<Cell, SimError> {
    Cell::of_pose(p)
        .filter(|&c| scene.is_free(c))
        .ok_or(SimError::NotNavigable { x: p.x, y: p.y })
}

/// Embeddings the follower may steer toward this step, in path order.
enum Waypoints<'w, T> {
    Frames(Vec<&'w [T]>),
    Synthetic(Vec<Vec<T>>),
}

impl<T> Waypoints<'_, T> {
    fn iter(&self) -> Box<dyn Iterator<Item = &[T]> + '_> {
        match self {
            Waypoints::Frames(v) => Box::new(v.iter().copied()),
            Waypoints::Synthetic(v) => Box::new(v.iter().map(Vec::as_slice)),
        }
    }
}

/// Run one episode.
pub fn run_agent<T: Scalar, R: Rng + ?Sized>(
    world: &World<'_, T>,
    episode: &Episode,
    kind: AgentKind,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<AgentTrace, SimError> {
    if cfg.max_steps == 0 {
        return Err(SimError::BadConfig("max_steps must be at least 1".into()));
    }
    let scene = world.scene;
    let start = cell_of(scene, &episode.start)?;
    let goal = cell_of(scene, &episode.goal)?;
    let goal_field = scene.distance_field(goal);
    let shortest = goal_field.meters(start).ok_or(SimError::Unreachable)?;
    let mut rec = Recorder {
        scene,
        goal_field,
        cur: start,
        trace: AgentTrace {
            poses: vec![start.center()],
            shortest_length: shortest,
            ..AgentTrace::default()
        },
    };

    match kind {
        AgentKind::Oracle => {
            let path = scene.geodesic_path(start, goal).ok_or(SimError::Unreachable)?;
            for &next in &path[1..] {
                if rec.steps() + 1 >= cfg.max_steps {
                    break;
                }
                let k = move_between(rec.cur, next);
                rec.step(MOVES[k], next);
            }
            rec.stop();
        }
        AgentKind::GoalGreedy => {
            let goal_emb: Vec<T> = episode.goal_embedding(scene);
            let stop = T::of(cfg.stop_threshold);
            while rec.steps() < cfg.max_steps {
                if dot(world.feature(rec.cur), &goal_emb) >= stop {
                    rec.stop();
                    break;
                }
                let Some((a, n)) = rec.climb(world, &goal_emb) else {
                    rec.stop();
                    break;
                };
                rec.step(a, n);
            }
        }
        AgentKind::ContextFollower => follow(world, episode, cfg, &mut rec, rng)?,
    }
    Ok(rec.trace)
}

fn move_between(a: Cell, b: Cell) -> usize {
    super::scene::NEIGHBOUR_OFFSETS
        .iter()
        .position(|&(dx, dy)| a.x.checked_add_signed(dx) == Some(b.x) && a.y.checked_add_signed(dy) == Some(b.y))
        .expect("path cells are 4-adjacent")
}

fn follow<T: Scalar, R: Rng + ?Sized>(
    world: &World<'_, T>,
    episode: &Episode,
    cfg: &AgentConfig,
    rec: &mut Recorder<'_>,
    rng: &mut R,
) -> Result<(), SimError> {
    let scene = world.scene;
    let sid = scene.scene_id.as_str();
    let ccfg = &cfg.context;
    let goal_emb: Vec<T> = episode.goal_embedding(scene);
    let stop = T::of(cfg.stop_threshold);
    let arrive = T::of(cfg.waypoint_threshold);
    let needs_db = matches!(
        ccfg.strategy,
        ContextStrategy::Static | ContextStrategy::Dynamic | ContextStrategy::Random
    );
    let db = if needs_db {
        Some(
            world
                .database
                .ok_or_else(|| SimError::BadConfig("context strategy needs a database".into()))?,
        )
    } else {
        None
    };

    let mut context: Option<Context> = match (ccfg.strategy, db) {
        (ContextStrategy::Static | ContextStrategy::Dynamic, Some((store, _))) => Some(build_static_context(
            store,
            sid,
            &goal_emb,
            ccfg.size,
            T::of(ccfg.beta),
        )?),
        (ContextStrategy::Random, Some((store, _))) => Some(build_random_context(store, sid, ccfg.size, rng)?),
        _ => None,
    };
    let planner = match (ccfg.strategy, db) {
        (ContextStrategy::Dynamic, Some((store, graph))) => Some(DynamicPlanner::new(store, sid, graph, &goal_emb)?),
        _ => None,
    };

    while rec.steps() < cfg.max_steps {
        let obs = world.feature(rec.cur);
        if dot(obs, &goal_emb) >= stop {
            rec.stop();
            break;
        }
        let waypoints: Waypoints<'_, T> = match ccfg.strategy {
            ContextStrategy::Dynamic => {
                let (store, _) = db.expect("checked above");
                let planner = planner.as_ref().expect("built above");
                let r_obs = world.nearest_frame(rec.cur)?;
                let upd = planner.update_from(r_obs, context.as_ref().expect("initialized"), rng)?;
                let fresh = upd.context.slots[..upd.fresh]
                    .iter()
                    .map(|&r| store.vector(r))
                    .collect();
                context = Some(upd.context);
                Waypoints::Frames(fresh)
            }
            ContextStrategy::Static | ContextStrategy::Random => {
                let (store, _) = db.expect("checked above");
                Waypoints::Frames(
                    context
                        .as_ref()
                        .unwrap()
                        .slots
                        .iter()
                        .map(|&r| store.vector(r))
                        .collect(),
                )
            }
            ContextStrategy::OraclePanorama | ContextStrategy::OracleShortestPath => {
                let kind = if ccfg.strategy == ContextStrategy::OraclePanorama {
                    OracleKind::Panorama
                } else {
                    OracleKind::ShortestPath
                };
                let frames = build_oracle_context::<T>(scene, kind, &rec.cur.center(), &episode.goal, ccfg.size)?;
                Waypoints::Synthetic(frames.into_iter().map(|f| f.embedding).collect())
            }
        };

        if cfg.record_contexts {
            let alphas: Vec<T> = waypoints.iter().map(|w| dot(w, obs)).collect();
            let (selected, weights) = gumbel_select(
                &SelectorLogits {
                    alphas,
                    tau: T::of(ccfg.tau),
                },
                ccfg.select,
                rng,
            )?;
            let slots = match (&context, db) {
                (Some(c), Some((store, _))) => c.slots.iter().map(|&r| store.frame_id(r)).collect(),
                _ => Vec::new(),
            };
            rec.trace.contexts.push(ContextDump {
                step: rec.steps(),
                strategy: ccfg.strategy,
                slots,
                selected,
                soft_weights: weights.into_iter().map(Scalar::as_f64).collect(),
            });
        }

        let target = waypoints.iter().find(|w| dot(w, obs) < arrive).unwrap_or(&goal_emb);
        let Some((a, n)) = rec.climb(world, target) else {
            rec.stop();
            break;
        };
        rec.step(a, n);
    }
    Ok(())
}
