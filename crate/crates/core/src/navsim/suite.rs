//! Seeded evaluation suites: scenes, datasets, graphs and episodes built
//! from one configuration, and agents run over all of them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{run_agent, AgentConfig, AgentKind, AgentTrace, World};
use super::dataset::generate_dataset;
use super::episode::{sample_episodes, Episode};
use super::metrics::{compute_metrics, Metrics};
use super::scene::{synth_scene, Scene, SceneKind, SceneSpec};
use super::SimError;
use crate::contextkit::ContextStrategy;
use crate::embedstore::{Store, StoreError};
use crate::scalar::Scalar;
use crate::simgraph::{build_scene_graph, GraphError, GraphVariant, SimilarityGraph};

/// SplitMix64 finalizer over a seed and two stream labels.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SCENE: u64 = 0;
const STREAM_EPISODES: u64 = 1;
const STREAM_DATASET: u64 = 2;
const STREAM_AGENT: u64 = 1000;

fn default_graph() -> GraphVariant {
    GraphVariant::Swg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    /// Template; each scene gets its own derived seed.
    pub scene: SceneSpec,
    pub scenes: usize,
    pub episodes_per_scene: usize,
    pub dataset_size: usize,
    #[serde(default = "default_graph")]
    pub graph: GraphVariant,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub agent: AgentConfig,
    pub seed: u64,
}

impl SuiteConfig {
    /// 10 aliasing 3×3-room mazes, 50 episodes each, 1,000-frame datasets,
    /// sparse weighted graph, 8-slot dynamic contexts.
    pub fn default_maze() -> Self {
        let mut scene = SceneSpec::new(54, 54, SceneKind::Maze, 0);
        scene.features.aliasing = true;
        Self {
            name: "maze".into(),
            scene,
            scenes: 10,
            episodes_per_scene: 50,
            dataset_size: 1000,
            graph: GraphVariant::Swg,
            threshold: None,
            agent: AgentConfig::default(),
            seed: 2024,
        }
    }

    pub fn scene_id(&self, i: usize) -> String {
        format!("{}-{i:02}", self.name)
    }

    pub fn build_scene(&self, i: usize) -> Result<Scene, SimError> {
        let mut spec = self.scene.clone();
        spec.seed = mix_seed(self.seed ^ self.scene.seed, i as u64, STREAM_SCENE);
        synth_scene(&spec, self.scene_id(i))
    }

    pub fn episodes(&self, scene: &Scene, i: usize) -> Result<Vec<Episode>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, i as u64, STREAM_EPISODES));
        sample_episodes(scene, self.episodes_per_scene, &mut rng)
    }

    /// Frame ids of scene `i` start at `i << 32`.
    pub fn dataset<T: Scalar>(&self, scene: &Scene, i: usize, size: usize) -> Result<Store<T>, SuiteError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, i as u64, STREAM_DATASET));
        let recs = generate_dataset::<T, _>(scene, size, (i as u64) << 32, &mut rng)?;
        let mut store = Store::new(scene.features.dim())?;
        store.add_batch(recs)?;
        Ok(store)
    }

    pub fn agent_rng(&self, scene: usize, episode: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, scene as u64, STREAM_AGENT + episode as u64))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Everything an agent needs for one scene.
pub struct PreparedScene<T> {
    pub index: usize,
    pub scene: Scene,
    pub episodes: Vec<Episode>,
    pub store: Store<T>,
    pub graph: SimilarityGraph,
}

pub fn prepare_scene<T: Scalar>(
    cfg: &SuiteConfig,
    i: usize,
    dataset_size: usize,
) -> Result<PreparedScene<T>, SuiteError> {
    let scene = cfg.build_scene(i)?;
    let episodes = cfg.episodes(&scene, i)?;
    let store = cfg.dataset::<T>(&scene, i, dataset_size)?;
    let graph = build_scene_graph(&store, &scene.scene_id, cfg.graph, cfg.threshold)?;
    Ok(PreparedScene {
        index: i,
        scene,
        episodes,
        store,
        graph,
    })
}

/// An agent plus the context strategy it uses (ignored by non-context
/// agents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub label: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub strategy: Option<ContextStrategy>,
}

impl AgentSpec {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            label: kind.name().to_string(),
            kind,
            strategy: None,
        }
    }

    pub fn follower(strategy: ContextStrategy) -> Self {
        Self {
            label: format!("context_follower[{}]", strategy.name()),
            kind: AgentKind::ContextFollower,
            strategy: Some(strategy),
        }
    }

    fn config(&self, base: &AgentConfig) -> AgentConfig {
        let mut c = base.clone();
        if let Some(s) = self.strategy {
            c.context.strategy = s;
        }
        c
    }
}

/// Traces of one agent on one scene, in episode order.
pub fn run_scene<T: Scalar>(
    cfg: &SuiteConfig,
    prepared: &PreparedScene<T>,
    agent: &AgentSpec,
) -> Result<Vec<AgentTrace>, SimError> {
    let world = World::new(&prepared.scene).with_database(&prepared.store, &prepared.graph);
    let acfg = agent.config(&cfg.agent);
    prepared
        .episodes
        .par_iter()
        .enumerate()
        .map(|(j, e)| {
            let mut rng = cfg.agent_rng(prepared.index, j);
            run_agent(&world, e, agent.kind, &acfg, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResult {
    pub agent: AgentSpec,
    pub overall: Metrics,
    pub per_scene: Vec<Metrics>,
    pub traces: Vec<Vec<AgentTrace>>,
}

/// Run every agent on every scene of the suite at one dataset size.
pub fn run_suite<T: Scalar>(
    cfg: &SuiteConfig,
    agents: &[AgentSpec],
    dataset_size: usize,
) -> Result<Vec<AgentResult>, SuiteError> {
    let mut traces: Vec<Vec<Vec<AgentTrace>>> = vec![Vec::new(); agents.len()];
    for i in 0..cfg.scenes {
        let prepared = prepare_scene::<T>(cfg, i, dataset_size)?;
        for (a, agent) in agents.iter().enumerate() {
            traces[a].push(run_scene(cfg, &prepared, agent)?);
        }
    }
    agents
        .iter()
        .zip(traces)
        .map(|(agent, per)| {
            let flat: Vec<AgentTrace> = per.iter().flatten().cloned().collect();
            Ok(AgentResult {
                agent: agent.clone(),
                overall: compute_metrics(&flat)?,
                per_scene: per.iter().map(|t| compute_metrics(t)).collect::<Result<_, _>>()?,
                traces: per,
            })
        })
        .collect()
}
