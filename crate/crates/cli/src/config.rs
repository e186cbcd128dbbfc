//! Experiment configuration, read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use contextnav::contextkit::ContextStrategy;
use contextnav::navsim::suite::{AgentSpec, SuiteConfig};
use contextnav::navsim::AgentKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_agents() -> Vec<AgentSpec> {
    vec![
        AgentSpec::new(AgentKind::GoalGreedy),
        AgentSpec::follower(ContextStrategy::Dynamic),
        AgentSpec::follower(ContextStrategy::OracleShortestPath),
    ]
}

fn default_sweep() -> Vec<usize> {
    vec![100, 1_000, 10_000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "BenchConfig::default_sizes")]
    pub sizes: Vec<usize>,
    /// Queries timed per stage and size.
    #[serde(default = "BenchConfig::default_queries")]
    pub queries: usize,
    /// Graph stages run on at most this many records of the store, since
    /// the dense affinity is quadratic.
    #[serde(default = "BenchConfig::default_graph_nodes")]
    pub graph_nodes: usize,
}

impl BenchConfig {
    fn default_sizes() -> Vec<usize> {
        vec![100, 1_000, 10_000, 100_000]
    }
    fn default_queries() -> usize {
        100
    }
    fn default_graph_nodes() -> usize {
        2_000
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: Self::default_sizes(),
            queries: Self::default_queries(),
            graph_nodes: Self::default_graph_nodes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Scenes, episodes, dataset size, graph and agent settings, seed.
    pub suite: SuiteConfig,
    #[serde(default = "default_agents")]
    pub agents: Vec<AgentSpec>,
    /// Dataset sizes swept by `evaluate`.
    #[serde(default = "default_sweep")]
    pub sweep_sizes: Vec<usize>,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::default_maze(),
            agents: default_agents(),
            sweep_sizes: default_sweep(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.suite;
        if s.scenes == 0 || s.episodes_per_scene == 0 || s.dataset_size == 0 {
            return Err(ConfigError::Invalid(
                "scenes, episodes_per_scene and dataset_size must be positive".into(),
            ));
        }
        if self.agents.is_empty() {
            return Err(ConfigError::Invalid("no agents".into()));
        }
        let mut labels: Vec<&str> = self.agents.iter().map(|a| a.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.agents.len() {
            return Err(ConfigError::Invalid("agent labels must be unique".into()));
        }
        if self.sweep_sizes.is_empty() || self.sweep_sizes.contains(&0) {
            return Err(ConfigError::Invalid("sweep_sizes must be positive".into()));
        }
        if self.bench.sizes.contains(&0) || self.bench.queries == 0 || self.bench.graph_nodes < 2 {
            return Err(ConfigError::Invalid(
                "bench sizes, queries and graph_nodes must be positive".into(),
            ));
        }
        Ok(())
    }
}
