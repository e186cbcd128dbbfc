//! Metric tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use contextnav::navsim::metrics::Metrics;
use contextnav::navsim::suite::AgentResult;

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub agent: String,
    pub suite: String,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

/// One row of the per-scene CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub agent: String,
    pub suite: String,
    pub scene: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Suite label for a run at one dataset size, e.g. `maze@1000`.
pub fn suite_label(name: &str, size: usize) -> String {
    format!("{name}@{size}")
}

/// Fixed precision so reruns give identical bytes.
fn round(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn row(agent: &str, suite: &str, m: &Metrics) -> MetricsRow {
    MetricsRow {
        agent: agent.to_string(),
        suite: suite.to_string(),
        sr: round(m.sr),
        spl: round(m.spl),
        n: m.n,
    }
}

pub fn metrics_rows(suite: &str, results: &[AgentResult]) -> Vec<MetricsRow> {
    results.iter().map(|r| row(&r.agent.label, suite, &r.overall)).collect()
}

pub fn scene_rows(suite: &str, results: &[AgentResult]) -> Vec<SceneRow> {
    results
        .iter()
        .flat_map(|r| {
            r.per_scene.iter().enumerate().map(|(i, m)| {
                let base = row(&r.agent.label, suite, m);
                SceneRow {
                    agent: base.agent,
                    suite: base.suite,
                    scene: i,
                    sr: base.sr,
                    spl: base.spl,
                    n: base.n,
                }
            })
        })
        .collect()
}

pub fn write_csv<R: Serialize>(w: &mut dyn Write, rows: &[R]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: serde::de::DeserializeOwned>(path: &std::path::Path) -> csv::Result<Vec<R>> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
