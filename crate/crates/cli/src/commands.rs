//! Command implementations. Each writes through an [`Outputs`] set and
//! commits it only on success.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use serde::Serialize;

use contextnav::embedstore::Store;
use contextnav::navsim::suite::{run_suite, AgentResult, SuiteConfig};
use contextnav::navsim::{features, Pose, Scene};
use contextnav::remb::{export_store, load_store, write_remb, write_sidecar};
use contextnav::retrieval::{build_shortlist, mmr_rerank, DEFAULT_BETA, DEFAULT_SHORTLIST};
use contextnav::simgraph::{build_scene_graph, GraphVariant};

use crate::config::ExperimentConfig;
use crate::output::Outputs;
use crate::report::{metrics_rows, scene_rows, suite_label, write_csv, MetricsRow, SceneRow};

pub const DATASET_STEM: &str = "dataset";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PER_SCENE_CSV: &str = "per_scene.csv";
pub const BENCH_CSV: &str = "bench.csv";

/// Sidecar path belonging to a `REMB` file: same stem, `.jsonl`.
pub fn sidecar_for(remb: &Path) -> PathBuf {
    remb.with_extension("jsonl")
}

/// Directory-safe form of an agent label.
pub fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

/// Scene files and episode lists for every scene of the suite.
pub fn gen_scene(cfg: &ExperimentConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let suite = &cfg.suite;
    for i in 0..suite.scenes {
        let scene = suite.build_scene(i)?;
        let episodes = suite.episodes(&scene, i)?;
        out.write_json(format!("scenes/{}.json", scene.scene_id), &scene)?;
        out.write_json(format!("episodes/{}.json", scene.scene_id), &episodes)?;
        log::info!(
            "{}: {} free cells, {} episodes",
            scene.scene_id,
            scene.free_count(),
            episodes.len()
        );
    }
    Ok(())
}

/// One `REMB` file plus sidecar holding every scene's frames.
pub fn gen_dataset(cfg: &ExperimentConfig, size: usize, out: &mut Outputs) -> anyhow::Result<()> {
    let suite = &cfg.suite;
    let mut records = Vec::new();
    let mut entries = Vec::new();
    let mut dim = 0;
    for i in 0..suite.scenes {
        let scene = suite.build_scene(i)?;
        let store = suite.dataset::<f32>(&scene, i, size)?;
        dim = store.dimension();
        let (r, e) = export_store(&store);
        records.extend(r);
        entries.extend(e);
    }
    out.write(format!("{DATASET_STEM}.remb"), |w| write_remb(w, dim, &records))?;
    out.write(format!("{DATASET_STEM}.jsonl"), |w| write_sidecar(w, &entries))?;
    log::info!("{} frames over {} scenes", records.len(), suite.scenes);
    Ok(())
}

pub fn load_dataset(remb: &Path) -> anyhow::Result<Store<f32>> {
    let sidecar = sidecar_for(remb);
    load_store::<f32>(remb, &sidecar)
        .with_context(|| format!("cannot load dataset {} + {}", remb.display(), sidecar.display()))
}

/// Similarity graph per scene of a dataset. Node ids are record indices in
/// file order.
pub fn build_graph(
    cfg: &ExperimentConfig,
    dataset: &Path,
    variant: Option<GraphVariant>,
    out: &mut Outputs,
) -> anyhow::Result<()> {
    let store = load_dataset(dataset)?;
    let variant = variant.unwrap_or(cfg.suite.graph);
    let scenes: Vec<String> = store.scene_ids().map(str::to_string).collect();
    for scene in scenes {
        let g = build_scene_graph(&store, &scene, variant, cfg.suite.threshold)?;
        log::info!("{scene}: {} nodes, {} edges", g.nodes().len(), g.edges().len());
        out.write_json(format!("graphs/{scene}.json"), &g)?;
    }
    Ok(())
}

/// Where the retrieval query comes from.
#[derive(Debug, Clone)]
pub enum Query {
    /// A frame already in the dataset.
    Frame(u64),
    /// The view at a pose of a scene file.
    Pose { scene_file: PathBuf, pose: Pose },
}

#[derive(Debug, Clone, Serialize)]
pub struct Hit {
    pub frame_id: u64,
    pub score: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalReport {
    pub scene: String,
    pub k: usize,
    pub results: Vec<Hit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmr: Option<Vec<u64>>,
}

pub struct RetrieveArgs {
    pub dataset: PathBuf,
    pub scene: Option<String>,
    pub query: Query,
    pub k: usize,
    pub mmr: Option<usize>,
    pub beta: f64,
}

pub fn retrieve(args: &RetrieveArgs, out: &mut Outputs) -> anyhow::Result<RetrievalReport> {
    let store = load_dataset(&args.dataset)?;
    let (scene, query) = match &args.query {
        Query::Frame(id) => {
            let idx = store
                .index_of(*id)
                .ok_or_else(|| anyhow!("frame {id} is not in the dataset"))?;
            let scene = args.scene.clone().unwrap_or_else(|| store.meta(idx).scene_id.clone());
            (scene, store.vector(idx).to_vec())
        }
        Query::Pose { scene_file, pose } => {
            let text = std::fs::read_to_string(scene_file)
                .with_context(|| format!("cannot read scene {}", scene_file.display()))?;
            let s: Scene =
                serde_json::from_str(&text).with_context(|| format!("invalid scene {}", scene_file.display()))?;
            let scene = args.scene.clone().unwrap_or_else(|| s.scene_id.clone());
            (scene, features::<f32>(&s, pose)?)
        }
    };
    let hits = store.topk(&scene, &query, args.k)?;
    let mmr = match args.mmr {
        Some(n) => {
            let shortlist = build_shortlist(&store, &scene, &query, DEFAULT_SHORTLIST.max(n))?;
            let picked = mmr_rerank(&shortlist, n, args.beta as f32)?;
            Some(picked.into_iter().map(|i| store.frame_id(i)).collect())
        }
        None => None,
    };
    let report = RetrievalReport {
        scene,
        k: args.k,
        results: hits
            .into_iter()
            .map(|(i, s)| Hit {
                frame_id: store.frame_id(i),
                score: s,
            })
            .collect(),
        mmr,
    };
    out.write_json("retrieval.json", &report)?;
    Ok(report)
}

pub fn default_beta() -> f64 {
    DEFAULT_BETA
}

/// Run every configured agent at one dataset size.
pub fn run_agents(cfg: &ExperimentConfig, size: usize) -> anyhow::Result<Vec<AgentResult>> {
    Ok(run_suite::<f32>(&cfg.suite, &cfg.agents, size)?)
}

/// Traces (one JSON object per line and episode) plus the metrics CSV.
pub fn simulate(cfg: &ExperimentConfig, size: usize, out: &mut Outputs) -> anyhow::Result<Vec<MetricsRow>> {
    let results = run_agents(cfg, size)?;
    for r in &results {
        let dir = file_label(&r.agent.label);
        for (i, traces) in r.traces.iter().enumerate() {
            out.write(
                format!("traces/{dir}/{}.jsonl", cfg.suite.scene_id(i)),
                |w| -> anyhow::Result<()> {
                    for t in traces {
                        serde_json::to_writer(&mut *w, t)?;
                        w.write_all(b"\n")?;
                    }
                    Ok(())
                },
            )?;
        }
    }
    let label = suite_label(&cfg.suite.name, size);
    let rows = metrics_rows(&label, &results);
    out.write(METRICS_CSV, |w| write_csv(w, &rows))?;
    out.write(PER_SCENE_CSV, |w| write_csv(w, &scene_rows(&label, &results)))?;
    Ok(rows)
}

/// Dataset-size sweep: metrics for every agent at every size.
pub fn evaluate(cfg: &ExperimentConfig, sizes: &[usize], out: &mut Outputs) -> anyhow::Result<Vec<MetricsRow>> {
    if sizes.is_empty() {
        bail!("no dataset sizes to evaluate");
    }
    let mut rows = Vec::new();
    let mut per_scene: Vec<SceneRow> = Vec::new();
    for &size in sizes {
        let started = std::time::Instant::now();
        let results = run_agents(cfg, size)?;
        let label = suite_label(&cfg.suite.name, size);
        for r in metrics_rows(&label, &results) {
            log::info!("{} {}: SR {:.2} SPL {:.2} N {}", r.suite, r.agent, r.sr, r.spl, r.n);
            rows.push(r);
        }
        per_scene.extend(scene_rows(&label, &results));
        log::info!("{label} done in {:.1?}", started.elapsed());
    }
    out.write(METRICS_CSV, |w| write_csv(w, &rows))?;
    out.write(PER_SCENE_CSV, |w| write_csv(w, &per_scene))?;
    Ok(rows)
}

/// The suite a command should run with `--seed` applied.
pub fn with_seed(mut cfg: ExperimentConfig, seed: Option<u64>) -> ExperimentConfig {
    if let Some(s) = seed {
        cfg.suite = SuiteConfig { seed: s, ..cfg.suite };
    }
    cfg
}
