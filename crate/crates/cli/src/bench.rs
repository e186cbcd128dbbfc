//! Per-stage latency of the retrieval pipeline across store sizes.

use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use contextnav::contextkit::{build_dynamic_context, build_static_context};
use contextnav::embedstore::{EmbeddingRecord, Store};
use contextnav::navsim::generate_dataset;
use contextnav::navsim::suite::mix_seed;
use contextnav::retrieval::{build_shortlist, mmr_rerank, DEFAULT_SHORTLIST};
use contextnav::simgraph::{build_scene_graph, shortest_path};

use crate::config::ExperimentConfig;

pub const INGEST_BATCH: usize = 1_000;
const STREAM_BENCH: u64 = 7_000;

/// One CSV row. `stage`, `size`, `nodes`, `ops` and `result_hash` depend
/// only on config and seed; the remaining columns are timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: String,
    /// Records in the store.
    pub size: usize,
    /// Records the stage operates on (graph stages use a prefix).
    pub nodes: usize,
    /// Timed operations.
    pub ops: usize,
    /// FNV-1a over the stage outputs.
    pub result_hash: String,
    pub total_ms: f64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

pub const TIMING_COLUMNS: [&str; 4] = ["total_ms", "mean_us", "p50_us", "p95_us"];

#[derive(Default)]
struct Fnv(u64);

impl Fnv {
    fn add(&mut self, x: u64) {
        let mut h = if self.0 == 0 { 0xcbf2_9ce4_8422_2325 } else { self.0 };
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.0 = h;
    }
    fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

fn row(stage: &str, size: usize, nodes: usize, hash: &Fnv, samples: &mut [Duration]) -> BenchRow {
    samples.sort_unstable();
    let us = |d: Duration| (d.as_secs_f64() * 1e6 * 1000.0).round() / 1000.0;
    let total: Duration = samples.iter().sum();
    let n = samples.len().max(1);
    let pick = |q: f64| {
        samples
            .get(((n - 1) as f64 * q).round() as usize)
            .copied()
            .unwrap_or_default()
    };
    BenchRow {
        stage: stage.to_string(),
        size,
        nodes,
        ops: samples.len(),
        result_hash: hash.hex(),
        total_ms: (total.as_secs_f64() * 1e3 * 1000.0).round() / 1000.0,
        mean_us: us(total / n as u32),
        p50_us: us(pick(0.5)),
        p95_us: us(pick(0.95)),
    }
}

fn timed<R>(samples: &mut Vec<Duration>, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    samples.push(t.elapsed());
    r
}

/// Run all stages at every configured size.
pub fn run(cfg: &ExperimentConfig, mut progress: impl FnMut(&BenchRow)) -> anyhow::Result<Vec<BenchRow>> {
    let suite = &cfg.suite;
    let scene = suite.build_scene(0)?;
    let sid = scene.scene_id.clone();
    let ctx = &suite.agent.context;
    let beta = ctx.beta as f32;
    let free = scene.free_cells();
    let mut rows = Vec::new();
    let mut emit = |r: BenchRow, rows: &mut Vec<BenchRow>| {
        progress(&r);
        rows.push(r);
    };

    for &size in &cfg.bench.sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(suite.seed, size as u64, STREAM_BENCH));
        let records: Vec<EmbeddingRecord<f32>> = generate_dataset(&scene, size, 0, &mut rng)?;
        let queries: Vec<Vec<f32>> = (0..cfg.bench.queries)
            .map(|_| {
                scene
                    .features
                    .embed(&free.choose(&mut rng).expect("scene has free cells").center())
            })
            .collect();

        // ingest, per record
        let mut store = Store::new(scene.features.dim())?;
        let mut samples = Vec::new();
        let mut hash = Fnv::default();
        for batch in records.chunks(INGEST_BATCH) {
            let batch = batch.to_vec();
            let t = Instant::now();
            let range = store.add_batch(batch)?;
            let per = t.elapsed() / range.len().max(1) as u32;
            samples.extend(std::iter::repeat_n(per, range.len()));
            hash.add(range.end as u64);
        }
        emit(row("ingest", size, size, &hash, &mut samples), &mut rows);

        let _ = store.topk(&sid, &queries[0], DEFAULT_SHORTLIST)?;
        let (mut samples, mut hash) = (Vec::new(), Fnv::default());
        for q in &queries {
            let hits = timed(&mut samples, || store.topk(&sid, q, DEFAULT_SHORTLIST))?;
            hits.iter().for_each(|&(i, _)| hash.add(store.frame_id(i)));
        }
        emit(row("topk", size, size, &hash, &mut samples), &mut rows);

        let (mut samples, mut hash) = (Vec::new(), Fnv::default());
        for q in &queries {
            let picked = timed(&mut samples, || -> anyhow::Result<Vec<usize>> {
                let sl = build_shortlist(&store, &sid, q, DEFAULT_SHORTLIST.max(ctx.size))?;
                Ok(mmr_rerank(&sl, ctx.size, beta)?)
            })?;
            picked.iter().for_each(|&i| hash.add(store.frame_id(i)));
        }
        emit(row("mmr", size, size, &hash, &mut samples), &mut rows);

        // graph stages on a prefix of the store
        let nodes = size.min(cfg.bench.graph_nodes);
        let mut sub = Store::new(scene.features.dim())?;
        sub.add_batch(records[..nodes].to_vec())?;
        let (mut samples, mut hash) = (Vec::new(), Fnv::default());
        let graph = timed(&mut samples, || {
            build_scene_graph(&sub, &sid, suite.graph, suite.threshold)
        })?;
        hash.add(graph.edges().len() as u64);
        emit(row("graph_build", size, nodes, &hash, &mut samples), &mut rows);

        let ids = graph.nodes().to_vec();
        let pairs: Vec<(usize, usize)> = (0..cfg.bench.queries)
            .map(|_| (ids[rng.random_range(0..ids.len())], ids[rng.random_range(0..ids.len())]))
            .collect();
        let (mut samples, mut hash) = (Vec::new(), Fnv::default());
        for &(a, b) in &pairs {
            let p = timed(&mut samples, || shortest_path(&graph, a, b))?;
            hash.add(p.nodes.len() as u64);
            hash.add(p.cost.to_bits());
        }
        emit(row("graph_path", size, nodes, &hash, &mut samples), &mut rows);

        let (mut samples, mut hash) = (Vec::new(), Fnv::default());
        let mut crng = ChaCha8Rng::seed_from_u64(mix_seed(suite.seed, size as u64, STREAM_BENCH + 1));
        for pair in queries.chunks_exact(2) {
            let (obs, goal) = (&pair[0], &pair[1]);
            let previous = build_static_context(&sub, &sid, goal, ctx.size, beta)?;
            let update = timed(&mut samples, || {
                build_dynamic_context(&sub, &sid, &graph, obs, goal, &previous, &mut crng)
            })?;
            update.context.slots.iter().for_each(|&i| hash.add(sub.frame_id(i)));
        }
        emit(row("context_build", size, nodes, &hash, &mut samples), &mut rows);
    }
    Ok(rows)
}
