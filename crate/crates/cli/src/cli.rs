//! Argument parsing and dispatch.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};

use contextnav::navsim::Pose;
use contextnav::simgraph::GraphVariant;
use fleetd::{Server, ServerConfig, Service};

use crate::bench;
use crate::commands::{self, Query, RetrieveArgs, BENCH_CSV};
use crate::config::ExperimentConfig;
use crate::output::Outputs;
use crate::report::write_csv;

#[derive(Debug, Parser)]
#[command(name = "contextnav", version, about = "Retrieval contexts for gridworld navigation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON). Built-in defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for simulation and graph building.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write scene and episode files for every scene of the suite.
    GenScene,
    /// Write a REMB dataset and its metadata sidecar.
    GenDataset {
        /// Frames per scene; the configured dataset size otherwise.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Build one similarity graph per scene of a dataset.
    BuildGraph {
        /// REMB file; its sidecar is the same path with `.jsonl`.
        #[arg(long)]
        dataset: PathBuf,
        /// SWG, SBG, DWG or PG.
        #[arg(long)]
        variant: Option<GraphVariant>,
    },
    /// Top-k (and optionally MMR) retrieval for one query.
    Retrieve(RetrieveCmd),
    /// Run the configured agents once and write traces and metrics.
    Simulate {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Sweep dataset sizes and write the metrics CSV.
    Evaluate {
        /// Comma-separated sizes; the configured sweep otherwise.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Per-stage latency across store sizes.
    Bench {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Serve the fleet protocol over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Persist to an append log in this directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
}

#[derive(Debug, Args)]
pub struct RetrieveCmd {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scene partition to search; defaults to the query's scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// Use this dataset frame as the query.
    #[arg(long, conflicts_with = "pose")]
    pub frame: Option<u64>,
    /// Use the view at `x,y` (metres) in `--scene-file` as the query.
    #[arg(long, requires = "scene_file", value_parser = parse_pose)]
    pub pose: Option<Pose>,
    #[arg(long)]
    pub scene_file: Option<PathBuf>,
    #[arg(short, long, default_value_t = 9)]
    pub k: usize,
    /// Also re-rank a shortlist with MMR down to this many frames.
    #[arg(long)]
    pub mmr: Option<usize>,
    #[arg(long, default_value_t = commands::default_beta())]
    pub beta: f64,
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x: f64 = x.trim().parse().map_err(|e| format!("bad x: {e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("bad y: {e}"))?;
    Ok(Pose::new(x, y))
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(commands::with_seed(cfg, common.seed))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            bail!("--jobs must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("cannot configure worker threads")?;
    }
    let mut cfg = load_config(&cli.common)?;

    if let Command::Serve { listen, data_dir, dim } = &cli.command {
        let service = Service::open(&ServerConfig {
            dim: *dim,
            data_dir: data_dir.clone(),
            sync: true,
        })?;
        let server = Server::bind(listen.as_str(), service).with_context(|| format!("cannot listen on {listen}"))?;
        println!("listening on {}", server.local_addr()?);
        std::io::stdout().flush()?;
        server.run()?;
        return Ok(());
    }

    let mut out =
        Outputs::new(&cli.common.out_dir).with_context(|| format!("cannot create {}", cli.common.out_dir.display()))?;
    match cli.command {
        Command::GenScene => commands::gen_scene(&cfg, &mut out)?,
        Command::GenDataset { size } => commands::gen_dataset(&cfg, size.unwrap_or(cfg.suite.dataset_size), &mut out)?,
        Command::BuildGraph { dataset, variant } => commands::build_graph(&cfg, &dataset, variant, &mut out)?,
        Command::Retrieve(r) => {
            let query = match (r.frame, r.pose, r.scene_file) {
                (Some(f), None, _) => Query::Frame(f),
                (None, Some(pose), Some(scene_file)) => Query::Pose { scene_file, pose },
                _ => bail!("retrieve needs --frame or --pose with --scene-file"),
            };
            let report = commands::retrieve(
                &RetrieveArgs {
                    dataset: r.dataset,
                    scene: r.scene,
                    query,
                    k: r.k,
                    mmr: r.mmr,
                    beta: r.beta,
                },
                &mut out,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate { size } => {
            for r in commands::simulate(&cfg, size.unwrap_or(cfg.suite.dataset_size), &mut out)? {
                println!(
                    "{:<40} {:<14} SR {:7.2} SPL {:7.2} N {}",
                    r.agent, r.suite, r.sr, r.spl, r.n
                );
            }
        }
        Command::Evaluate { sizes } => {
            let sizes = sizes.unwrap_or_else(|| cfg.sweep_sizes.clone());
            for r in commands::evaluate(&cfg, &sizes, &mut out)? {
                println!(
                    "{:<40} {:<14} SR {:7.2} SPL {:7.2} N {}",
                    r.agent, r.suite, r.sr, r.spl, r.n
                );
            }
        }
        Command::Bench { sizes, queries } => {
            if let Some(s) = sizes {
                cfg.bench.sizes = s;
            }
            if let Some(q) = queries {
                cfg.bench.queries = q;
            }
            cfg.validate()?;
            let rows = bench::run(&cfg, |r| {
                println!(
                    "{:<14} size {:>7} nodes {:>6}  mean {:>10.1} us  p95 {:>10.1} us",
                    r.stage, r.size, r.nodes, r.mean_us, r.p95_us
                )
            })?;
            out.write(BENCH_CSV, |w| write_csv(w, &rows))?;
        }
        Command::Serve { .. } => unreachable!(),
    }
    for f in out.commit() {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}
