use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qkmeans::config::{EdgeOrder, Overrides, Region};
use qkmeans::experiment::{
    load_graph, prepare, run_consensus_experiment, run_experiment, ConsensusConfig, InputFiles,
};
use qkmeans::formats;
use qkmeans::sweep::{run_sweep, SweepOptions};
use qkmeans_core::graph::generate_random_digraph;
use qkmeans_core::scenario::{derive_seed, GRAPH_STREAM};

/// Finite-time distributed k-means over directed graphs with quantized,
/// exact-arithmetic messages.
#[derive(Parser)]
#[command(name = "qkmeans", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random strongly connected digraph as an edge list.
    GenGraph(GenGraphArgs),
    /// Run averaging consensus on a graph.
    Consensus(ConsensusArgs),
    /// Run one distributed k-means experiment.
    Kmeans(KMeansArgs),
    /// Run many k-means experiments over consecutive seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with any of the experiment settings; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn overrides(&self) -> Result<Overrides> {
        let base = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        Ok(self.overrides.clone().over(base))
    }
}

#[derive(Args)]
struct GenGraphArgs {
    #[command(flatten)]
    common: Common,
    /// Output edge-list path; defaults to `<out-dir>/graph.txt`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ConsensusArgs {
    #[command(flatten)]
    common: Common,
    /// Edge list; generated from the seed when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// One line of values per node; random when absent.
    #[arg(long)]
    values: Option<PathBuf>,
    /// Inclusive range for random values.
    #[arg(long, default_value = "-50:50", allow_hyphen_values = true)]
    value_range: String,
}

#[derive(Args)]
struct KMeansArgs {
    #[command(flatten)]
    common: Common,
    /// Edge list; generated from the seed when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Observations, one line per node.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Initial centroids, one per line.
    #[arg(long)]
    centroids: Option<PathBuf>,
    /// Also run centralized Lloyd and compare centroid sequences.
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed edge list shared by every run.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Runs per cluster count.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Comma-separated cluster counts, e.g. `3,6,12`.
    #[arg(long, value_delimiter = ',')]
    k_values: Vec<usize>,
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Serialize)]
struct GenGraphConfig {
    n: usize,
    edge_probability: f64,
    seed: u64,
    graph_seed: u64,
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn gen_graph(args: GenGraphArgs) -> Result<bool> {
    let o = args.common.overrides()?;
    let seed = o.seed.unwrap_or(1);
    let cfg = GenGraphConfig {
        n: o.n.unwrap_or(100),
        edge_probability: o.edge_probability.unwrap_or(0.05),
        seed,
        graph_seed: o.graph_seed.unwrap_or_else(|| derive_seed(seed, GRAPH_STREAM)),
    };
    let g = generate_random_digraph(cfg.n, cfg.edge_probability, cfg.graph_seed)?;
    let diameter = g.diameter()?;
    let path = args.output.unwrap_or_else(|| args.common.out_dir.join("graph.txt"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let json = serde_json::to_string(&cfg)?;
    std::fs::write(&path, formats::write_edge_list(&g, &json)).with_context(|| format!("cannot write {}", path.display()))?;
    println!("n={} m={} D={}", g.node_count(), g.edge_count(), diameter);
    print_written(&[path]);
    Ok(true)
}

fn read_values(path: &Path, scale: u64) -> Result<Vec<Vec<qkmeans_core::BigInt>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    formats::parse_observations(&text, scale).with_context(|| format!("invalid values {}", path.display()))
}

fn consensus(args: ConsensusArgs) -> Result<bool> {
    let o = args.common.overrides()?;
    let range: Region = args.value_range.parse().map_err(|e| anyhow::anyhow!("invalid --value-range: {e}"))?;
    let [lo, hi] = *range.0.first().context("empty --value-range")?;
    let seed = o.seed.unwrap_or(1);
    let scale = o.scale.unwrap_or(1);
    let graph = match &args.graph {
        Some(path) => load_graph(path)?,
        None => generate_random_digraph(
            o.n.unwrap_or(10),
            o.edge_probability.unwrap_or(0.05),
            o.graph_seed.unwrap_or_else(|| derive_seed(seed, GRAPH_STREAM)),
        )?,
    };
    graph.diameter()?;
    let values = args.values.as_deref().map(|p| read_values(p, scale)).transpose()?;
    let config = ConsensusConfig {
        graph_file: args.graph.as_ref().map(|p| p.display().to_string()),
        values_file: args.values.as_ref().map(|p| p.display().to_string()),
        n: graph.node_count(),
        dim: o.dim.unwrap_or(1),
        seed,
        value_range: [lo, hi],
        scale,
        edge_order: o.edge_order.unwrap_or(EdgeOrder::Canonical),
    };
    let e = run_consensus_experiment(&graph, values, config)?;
    print!("{}", e.report());
    print_written(&e.write_outputs(&args.common.out_dir)?);
    Ok(e.passed())
}

fn kmeans(args: KMeansArgs) -> Result<bool> {
    let mut cfg = args.common.overrides()?.resolve()?;
    let files = InputFiles { graph: args.graph, observations: args.observations, centroids: args.centroids };
    let inputs = prepare(&mut cfg, &files)?;
    let e = run_experiment(cfg, inputs, args.oracle_check)?;
    print!("{}", e.report());
    print_written(&e.write_outputs(&args.common.out_dir)?);
    Ok(e.passed())
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let cfg = args.common.overrides()?.resolve()?;
    let files = InputFiles { graph: args.graph, ..InputFiles::default() };
    let options = SweepOptions { runs: args.runs, k_values: args.k_values, oracle_check: args.oracle_check, ..SweepOptions::default() };
    let result = run_sweep(&cfg, &files, &options)?;
    print!("{}", result.report());
    print_written(&result.write_outputs(&args.common.out_dir)?);
    Ok(result.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenGraph(a) => gen_graph(a),
        Command::Consensus(a) => consensus(a),
        Command::Kmeans(a) => kmeans(a),
        Command::Sweep(a) => sweep(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
