//! Single clustering and consensus experiments: input assembly, checks and
//! output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qkmeans_core::graph::{assign_edge_orders, assign_edge_orders_shuffled, generate_random_digraph, Digraph, EdgeOrdering};
use qkmeans_core::kmeans::CentroidSet;
use qkmeans_core::oracle::{check_equivalence, lloyd_reference, EquivalenceReport};
use qkmeans_core::scenario::{draw_centroids, draw_points};
use qkmeans_core::sim::{run_consensus, run_kmeans, ConsensusOptions, ConsensusTrace, KMeansRun, KMeansTrace};
use qkmeans_core::BigInt;

use crate::config::{validate, DBound, EdgeOrder, ExperimentConfig};
use crate::formats;

pub const KMEANS_SCHEMA: &str = "qkmeans/kmeans-summary/v1";
pub const CONSENSUS_SCHEMA: &str = "qkmeans/consensus-summary/v1";

/// Optional on-disk inputs; anything missing is generated from the seeds.
#[derive(Debug, Clone, Default)]
pub struct InputFiles {
    pub graph: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub graph: Digraph,
    pub observations: Vec<Vec<BigInt>>,
    pub initial: CentroidSet,
    pub diameter: usize,
    pub d_bound: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_graph(path: &Path) -> Result<Digraph> {
    formats::parse_edge_list(&read(path)?).with_context(|| format!("invalid edge list {}", path.display()))
}

/// Edge orders for `cfg.edge_order`.
pub fn ordering(g: &Digraph, cfg: &ExperimentConfig) -> EdgeOrdering {
    match cfg.edge_order {
        EdgeOrder::Canonical => assign_edge_orders(g),
        EdgeOrder::Shuffled => assign_edge_orders_shuffled(g, cfg.graph_seed),
    }
}

/// Loads or generates every input. Sizes taken from files overwrite the
/// matching config fields so the recorded config describes the actual run.
pub fn prepare(cfg: &mut ExperimentConfig, files: &InputFiles) -> Result<Inputs> {
    let graph = match &files.graph {
        Some(path) => {
            let g = load_graph(path)?;
            cfg.n = g.node_count();
            cfg.graph_file = Some(path.display().to_string());
            g
        }
        None => generate_random_digraph(cfg.n, cfg.edge_probability, cfg.graph_seed)?,
    };
    let diameter = graph.diameter()?;

    let observations = match &files.observations {
        Some(path) => {
            let rows = formats::parse_observations(&read(path)?, cfg.scale)
                .with_context(|| format!("invalid observations {}", path.display()))?;
            if rows.len() != cfg.n {
                bail!("{} has {} observations but the graph has {} nodes", path.display(), rows.len(), cfg.n);
            }
            cfg.dim = rows[0].len();
            cfg.observations_file = Some(path.display().to_string());
            rows
        }
        None => draw_points(&cfg.region.pairs(), cfg.scale, cfg.n, cfg.observation_seed)?,
    };
    let initial = match &files.centroids {
        Some(path) => {
            let set = formats::parse_centroids(&read(path)?, cfg.scale)
                .with_context(|| format!("invalid centroids {}", path.display()))?;
            if set.centroids[0].dim() != cfg.dim {
                bail!("centroids have dimension {} but observations have {}", set.centroids[0].dim(), cfg.dim);
            }
            cfg.k = set.k();
            cfg.centroids_file = Some(path.display().to_string());
            set
        }
        None => {
            if cfg.region.0.len() != cfg.dim {
                bail!("region has {} dimensions but observations have {}; pass --region", cfg.region.0.len(), cfg.dim);
            }
            draw_centroids(&cfg.region.pairs(), cfg.scale, cfg.k, cfg.centroid_seed)?
        }
    };
    if files.observations.is_none() || files.centroids.is_none() {
        validate(cfg)?;
    } else if cfg.k >= cfg.n {
        bail!("k = {} must be smaller than n = {}", cfg.k, cfg.n);
    }
    let d_bound = match cfg.d_bound {
        DBound::Auto => diameter,
        DBound::Fixed(b) if b < diameter => bail!("d_bound {b} is below the graph diameter {diameter}"),
        DBound::Fixed(b) => b,
    };
    Ok(Inputs { graph, observations, initial, diameter, d_bound })
}

/// Pass/fail of every invariant checked on a run. `None` means not checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Checks {
    pub step_bound: bool,
    pub silence: bool,
    pub means: bool,
    pub objective_monotone: bool,
    pub conservation: Option<bool>,
    pub equivalence: Option<bool>,
}

impl Checks {
    pub fn passed(&self) -> bool {
        self.step_bound
            && self.silence
            && self.means
            && self.objective_monotone
            && self.conservation != Some(false)
            && self.equivalence != Some(false)
    }

    fn lines(&self) -> Vec<(&'static str, Option<bool>)> {
        vec![
            ("step_bound", Some(self.step_bound)),
            ("silence", Some(self.silence)),
            ("means", Some(self.means)),
            ("objective_monotone", Some(self.objective_monotone)),
            ("conservation", self.conservation),
        ]
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub inputs: Inputs,
    pub trace: KMeansTrace,
    pub equivalence: Option<EquivalenceReport>,
    pub checks: Checks,
}

/// Runs the distributed protocol and, when asked, the centralized oracle.
pub fn run_experiment(config: ExperimentConfig, inputs: Inputs, oracle_check: bool) -> Result<Experiment> {
    let run = KMeansRun {
        graph: inputs.graph.clone(),
        observations: inputs.observations.clone(),
        initial: inputs.initial.clone(),
        d_bound: inputs.d_bound,
        max_rounds: config.max_rounds,
        ordering: Some(ordering(&inputs.graph, &config)),
        check_conservation: config.check_conservation,
        stop_rule: config.stop_rule.into(),
        silence_steps: inputs.d_bound + 2,
    };
    let trace = run_kmeans(&run)?;
    let equivalence = if oracle_check {
        let oracle = lloyd_reference(&inputs.observations, &inputs.initial, config.max_rounds)?;
        Some(check_equivalence(&trace, &oracle))
    } else {
        None
    };
    let checks = Checks {
        step_bound: trace.step_bound_ok(),
        silence: trace.silence_ok(),
        means: trace.means_ok(),
        objective_monotone: trace.objective_non_increasing(),
        conservation: config.check_conservation.then_some(true),
        equivalence: equivalence.as_ref().map(|e| e.pass),
    };
    Ok(Experiment { config, inputs, trace, equivalence, checks })
}

#[derive(Serialize)]
struct EquivalenceSummary {
    pass: bool,
    distributed_rounds: usize,
    oracle_rounds: usize,
    first_divergence_round: Option<usize>,
    first_divergence_cluster: Option<usize>,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct KMeansSummary<'a> {
    schema: &'static str,
    config: &'a ExperimentConfig,
    n: usize,
    m: usize,
    D: usize,
    d_bound: usize,
    k: usize,
    dim: usize,
    T: usize,
    C_t: usize,
    step_bound: u128,
    terminated: bool,
    consensus_messages: u64,
    extrema_messages: u64,
    payload_bits: u64,
    max_payload_bits: u64,
    messages_after_stop: u64,
    objective: Vec<String>,
    final_centroids: Vec<String>,
    checks: &'a Checks,
    equivalence: Option<EquivalenceSummary>,
    pass: bool,
}

impl Experiment {
    pub fn passed(&self) -> bool {
        self.checks.passed()
    }

    pub fn summary_json(&self) -> String {
        let t = &self.trace;
        let summary = KMeansSummary {
            schema: KMEANS_SCHEMA,
            config: &self.config,
            n: t.n,
            m: t.m,
            D: t.diameter,
            d_bound: t.d_bound,
            k: t.k,
            dim: t.dim,
            T: t.centroid_calculations(),
            C_t: t.total_steps,
            step_bound: t.step_bound,
            terminated: t.terminated,
            consensus_messages: t.consensus_messages,
            extrema_messages: t.extrema_messages,
            payload_bits: t.payload_bits,
            max_payload_bits: t.max_payload_bits,
            messages_after_stop: t.messages_after_stop,
            objective: t.objective.iter().map(|f| f.to_string()).collect(),
            final_centroids: t.centroid_sequence.last().map_or_else(Vec::new, |c| {
                c.centroids.iter().map(formats::tuple).collect()
            }),
            checks: &self.checks,
            equivalence: self.equivalence.as_ref().map(|e| EquivalenceSummary {
                pass: e.pass,
                distributed_rounds: e.distributed_rounds,
                oracle_rounds: e.oracle_rounds,
                first_divergence_round: e.first_divergence.as_ref().map(|d| d.round),
                first_divergence_cluster: e.first_divergence.as_ref().and_then(|d| d.cluster),
            }),
            pass: self.passed(),
        };
        let mut out = serde_json::to_string_pretty(&summary).expect("summary serializes");
        out.push('\n');
        out
    }

    /// Writes the trace, summary, plot data and the inputs into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = self.config.to_json();
        let t = &self.trace;
        let files = [
            ("trace.csv", formats::trace_csv(t, &cfg)),
            ("summary.json", self.summary_json()),
            ("objective.csv", formats::objective_csv(t, &cfg)),
            ("trajectories.csv", formats::trajectories_csv(t, &cfg)),
            ("assignments.csv", formats::assignments_csv(t, &self.inputs.observations, &cfg)),
            ("graph.txt", formats::write_edge_list(&self.inputs.graph, &cfg)),
            ("observations.txt", formats::write_observations(&self.inputs.observations, &cfg)),
            ("initial_centroids.txt", formats::write_centroids(&self.inputs.initial, &cfg)),
        ];
        write_all(dir, &files)
    }

    /// Human-readable result lines.
    pub fn report(&self) -> String {
        let t = &self.trace;
        let mut out = String::new();
        let _ = writeln!(out, "n={} m={} D={} d_bound={} k={}", t.n, t.m, t.diameter, t.d_bound, t.k);
        let _ = writeln!(
            out,
            "T={} terminated={} C_t={} bound={} F(T)={}",
            t.centroid_calculations(),
            t.terminated,
            t.total_steps,
            t.step_bound,
            t.objective.last().map(|f| f.to_string()).unwrap_or_default()
        );
        if !t.terminated {
            let _ = writeln!(out, "stopped at max_rounds={} without meeting the stop condition", t.max_rounds);
        }
        for (name, ok) in self.checks.lines() {
            if let Some(ok) = ok {
                let _ = writeln!(out, "check {name}: {}", verdict(ok));
            }
        }
        if let Some(e) = &self.equivalence {
            let _ = writeln!(out, "equivalence: {}", verdict(e.pass));
            if let Some(d) = &e.first_divergence {
                let _ = writeln!(out, "first divergence at round {} cluster {:?}", d.round, d.cluster.map(|c| c + 1));
            }
        }
        out
    }
}

pub(crate) fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

/// Setup of a plain averaging run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusConfig {
    pub graph_file: Option<String>,
    pub values_file: Option<String>,
    pub n: usize,
    pub dim: usize,
    /// Seed for generated values and shuffled edge orders.
    pub seed: u64,
    /// Inclusive range of generated values.
    pub value_range: [i64; 2],
    pub scale: u64,
    pub edge_order: EdgeOrder,
}

#[derive(Debug, Clone)]
pub struct ConsensusExperiment {
    pub config: ConsensusConfig,
    pub initial: Vec<Vec<BigInt>>,
    pub trace: ConsensusTrace,
}

/// Runs averaging consensus over `graph` with values from `values` or
/// drawn from `config.value_range`.
pub fn run_consensus_experiment(
    graph: &Digraph,
    values: Option<Vec<Vec<BigInt>>>,
    mut config: ConsensusConfig,
) -> Result<ConsensusExperiment> {
    config.n = graph.node_count();
    let initial = match values {
        Some(v) => {
            if v.len() != config.n {
                bail!("{} values for {} nodes", v.len(), config.n);
            }
            config.dim = v[0].len();
            v
        }
        None => {
            let [lo, hi] = config.value_range;
            draw_points(&vec![(lo, hi); config.dim], config.scale, config.n, config.seed)?
        }
    };
    let ordering = match config.edge_order {
        EdgeOrder::Canonical => assign_edge_orders(graph),
        EdgeOrder::Shuffled => assign_edge_orders_shuffled(graph, config.seed),
    };
    let opts = ConsensusOptions { ordering: Some(ordering), record_messages: true, check_conservation: true };
    let trace = run_consensus(graph, &initial, &opts)?;
    Ok(ConsensusExperiment { config, initial, trace })
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct ConsensusSummary<'a> {
    schema: &'static str,
    config: &'a ConsensusConfig,
    n: usize,
    m: usize,
    dim: usize,
    average: String,
    S_t: usize,
    step_bound: u128,
    bound_ok: bool,
    all_at_average: bool,
    conservation: bool,
    total_messages: u64,
    payload_bits: u64,
    max_payload_bits: u64,
    estimates: Vec<String>,
    pass: bool,
}

impl ConsensusExperiment {
    pub fn all_at_average(&self) -> bool {
        self.trace.estimates.len() == self.trace.n && self.trace.estimates.iter().all(|e| *e == self.trace.average)
    }

    pub fn passed(&self) -> bool {
        self.trace.bound_ok() && self.all_at_average()
    }

    pub fn summary_json(&self) -> String {
        let t = &self.trace;
        let summary = ConsensusSummary {
            schema: CONSENSUS_SCHEMA,
            config: &self.config,
            n: t.n,
            m: t.m,
            dim: t.dim,
            average: formats::tuple(&t.average),
            S_t: t.convergence_step,
            step_bound: t.step_bound,
            bound_ok: t.bound_ok(),
            all_at_average: self.all_at_average(),
            conservation: t.conservation_checked,
            total_messages: t.total_messages,
            payload_bits: t.payload_bits,
            max_payload_bits: t.max_payload_bits,
            estimates: t.estimates.iter().map(formats::tuple).collect(),
            pass: self.passed(),
        };
        let mut out = serde_json::to_string_pretty(&summary).expect("summary serializes");
        out.push('\n');
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        write_all(
            dir,
            &[
                ("consensus_summary.json", self.summary_json()),
                ("consensus_messages.csv", formats::consensus_messages_csv(&self.trace, &cfg)),
            ],
        )
    }

    pub fn report(&self) -> String {
        let t = &self.trace;
        format!(
            "n={} m={} average={} S_t={} bound={} bound_ok={} all_at_average={}\n",
            t.n,
            t.m,
            formats::tuple(&t.average),
            t.convergence_step,
            t.step_bound,
            t.bound_ok(),
            self.all_at_average()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn small() -> ExperimentConfig {
        Overrides { n: Some(16), seed: Some(2), ..Overrides::default() }.resolve().unwrap()
    }

    #[test]
    fn generated_inputs_follow_the_config() {
        let mut cfg = small();
        let inputs = prepare(&mut cfg, &InputFiles::default()).unwrap();
        assert_eq!(inputs.graph.node_count(), 16);
        assert_eq!(inputs.observations.len(), 16);
        assert_eq!(inputs.initial.k(), 3);
        assert_eq!(inputs.d_bound, inputs.diameter);
    }

    #[test]
    fn fixed_bound_below_diameter_is_rejected() {
        let mut cfg = small();
        cfg.d_bound = DBound::Fixed(1);
        let err = prepare(&mut cfg, &InputFiles::default()).unwrap_err();
        assert!(err.to_string().contains("below the graph diameter"));
    }

    #[test]
    fn loose_bound_still_passes_every_check() {
        let mut cfg = small();
        cfg.d_bound = DBound::Fixed(40);
        let inputs = prepare(&mut cfg, &InputFiles::default()).unwrap();
        let e = run_experiment(cfg, inputs, true).unwrap();
        assert!(e.passed(), "{}", e.report());
        assert_eq!(e.trace.d_bound, 40);
    }

    #[test]
    fn summary_carries_schema_and_config() {
        let mut cfg = small();
        let inputs = prepare(&mut cfg, &InputFiles::default()).unwrap();
        let e = run_experiment(cfg, inputs, false).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.summary_json()).unwrap();
        assert_eq!(v["schema"], KMEANS_SCHEMA);
        assert_eq!(v["config"]["seed"], 2);
        assert_eq!(v["T"], e.trace.centroid_calculations());
        assert!(v["equivalence"].is_null());
    }

    #[test]
    fn consensus_values_are_drawn_when_absent() {
        let g = Digraph::cycle(5).unwrap();
        let config = ConsensusConfig {
            graph_file: None,
            values_file: None,
            n: 0,
            dim: 2,
            seed: 4,
            value_range: [-3, 3],
            scale: 1,
            edge_order: EdgeOrder::Shuffled,
        };
        let e = run_consensus_experiment(&g, None, config).unwrap();
        assert_eq!(e.config.n, 5);
        assert!(e.passed());
        assert!(e.initial.iter().flatten().all(|v| *v >= BigInt::from(-3) && *v <= BigInt::from(3)));
    }
}
