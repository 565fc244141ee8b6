//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use qkmeans::config::{ExperimentConfig, Overrides};
use qkmeans::experiment::{prepare, run_experiment, Experiment, InputFiles};
use qkmeans::sweep::{reference_mean_t, run_sweep, SweepOptions, SweepResult, REFERENCE_MEAN_T};
use qkmeans_core::coordination::{run_merge_rounds, ExtremaState};
use qkmeans_core::exactmath::sq_dist_exact;
use qkmeans_core::graph::{generate_random_digraph, Digraph};
use qkmeans_core::kmeans::CentroidSet;
use qkmeans_core::oracle::{brute_average, check_equivalence, global_extrema, lloyd_reference};
use qkmeans_core::scenario::{derive_seed, draw_centroids, draw_points};
use qkmeans_core::sim::{run_consensus, run_kmeans, ConsensusOptions, KMeansRun, KMeansTrace};
use qkmeans_core::{BigInt, FractionVector};

const SUITE_SEED: u64 = 0x00c0_ffee;
/// T observed in the reference single run at n = 100, k = 3.
const REFERENCE_SINGLE_T: usize = 10;

/// Uniform integer in `lo..=hi` for instance `i`, stream `s`.
fn pick(i: u64, s: u64, lo: u64, hi: u64) -> u64 {
    lo + derive_seed(SUITE_SEED ^ i.wrapping_mul(0x9e37_79b9), s) % (hi - lo + 1)
}

fn probability(i: u64) -> f64 {
    pick(i, 10, 0, 60) as f64 / 100.0
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn report(n: usize, v: &Verdict) -> bool {
    println!("criterion {n}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn consensus_runs() -> (Verdict, Verdict) {
    let mut exact = 0;
    let mut bounded = 0;
    let mut conserved = 0;
    let mut failures = Vec::new();
    let total = 200;
    for i in 0..total {
        let n = pick(i, 1, 4, 15) as usize;
        let d = pick(i, 2, 1, 3) as usize;
        let g = generate_random_digraph(n, probability(i), pick(i, 3, 0, u64::MAX - 1)).unwrap();
        let values = draw_points(&vec![(-50, 50); d], 1, n, pick(i, 4, 0, u64::MAX - 1)).unwrap();
        let opts = ConsensusOptions { ordering: None, record_messages: false, check_conservation: true };
        match run_consensus(&g, &values, &opts) {
            Ok(trace) => {
                conserved += 1;
                let expected = brute_average(&values).unwrap();
                let all = trace.estimates.len() == n && trace.estimates.iter().all(|e| *e == expected);
                exact += usize::from(all);
                bounded += usize::from(trace.bound_ok());
                if !all || !trace.bound_ok() {
                    failures.push(i);
                }
            }
            Err(e) => failures.push({
                eprintln!("consensus instance {i}: {e}");
                i
            }),
        }
    }
    let c1 = Verdict::new(
        exact == total as usize && bounded == total as usize,
        format!("{exact}/{total} exact averages, {bounded}/{total} within S_t <= n*m^2, failing instances {failures:?}"),
    );
    let c2 = Verdict::new(conserved == total as usize, format!("{conserved}/{total} runs conserved mass on every step"));
    (c1, c2)
}

fn extrema_runs() -> Verdict {
    let total = 100;
    let mut ok = 0;
    let mut tight = 0;
    for i in 0..total {
        let n = pick(i, 21, 3, 50) as usize;
        let g = generate_random_digraph(n, pick(i, 22, 0, 30) as f64 / 100.0, pick(i, 23, 0, u64::MAX - 1)).unwrap();
        let d = g.diameter().unwrap();
        let points = draw_points(&[(-30, 30), (-30, 30)], 1, n, pick(i, 24, 0, u64::MAX - 1)).unwrap();
        let estimates: Vec<Option<FractionVector>> = points
            .iter()
            .enumerate()
            .map(|(j, p)| (pick(i ^ j as u64, 25, 0, 4) != 0).then(|| FractionVector::from_integers(p)))
            .collect();
        let states = estimates.iter().map(|e| ExtremaState::snapshot(std::slice::from_ref(e), 2).unwrap()).collect();
        let merged = run_merge_rounds(&g, states, d).unwrap();
        let global = global_extrema(&estimates);
        let all = merged.iter().all(|s| match (&global, s.bounds(0)) {
            (Some((max, min)), Some(b)) => &b.max == max && &b.min == min,
            (None, None) => true,
            _ => false,
        });
        ok += usize::from(all);
        tight += usize::from(diameter_is_needed(&g, d));
    }
    Verdict::new(
        ok == total as usize && tight == total as usize,
        format!("{ok}/{total} graphs hold global extrema after D rounds, {tight}/{total} miss them after D-1 rounds"),
    )
}

/// A unique maximum at a node realizing the diameter has not reached every
/// node after `d - 1` rounds.
fn diameter_is_needed(g: &Digraph, d: usize) -> bool {
    if d == 0 {
        return true;
    }
    let source = (0..g.node_count())
        .find(|&s| g.distances_from(s).contains(&Some(d)))
        .expect("some node realizes the diameter");
    let estimates: Vec<Option<FractionVector>> = (0..g.node_count())
        .map(|j| Some(FractionVector::from_integers(&[BigInt::from(i64::from(j == source))])))
        .collect();
    let states = estimates.iter().map(|e| ExtremaState::snapshot(std::slice::from_ref(e), 1).unwrap()).collect();
    let merged = run_merge_rounds(g, states, d - 1).unwrap();
    let one = FractionVector::from_integers(&[BigInt::from(1)]).component(0);
    merged.iter().any(|s| s.bounds(0).unwrap().max[0] != one)
}

fn kmeans_run(g: Digraph, observations: Vec<Vec<BigInt>>, initial: CentroidSet) -> (KMeansTrace, bool) {
    let d = g.diameter().unwrap();
    let mut run = KMeansRun::new(g, observations.clone(), initial.clone(), d);
    run.check_conservation = true;
    let trace = run_kmeans(&run).unwrap();
    let oracle = lloyd_reference(&observations, &initial, run.max_rounds).unwrap();
    let report = check_equivalence(&trace, &oracle);
    (trace, report.pass)
}

fn ints(rows: &[[i64; 2]]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect()
}

fn centroids(rows: &[[i64; 2]]) -> CentroidSet {
    CentroidSet::initial(ints(rows).iter().map(|r| FractionVector::from_integers(r)).collect())
}

struct KMeansBatch {
    traces: Vec<KMeansTrace>,
    equivalent: usize,
    tie_seen: bool,
    empty_seen: bool,
}

fn kmeans_instances() -> KMeansBatch {
    let mut traces = Vec::new();
    let mut equivalent = 0;
    for i in 0..50 {
        let n = pick(i, 31, 5, 40) as usize;
        let k = pick(i, 32, 2, 4) as usize;
        let g = generate_random_digraph(n, probability(i), pick(i, 33, 0, u64::MAX - 1)).unwrap();
        let region = [(0, 20), (0, 20)];
        let obs = draw_points(&region, 1, n, pick(i, 34, 0, u64::MAX - 1)).unwrap();
        let init = draw_centroids(&region, 1, k, pick(i, 35, 0, u64::MAX - 1)).unwrap();
        let (trace, eq) = kmeans_run(g, obs, init);
        equivalent += usize::from(eq);
        traces.push(trace);
    }

    // (2,0) and (2,5) are equidistant from both initial centroids.
    let tie_obs = ints(&[[0, 0], [2, 0], [4, 0], [0, 1], [4, 1], [2, 5]]);
    let tie_init = centroids(&[[0, 0], [4, 0]]);
    let tie_seen = tie_obs.iter().any(|x| {
        sq_dist_exact(x, &tie_init.centroids[0]).unwrap() == sq_dist_exact(x, &tie_init.centroids[1]).unwrap()
    });
    let (trace, eq) = kmeans_run(Digraph::cycle(6).unwrap(), tie_obs, tie_init);
    equivalent += usize::from(eq);
    traces.push(trace);

    let empty_obs = ints(&[[0, 0], [1, 2], [2, 1], [8, 9], [9, 8], [10, 10], [5, 4]]);
    let empty_init = centroids(&[[1, 1], [9, 9], [100, 100]]);
    let g = generate_random_digraph(7, 0.2, 77).unwrap();
    let (trace, eq) = kmeans_run(g, empty_obs, empty_init);
    let empty_seen = trace.rounds.first().is_some_and(|r| !r.assignments.contains(&2))
        && trace.centroid_sequence[1].centroids[2] == trace.centroid_sequence[0].centroids[2];
    equivalent += usize::from(eq);
    traces.push(trace);

    KMeansBatch { traces, equivalent, tie_seen, empty_seen }
}

fn default_config() -> ExperimentConfig {
    Overrides::default().resolve().unwrap()
}

fn single_experiment(cfg: &ExperimentConfig) -> Experiment {
    let mut cfg = cfg.clone();
    let inputs = prepare(&mut cfg, &InputFiles::default()).unwrap();
    run_experiment(cfg, inputs, true).unwrap()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .map(|t| t.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1))
        .unwrap_or(0)
}

fn single_run_plot_data() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let e = single_experiment(&default_config());
    e.write_outputs(dir.path()).unwrap();
    let t = e.trace.centroid_calculations();
    let f_rows = data_rows(&dir.path().join("objective.csv"));
    let traj_rows = data_rows(&dir.path().join("trajectories.csv"));
    let pass = e.trace.terminated && f_rows == t + 1 && traj_rows == e.trace.k * (t + 1) && e.passed();
    Verdict::new(
        pass,
        format!(
            "n=100 k=3 seed=1 terminated={} T={t} (reference T={REFERENCE_SINGLE_T}), {f_rows} F(T) rows, {traj_rows} trajectory rows",
            e.trace.terminated
        ),
    )
}

fn sweep_band(sweep: &SweepResult) -> String {
    let refs: Vec<String> = REFERENCE_MEAN_T.iter().map(|(k, t)| format!("k={k}: {t}")).collect();
    let s = &sweep.per_k()[0];
    format!(
        "sweep mean T={:.2} (reference {}; all references {}), T range [{}, {}], {} runs outside [1, 100] {:?}",
        s.mean_t,
        reference_mean_t(s.k).map_or_else(|| "none".to_string(), |t| t.to_string()),
        refs.join(", "),
        s.min_t,
        s.max_t,
        s.out_of_band_seeds.len(),
        s.out_of_band_seeds
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Verdict {
    let cfg = Overrides { n: Some(40), seed: Some(9), ..Overrides::default() }.resolve().unwrap();
    let outputs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            single_experiment(&cfg).write_outputs(dir.path()).unwrap();
            let sweep = run_sweep(&cfg, &InputFiles::default(), &SweepOptions { runs: 4, ..SweepOptions::default() }).unwrap();
            sweep.write_outputs(dir.path()).unwrap();
            dir_bytes(dir.path())
        })
        .collect();
    let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
    Verdict::new(same, format!("{} output files compared across two runs", outputs[0].len()))
}

fn main() {
    let started = Instant::now();
    let mut all = true;

    let (c1, c2) = consensus_runs();
    all &= report(1, &c1);
    all &= report(2, &c2);
    all &= report(3, &extrema_runs());

    let batch = kmeans_instances();
    let c4 = Verdict::new(
        batch.equivalent == batch.traces.len() && batch.tie_seen && batch.empty_seen,
        format!(
            "{}/{} runs match the centralized reference, tie instance exercised={}, empty cluster exercised={}",
            batch.equivalent,
            batch.traces.len(),
            batch.tie_seen,
            batch.empty_seen
        ),
    );
    all &= report(4, &c4);

    let sweep = run_sweep(&default_config(), &InputFiles::default(), &SweepOptions::default()).expect("sweep runs");
    let monotone_batch = batch.traces.iter().filter(|t| t.objective_non_increasing()).count();
    let monotone_sweep = sweep.runs.iter().filter(|r| r.checks.objective_monotone).count();
    all &= report(
        5,
        &Verdict::new(
            monotone_batch == batch.traces.len() && monotone_sweep == sweep.runs.len(),
            format!(
                "F non-increasing on {monotone_batch}/{} instances and {monotone_sweep}/{} sweep runs",
                batch.traces.len(),
                sweep.runs.len()
            ),
        ),
    );
    let bounded = sweep.runs.iter().filter(|r| r.checks.step_bound).count();
    let worst = sweep
        .runs
        .iter()
        .map(|r| r.total_steps as f64 / r.step_bound as f64)
        .fold(0.0, f64::max);
    all &= report(
        6,
        &Verdict::new(
            bounded == sweep.runs.len(),
            format!("C_t <= T(D + n*m^2) on {bounded}/{} sweep runs, largest ratio {worst:.2e}", sweep.runs.len()),
        ),
    );
    let silent_batch = batch.traces.iter().filter(|t| t.silence_ok()).count();
    let silent_sweep = sweep.runs.iter().filter(|r| r.checks.silence).count();
    all &= report(
        7,
        &Verdict::new(
            silent_batch == batch.traces.len() && silent_sweep == sweep.runs.len(),
            format!(
                "no messages after the stop flags on {silent_batch}/{} instances and {silent_sweep}/{} sweep runs",
                batch.traces.len(),
                sweep.runs.len()
            ),
        ),
    );
    let mut c8 = single_run_plot_data();
    c8.detail = format!("{}; {}", c8.detail, sweep_band(&sweep));
    all &= report(8, &c8);
    all &= report(9, &determinism());

    println!("acceptance finished in {:.1}s", started.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
