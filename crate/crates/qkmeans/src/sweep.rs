//! Seed sweeps: many independent runs, merged in seed order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use qkmeans_core::exactmath::Fraction;

use crate::config::ExperimentConfig;
use crate::experiment::{prepare, run_experiment, write_all, Checks, InputFiles};
use crate::formats::config_comment;

pub const SWEEP_SCHEMA: &str = "qkmeans/sweep-summary/v1";

/// Published mean number of centroid calculations per cluster count, used
/// only as a labelled reference in reports.
pub const REFERENCE_MEAN_T: [(usize, f64); 3] = [(3, 17.39), (6, 20.79), (12, 25.49)];

pub fn reference_mean_t(k: usize) -> Option<f64> {
    REFERENCE_MEAN_T.iter().find(|(rk, _)| *rk == k).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub runs: usize,
    /// Cluster counts to sweep; empty means the configured `k` only.
    pub k_values: Vec<usize>,
    pub oracle_check: bool,
    /// Inclusive sanity band for T; runs outside it are reported, not failed.
    pub t_band: (usize, usize),
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { runs: 100, k_values: Vec::new(), oracle_check: false, t_band: (1, 100) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub k: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub diameter: usize,
    pub d_bound: usize,
    pub t: usize,
    pub terminated: bool,
    pub total_steps: usize,
    pub step_bound: u128,
    pub messages_after_stop: u64,
    #[serde(skip)]
    pub objective: Vec<Fraction>,
    pub checks: Checks,
}

impl SweepRun {
    pub fn passed(&self) -> bool {
        self.checks.passed()
    }

    pub fn final_objective(&self) -> &Fraction {
        self.objective.last().expect("objective has the initial value")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSummary {
    pub k: usize,
    pub runs: usize,
    pub mean_t: f64,
    pub min_t: usize,
    pub max_t: usize,
    pub reference_mean_t: Option<f64>,
    pub mean_final_objective: f64,
    pub failed_seeds: Vec<u64>,
    pub out_of_band_seeds: Vec<u64>,
    pub unterminated_seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub options: SweepOptions,
    pub runs: Vec<SweepRun>,
}

/// Runs `options.runs` experiments per cluster count with master seeds
/// `config.seed`, `config.seed + 1`, ... An error in any run aborts the
/// sweep and names the seed.
pub fn run_sweep(config: &ExperimentConfig, files: &InputFiles, options: &SweepOptions) -> Result<SweepResult> {
    let ks = if options.k_values.is_empty() { vec![config.k] } else { options.k_values.clone() };
    let jobs: Vec<(usize, u64)> = ks
        .iter()
        .flat_map(|&k| (0..options.runs as u64).map(move |i| (k, i)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, i)| {
            let seed = config.seed.wrapping_add(i);
            let mut cfg = config.with_seed(seed);
            cfg.k = k;
            single(cfg, files, options.oracle_check).with_context(|| format!("sweep run with k = {k}, seed = {seed} failed"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { config: config.clone(), options: options.clone(), runs })
}

fn single(mut cfg: ExperimentConfig, files: &InputFiles, oracle_check: bool) -> Result<SweepRun> {
    let inputs = prepare(&mut cfg, files)?;
    let e = run_experiment(cfg, inputs, oracle_check)?;
    let t = e.trace;
    Ok(SweepRun {
        k: t.k,
        seed: e.config.seed,
        n: t.n,
        m: t.m,
        diameter: t.diameter,
        d_bound: t.d_bound,
        t: t.centroid_calculations(),
        terminated: t.terminated,
        total_steps: t.total_steps,
        step_bound: t.step_bound,
        messages_after_stop: t.messages_after_stop,
        objective: t.objective,
        checks: e.checks,
    })
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema: &'static str,
    config: &'a ExperimentConfig,
    options: &'a SweepOptions,
    per_k: Vec<KSummary>,
    pass: bool,
}

impl SweepResult {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(SweepRun::passed)
    }

    fn ks(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = Vec::new();
        for r in &self.runs {
            if !ks.contains(&r.k) {
                ks.push(r.k);
            }
        }
        ks
    }

    fn runs_for(&self, k: usize) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(move |r| r.k == k)
    }

    pub fn per_k(&self) -> Vec<KSummary> {
        let (lo, hi) = self.options.t_band;
        self.ks()
            .into_iter()
            .map(|k| {
                let runs: Vec<&SweepRun> = self.runs_for(k).collect();
                let count = runs.len().max(1) as f64;
                let seeds = |f: &dyn Fn(&SweepRun) -> bool| runs.iter().filter(|r| f(r)).map(|r| r.seed).collect();
                KSummary {
                    k,
                    runs: runs.len(),
                    mean_t: runs.iter().map(|r| r.t as f64).sum::<f64>() / count,
                    min_t: runs.iter().map(|r| r.t).min().unwrap_or(0),
                    max_t: runs.iter().map(|r| r.t).max().unwrap_or(0),
                    reference_mean_t: reference_mean_t(k),
                    mean_final_objective: runs.iter().map(|r| r.final_objective().to_f64()).sum::<f64>() / count,
                    failed_seeds: seeds(&|r| !r.passed()),
                    out_of_band_seeds: seeds(&|r| r.t < lo || r.t > hi),
                    unterminated_seeds: seeds(&|r| !r.terminated),
                }
            })
            .collect()
    }

    pub fn runs_csv(&self) -> String {
        let mut out = config_comment(&self.config.to_json());
        out.push_str("k,seed,n,m,D,d_bound,T,terminated,C_t,step_bound,messages_after_stop,F_num,F_den,F_approx,pass\n");
        for r in &self.runs {
            let f = r.final_objective();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.seed,
                r.n,
                r.m,
                r.diameter,
                r.d_bound,
                r.t,
                r.terminated,
                r.total_steps,
                r.step_bound,
                r.messages_after_stop,
                f.numer(),
                f.denom(),
                f.to_f64(),
                r.passed()
            );
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = config_comment(&self.config.to_json());
        out.push_str("k,T,count\n");
        for k in self.ks() {
            let max = self.runs_for(k).map(|r| r.t).max().unwrap_or(0);
            let mut counts = vec![0usize; max + 1];
            for r in self.runs_for(k) {
                counts[r.t] += 1;
            }
            for (t, c) in counts.iter().enumerate() {
                let _ = writeln!(out, "{k},{t},{c}");
            }
        }
        out
    }

    /// Mean of F(T) across runs; a finished run contributes its final value
    /// to later rounds.
    pub fn mean_objective_csv(&self) -> String {
        let mut out = config_comment(&self.config.to_json());
        out.push_str("k,T,mean_F\n");
        for k in self.ks() {
            let runs: Vec<&SweepRun> = self.runs_for(k).collect();
            let len = runs.iter().map(|r| r.objective.len()).max().unwrap_or(0);
            for t in 0..len {
                let sum: f64 = runs
                    .iter()
                    .map(|r| r.objective.get(t).unwrap_or_else(|| r.final_objective()).to_f64())
                    .sum();
                let _ = writeln!(out, "{k},{t},{}", sum / runs.len() as f64);
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let summary = SweepSummary {
            schema: SWEEP_SCHEMA,
            config: &self.config,
            options: &self.options,
            per_k: self.per_k(),
            pass: self.passed(),
        };
        let mut out = serde_json::to_string_pretty(&summary).expect("summary serializes");
        out.push('\n');
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_all(
            dir,
            &[
                ("sweep_runs.csv", self.runs_csv()),
                ("t_histogram.csv", self.histogram_csv()),
                ("mean_objective.csv", self.mean_objective_csv()),
                ("sweep_summary.json", self.summary_json()),
            ],
        )
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let (lo, hi) = self.options.t_band;
        for s in self.per_k() {
            let reference = s.reference_mean_t.map_or_else(|| "none".to_string(), |t| format!("{t}"));
            let _ = writeln!(
                out,
                "k={} runs={} mean_T={:.2} min_T={} max_T={} reference_mean_T={} failed={}",
                s.k,
                s.runs,
                s.mean_t,
                s.min_t,
                s.max_t,
                reference,
                s.failed_seeds.len()
            );
            if !s.out_of_band_seeds.is_empty() {
                let _ = writeln!(out, "k={} T outside [{lo}, {hi}] for seeds {:?}", s.k, s.out_of_band_seeds);
            }
            if !s.failed_seeds.is_empty() {
                let _ = writeln!(out, "k={} failed checks for seeds {:?}", s.k, s.failed_seeds);
            }
        }
        out
    }
}
