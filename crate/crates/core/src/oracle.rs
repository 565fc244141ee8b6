//! Centralized reference computations used to validate distributed runs.

use alloc::vec::Vec;

use num_bigint::BigInt;

use crate::exactmath::{sq_dist_exact, Fraction, FractionVector};
use crate::kmeans::{assign_cluster, refinement_value, CentroidSet, KMeansError};
use crate::sim::KMeansTrace;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("no vectors to average")]
    Empty,
    #[error("vectors have differing dimensions")]
    Ragged,
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

/// `(sum of vectors) / count`, accumulated directly.
pub fn brute_average(vectors: &[Vec<BigInt>]) -> Result<FractionVector, OracleError> {
    let first = vectors.first().ok_or(OracleError::Empty)?;
    let mut sum = first.clone();
    for v in &vectors[1..] {
        if v.len() != sum.len() {
            return Err(OracleError::Ragged);
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    FractionVector::new(sum, vectors.len()).map_err(|_| OracleError::Empty)
}

/// Global per-dimension `(max, min)` over the defined entries, found by
/// sorting each dimension.
pub fn global_extrema(values: &[Option<FractionVector>]) -> Option<(Vec<Fraction>, Vec<Fraction>)> {
    let defined: Vec<&FractionVector> = values.iter().flatten().collect();
    let dim = defined.first()?.dim();
    let mut max = Vec::with_capacity(dim);
    let mut min = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut column: Vec<Fraction> = defined.iter().map(|v| v.component(i)).collect();
        column.sort();
        min.push(column[0].clone());
        max.push(column[column.len() - 1].clone());
    }
    Some((max, min))
}

/// Which label wins when several centroids are equally near.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    Lowest,
    Highest,
}

#[derive(Debug, Clone)]
pub struct LloydResult {
    /// `C[0], ..., C[T]`.
    pub sequence: Vec<CentroidSet>,
    /// Number of refinements `T`.
    pub rounds: usize,
    pub terminated: bool,
}

fn assign_with(x: &[BigInt], centroids: &CentroidSet, tie: TieBreak) -> Result<usize, KMeansError> {
    match tie {
        TieBreak::Lowest => assign_cluster(x, centroids),
        TieBreak::Highest => {
            let mut best: Option<(usize, Fraction)> = None;
            for (label, c) in centroids.centroids.iter().enumerate() {
                let d = sq_dist_exact(x, c)?;
                if best.as_ref().is_none_or(|(_, b)| d <= *b) {
                    best = Some((label, d));
                }
            }
            best.map(|(l, _)| l).ok_or(KMeansError::NoCentroids)
        }
    }
}

/// Centralized Lloyd iteration with exact arithmetic. Empty clusters keep
/// their centroid; stops when a refinement reproduces the previous centroids.
pub fn lloyd_reference(
    observations: &[Vec<BigInt>],
    initial: &CentroidSet,
    max_rounds: usize,
) -> Result<LloydResult, OracleError> {
    lloyd_reference_with(observations, initial, max_rounds, TieBreak::Lowest)
}

pub fn lloyd_reference_with(
    observations: &[Vec<BigInt>],
    initial: &CentroidSet,
    max_rounds: usize,
    tie: TieBreak,
) -> Result<LloydResult, OracleError> {
    let mut sequence = alloc::vec![initial.clone()];
    let mut terminated = false;
    while sequence.len() <= max_rounds {
        let current = &sequence[sequence.len() - 1];
        let labels = observations
            .iter()
            .map(|x| assign_with(x, current, tie))
            .collect::<Result<Vec<_>, _>>()?;
        let mut centroids = Vec::with_capacity(current.k());
        for (label, old) in current.centroids.iter().enumerate() {
            let members = observations.iter().zip(&labels).filter(|(_, &l)| l == label).map(|(x, _)| x.as_slice());
            centroids.push(match refinement_value(members) {
                Ok(mean) => mean,
                Err(KMeansError::EmptyCluster) => old.clone(),
                Err(e) => return Err(e.into()),
            });
        }
        let next = CentroidSet { centroids, round: current.round + 1 };
        let done = next.same_values(current);
        sequence.push(next);
        if done {
            terminated = true;
            break;
        }
    }
    Ok(LloydResult { rounds: sequence.len() - 1, sequence, terminated })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Index into the centroid sequence.
    pub round: usize,
    /// First differing cluster; `None` when one sequence simply ended.
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub pass: bool,
    pub distributed_rounds: usize,
    pub oracle_rounds: usize,
    pub first_divergence: Option<Divergence>,
}

/// Compares the distributed centroid sequence against the oracle's, round by
/// round, with exact equality.
pub fn check_equivalence(trace: &KMeansTrace, oracle: &LloydResult) -> EquivalenceReport {
    let ours = &trace.centroid_sequence;
    let theirs = &oracle.sequence;
    let mut first_divergence = None;
    for (round, (a, b)) in ours.iter().zip(theirs).enumerate() {
        if let Some(cluster) = (0..a.k().max(b.k())).find(|&c| a.centroids.get(c) != b.centroids.get(c)) {
            first_divergence = Some(Divergence { round, cluster: Some(cluster) });
            break;
        }
    }
    if first_divergence.is_none() && ours.len() != theirs.len() {
        first_divergence = Some(Divergence { round: ours.len().min(theirs.len()), cluster: None });
    }
    let distributed_rounds = trace.centroid_calculations();
    EquivalenceReport {
        pass: first_divergence.is_none() && distributed_rounds == oracle.rounds && trace.terminated == oracle.terminated,
        distributed_rounds,
        oracle_rounds: oracle.rounds,
        first_divergence,
    }
}

/// Floating-point Lloyd on the same data, for contrast with the exact runs.
/// Returns the centroid sequence and whether it stopped before `max_rounds`.
pub fn lloyd_float(observations: &[Vec<f64>], initial: &[Vec<f64>], max_rounds: usize) -> (Vec<Vec<Vec<f64>>>, bool) {
    let mut sequence = alloc::vec![initial.to_vec()];
    for _ in 0..max_rounds {
        let current = &sequence[sequence.len() - 1];
        let dim = current.first().map_or(0, Vec::len);
        let mut sums = alloc::vec![alloc::vec![0.0; dim]; current.len()];
        let mut counts = alloc::vec![0usize; current.len()];
        for x in observations {
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let mut best = 0;
            for (label, c) in current.iter().enumerate() {
                if dist(c) < dist(&current[best]) {
                    best = label;
                }
            }
            counts[best] += 1;
            for (s, v) in sums[best].iter_mut().zip(x) {
                *s += v;
            }
        }
        let next: Vec<Vec<f64>> = current
            .iter()
            .zip(sums.iter().zip(&counts))
            .map(|(old, (sum, &count))| {
                if count == 0 {
                    old.clone()
                } else {
                    sum.iter().map(|s| s / count as f64).collect()
                }
            })
            .collect();
        let done = next == *current;
        sequence.push(next);
        if done {
            return (sequence, true);
        }
    }
    (sequence, false)
}
