//! Max/min-consensus and the windowed stopping test built on it.
//!
//! Every `D` steps a node snapshots its per-cluster estimates into running
//! per-dimension maxima and minima, then merges what its in-neighbors
//! broadcast for `D` rounds. On a strongly connected graph with diameter at
//! most `D` the result is the network-wide extrema at every node, so all nodes
//! reach the same verdict in the same step.

use alloc::vec::Vec;

use crate::exactmath::{Fraction, FractionVector};
use crate::graph::Digraph;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoordinationError {
    #[error("cluster count mismatch: expected {expected}, found {found}")]
    ClusterCountMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// One max-consensus update: the largest of `own` and everything received.
pub fn max_consensus_step<'a, T: Ord + Clone + 'a>(own: &T, received: impl IntoIterator<Item = &'a T>) -> T {
    received.into_iter().fold(own, |best, v| if v > best { v } else { best }).clone()
}

/// One min-consensus update.
pub fn min_consensus_step<'a, T: Ord + Clone + 'a>(own: &T, received: impl IntoIterator<Item = &'a T>) -> T {
    received.into_iter().fold(own, |best, v| if v < best { v } else { best }).clone()
}

/// Per-dimension running maximum and minimum for one cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bounds {
    pub max: Vec<Fraction>,
    pub min: Vec<Fraction>,
}

impl Bounds {
    fn from_point(v: &FractionVector) -> Self {
        let point: Vec<Fraction> = v.components().collect();
        Self { max: point.clone(), min: point }
    }
}

/// Extrema state for all `k` clusters; a cluster with no bounds has not been
/// observed by any contributing node in the current window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtremaState {
    dim: usize,
    clusters: Vec<Option<Bounds>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowOutcome {
    Agreed(FractionVector),
    Disagreed,
    Empty,
}

impl ExtremaState {
    /// Starts a window from the node's own estimates (one entry per cluster).
    pub fn snapshot(estimates: &[Option<FractionVector>], dim: usize) -> Result<Self, CoordinationError> {
        let clusters = estimates
            .iter()
            .map(|e| match e {
                Some(v) if v.dim() != dim => Err(CoordinationError::DimensionMismatch { expected: dim, found: v.dim() }),
                Some(v) => Ok(Some(Bounds::from_point(v))),
                None => Ok(None),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { dim, clusters })
    }

    /// Widens one cluster's bounds to cover `point`.
    pub fn include(&mut self, cluster: usize, point: &FractionVector) -> Result<(), CoordinationError> {
        if point.dim() != self.dim {
            return Err(CoordinationError::DimensionMismatch { expected: self.dim, found: point.dim() });
        }
        let count = self.clusters.len();
        let slot = self
            .clusters
            .get_mut(cluster)
            .ok_or(CoordinationError::ClusterCountMismatch { expected: count, found: cluster + 1 })?;
        match slot {
            None => *slot = Some(Bounds::from_point(point)),
            Some(b) => {
                for ((hi, lo), v) in b.max.iter_mut().zip(b.min.iter_mut()).zip(point.components()) {
                    if v > *hi {
                        *hi = v.clone();
                    }
                    if v < *lo {
                        *lo = v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_defined(&self, cluster: usize) -> bool {
        self.clusters[cluster].is_some()
    }

    pub fn bounds(&self, cluster: usize) -> Option<&Bounds> {
        self.clusters[cluster].as_ref()
    }

    /// Folds received states into this one: per-dimension max of maxima, min
    /// of minima, undefined entries acting as identity. Returns whether
    /// anything changed.
    pub fn merge<'a, I>(&mut self, received: I) -> Result<bool, CoordinationError>
    where
        I: IntoIterator<Item = &'a ExtremaState>,
    {
        let mut changed = false;
        for other in received {
            if other.clusters.len() != self.clusters.len() {
                return Err(CoordinationError::ClusterCountMismatch {
                    expected: self.clusters.len(),
                    found: other.clusters.len(),
                });
            }
            if other.dim != self.dim {
                return Err(CoordinationError::DimensionMismatch { expected: self.dim, found: other.dim });
            }
            for (mine, theirs) in self.clusters.iter_mut().zip(&other.clusters) {
                let Some(theirs) = theirs else { continue };
                match mine {
                    None => {
                        *mine = Some(theirs.clone());
                        changed = true;
                    }
                    Some(mine) => {
                        for (a, b) in mine.max.iter_mut().zip(&theirs.max) {
                            if b > a {
                                a.clone_from(b);
                                changed = true;
                            }
                        }
                        for (a, b) in mine.min.iter_mut().zip(&theirs.min) {
                            if b < a {
                                a.clone_from(b);
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        Ok(changed)
    }

    /// Whether merging `other` would change this state. Shape mismatches
    /// report `true` so that `merge` gets to raise the error.
    pub fn improved_by(&self, other: &ExtremaState) -> bool {
        if other.clusters.len() != self.clusters.len() || other.dim != self.dim {
            return true;
        }
        self.clusters.iter().zip(&other.clusters).any(|(mine, theirs)| match (mine, theirs) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => {
                a.max.iter().zip(&b.max).any(|(x, y)| y > x) || a.min.iter().zip(&b.min).any(|(x, y)| y < x)
            }
        })
    }

    /// Window-end verdict per cluster.
    pub fn window_check(&self) -> Vec<WindowOutcome> {
        self.clusters
            .iter()
            .map(|c| match c {
                None => WindowOutcome::Empty,
                Some(b) if b.max == b.min => WindowOutcome::Agreed(FractionVector::from_components(&b.max).reduced()),
                Some(_) => WindowOutcome::Disagreed,
            })
            .collect()
    }
}

/// True when no cluster is still disagreeing, i.e. the inner loop may stop.
pub fn inner_loop_settled(outcomes: &[WindowOutcome]) -> bool {
    !outcomes.iter().any(|o| matches!(o, WindowOutcome::Disagreed))
}

/// Runs `rounds` synchronous merge rounds over `g`: in each round every node
/// merges the states its in-neighbors held at the end of the previous round.
pub fn run_merge_rounds(
    g: &Digraph,
    mut states: Vec<ExtremaState>,
    rounds: usize,
) -> Result<Vec<ExtremaState>, CoordinationError> {
    for _ in 0..rounds {
        let previous = states.clone();
        for (j, state) in states.iter_mut().enumerate() {
            state.merge(g.in_neighbors(j).iter().map(|&i| &previous[i]))?;
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactmath::int_vec;
    use alloc::vec;

    fn fv(nums: &[i64], den: i64) -> FractionVector {
        FractionVector::new(int_vec(nums), den).unwrap()
    }

    fn fr(n: i64, d: i64) -> Fraction {
        Fraction::new(n, d).unwrap()
    }

    #[test]
    fn scalar_max_min_steps() {
        assert_eq!(max_consensus_step(&3, &[5, 2]), 5);
        assert_eq!(max_consensus_step(&7, &[]), 7);
        assert_eq!(min_consensus_step(&3, &[5, 2]), 2);
    }

    #[test]
    fn max_consensus_on_four_cycle_takes_diameter_steps() {
        let g = Digraph::cycle(4).unwrap();
        let mut values = vec![1, 9, 2, 3];
        let d = g.diameter().unwrap();
        for step in 1..=d {
            let prev = values.clone();
            for (j, v) in values.iter_mut().enumerate() {
                *v = max_consensus_step(&prev[j], g.in_neighbors(j).iter().map(|&i| &prev[i]));
            }
            if step < d {
                assert!(values.iter().any(|&v| v != 9));
            }
        }
        assert_eq!(values, vec![9; 4]);
    }

    #[test]
    fn snapshot_examples() {
        let s = ExtremaState::snapshot(&[Some(fv(&[7], 2)), None], 1).unwrap();
        assert!(s.is_defined(0) && !s.is_defined(1));
        assert_eq!(s.bounds(0).unwrap().max, vec![fr(7, 2)]);
        assert_eq!(s.bounds(0).unwrap().min, vec![fr(7, 2)]);

        let s = ExtremaState::snapshot(&[None, None, None], 2).unwrap();
        assert!((0..3).all(|c| !s.is_defined(c)));

        let s = ExtremaState::snapshot(&[Some(fv(&[9, 12], 3))], 2).unwrap();
        assert_eq!(s.bounds(0).unwrap().max, vec![fr(3, 1), fr(4, 1)]);

        assert!(ExtremaState::snapshot(&[Some(fv(&[1], 1))], 2).is_err());
    }

    #[test]
    fn merge_examples() {
        let mut own = ExtremaState::snapshot(&[Some(fv(&[3], 1))], 1).unwrap();
        let other = ExtremaState::snapshot(&[Some(fv(&[7], 2))], 1).unwrap();
        assert!(own.merge([&other]).unwrap());
        assert_eq!(own.bounds(0).unwrap().max, vec![fr(7, 2)]);
        assert_eq!(own.bounds(0).unwrap().min, vec![fr(3, 1)]);

        let mut own = ExtremaState::snapshot(&[None], 1).unwrap();
        own.merge([&other]).unwrap();
        assert_eq!(own, other);

        let mut own = ExtremaState::snapshot(&[Some(fv(&[1, 5], 1))], 2).unwrap();
        let other = ExtremaState::snapshot(&[Some(fv(&[2, 3], 1))], 2).unwrap();
        own.merge([&other]).unwrap();
        let b = own.bounds(0).unwrap();
        assert_eq!(b.max, vec![fr(2, 1), fr(5, 1)]);
        assert_eq!(b.min, vec![fr(1, 1), fr(3, 1)]);
        assert!(!own.merge([&other]).unwrap());
        assert!(!own.improved_by(&other));
        let wider = ExtremaState::snapshot(&[Some(fv(&[0, 5], 1))], 2).unwrap();
        assert!(own.improved_by(&wider));
    }

    #[test]
    fn include_widens_bounds() {
        let mut s = ExtremaState::snapshot(&[Some(fv(&[3, 3], 1)), None], 2).unwrap();
        s.include(0, &fv(&[1, 5], 1)).unwrap();
        s.include(1, &fv(&[2, 2], 1)).unwrap();
        let b = s.bounds(0).unwrap();
        assert_eq!(b.max, vec![fr(3, 1), fr(5, 1)]);
        assert_eq!(b.min, vec![fr(1, 1), fr(3, 1)]);
        assert_eq!(s.bounds(1).unwrap().max, vec![fr(2, 1), fr(2, 1)]);
        assert!(s.include(0, &fv(&[1], 1)).is_err());
        assert!(s.include(2, &fv(&[1, 1], 1)).is_err());
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let mut own = ExtremaState::snapshot(&[None, None], 1).unwrap();
        let other = ExtremaState::snapshot(&[None], 1).unwrap();
        assert!(matches!(own.merge([&other]), Err(CoordinationError::ClusterCountMismatch { .. })));
        let other = ExtremaState::snapshot(&[None, None], 2).unwrap();
        assert!(matches!(own.merge([&other]), Err(CoordinationError::DimensionMismatch { .. })));
    }

    #[test]
    fn window_check_examples() {
        let agreed = ExtremaState::snapshot(&[Some(fv(&[3, 4], 1))], 2).unwrap();
        assert_eq!(agreed.window_check(), vec![WindowOutcome::Agreed(fv(&[3, 4], 1))]);

        let mut split = agreed.clone();
        split.merge([&ExtremaState::snapshot(&[Some(fv(&[6, 7], 2))], 2).unwrap()]).unwrap();
        assert_eq!(split.window_check(), vec![WindowOutcome::Disagreed]);

        let g = Digraph::cycle(5).unwrap();
        let states = vec![ExtremaState::snapshot(&[None], 1).unwrap(); 5];
        let out = run_merge_rounds(&g, states, g.diameter().unwrap()).unwrap();
        assert!(out.iter().all(|s| s.window_check() == vec![WindowOutcome::Empty]));
    }

    #[test]
    fn settled_only_without_disagreement() {
        assert!(inner_loop_settled(&[WindowOutcome::Empty, WindowOutcome::Agreed(fv(&[1], 1))]));
        assert!(!inner_loop_settled(&[WindowOutcome::Disagreed, WindowOutcome::Empty]));
    }
}
