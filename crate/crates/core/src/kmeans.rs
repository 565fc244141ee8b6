//! Distributed k-means: assignment, labeled consensus per cluster, and the
//! round loop that adopts new centroids once the stopping window agrees.
//!
//! Cluster labels are 0-based (`0..k`).

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_traits::Zero;

use crate::consensus::{ConsensusError, ConsensusState, Decision, Mass};
use crate::coordination::{inner_loop_settled, CoordinationError, ExtremaState, WindowOutcome};
use crate::exactmath::{sq_dist_exact, ExactMathError, FractionVector};
use crate::graph::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KMeansError {
    #[error("need at least one centroid")]
    NoCentroids,
    #[error("cluster label {label} out of range for k = {k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("cluster {0} still disagrees at round end")]
    Disagreed(usize),
    #[error("stopping window must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Math(#[from] ExactMathError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
}

/// Centroids `C[T]` after `round` refinements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentroidSet {
    pub centroids: Vec<FractionVector>,
    pub round: usize,
}

impl CentroidSet {
    pub fn initial(centroids: Vec<FractionVector>) -> Self {
        Self { centroids, round: 0 }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Same centroid values, ignoring the round index.
    pub fn same_values(&self, other: &CentroidSet) -> bool {
        self.centroids == other.centroids
    }
}

/// Nearest centroid by exact squared distance; ties go to the lowest label.
pub fn assign_cluster(x: &[BigInt], centroids: &CentroidSet) -> Result<usize, KMeansError> {
    let mut best: Option<(usize, crate::exactmath::Fraction)> = None;
    for (label, c) in centroids.centroids.iter().enumerate() {
        let d = sq_dist_exact(x, c)?;
        if best.as_ref().is_none_or(|(_, b)| d < *b) {
            best = Some((label, d));
        }
    }
    best.map(|(label, _)| label).ok_or(KMeansError::NoCentroids)
}

/// Initial `(y, z)` for one labeled instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledInit {
    pub y0: Vec<BigInt>,
    pub z0: u32,
}

/// The node's own cluster starts with `(x, 1)`; every other cluster with
/// `(0, 0)`, so each instance averages exactly over that cluster's members.
pub fn init_round(x: &[BigInt], assigned: usize, k: usize) -> Result<Vec<LabeledInit>, KMeansError> {
    if assigned >= k {
        return Err(KMeansError::LabelOutOfRange { label: assigned, k });
    }
    Ok((0..k)
        .map(|label| {
            if label == assigned {
                LabeledInit { y0: x.to_vec(), z0: 1 }
            } else {
                LabeledInit { y0: vec![BigInt::zero(); x.len()], z0: 0 }
            }
        })
        .collect())
}

/// Builds `C[T+1]` from window outcomes. Empty clusters keep their previous
/// centroid. The second value is the stopping test `C[T+1] == C[T]`.
pub fn finalize_round(outcomes: &[WindowOutcome], previous: &CentroidSet) -> Result<(CentroidSet, bool), KMeansError> {
    if outcomes.len() != previous.k() {
        return Err(KMeansError::LabelOutOfRange { label: outcomes.len(), k: previous.k() });
    }
    let mut centroids = Vec::with_capacity(outcomes.len());
    for (label, (outcome, old)) in outcomes.iter().zip(&previous.centroids).enumerate() {
        centroids.push(match outcome {
            WindowOutcome::Agreed(v) => v.clone(),
            WindowOutcome::Empty => old.clone(),
            WindowOutcome::Disagreed => return Err(KMeansError::Disagreed(label)),
        });
    }
    let next = CentroidSet { centroids, round: previous.round + 1 };
    let terminated = next.same_values(previous);
    Ok((next, terminated))
}

/// Exact mean of a cluster's members.
pub fn refinement_value<'a, I>(members: I) -> Result<FractionVector, KMeansError>
where
    I: IntoIterator<Item = &'a [BigInt]>,
{
    let mut count = 0usize;
    let mut sum: Vec<BigInt> = Vec::new();
    for x in members {
        if count == 0 {
            sum = x.to_vec();
        } else {
            if x.len() != sum.len() {
                return Err(ExactMathError::DimensionMismatch { expected: sum.len(), found: x.len() }.into());
            }
            for (s, v) in sum.iter_mut().zip(x) {
                *s += v;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(KMeansError::EmptyCluster);
    }
    Ok(FractionVector::new(sum, count)?)
}

/// A consensus mass tagged with its round and cluster label.
#[derive(Debug, Clone)]
pub struct MassMessage {
    pub round: usize,
    pub label: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub mass: Mass,
}

/// An extrema broadcast; delivered to every out-neighbor of `from`.
#[derive(Debug, Clone)]
pub struct ExtremaMessage {
    pub round: usize,
    pub from: NodeId,
    pub state: Arc<ExtremaState>,
}

#[derive(Debug, Clone)]
pub struct RoundCompletion {
    /// 1-based index of the round that just finished.
    pub round: usize,
    /// Cluster this node belonged to during the round.
    pub assignment: usize,
    pub centroids: CentroidSet,
    pub terminated: bool,
}

#[derive(Debug, Default)]
pub struct NodeOutput {
    pub masses: Vec<MassMessage>,
    pub extrema: Option<ExtremaMessage>,
    pub completed: Option<RoundCompletion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Running,
    /// Stopping condition met; the node never transmits again.
    Terminated,
    /// Round cap reached without meeting the stopping condition.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeConfig {
    /// Stopping window length; must be at least the graph diameter.
    pub window: usize,
    pub max_rounds: usize,
    pub stop_rule: StopRule,
}

/// What a node feeds into the max/min window check for each cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    /// Stored ratio and the ratio of any mass held back. Agreement then
    /// implies every mass in the network has the same ratio, which must be the
    /// exact cluster mean.
    #[default]
    StoredAndHeld,
    /// Stored ratio only. A held mass whose pair is lexicographically below
    /// the local stored pair can carry a different ratio, so agreement may
    /// be reached on a value that is not the mean.
    StoredOnly,
}

/// One agent running the full clustering protocol.
#[derive(Debug, Clone)]
pub struct KMeansNode {
    id: NodeId,
    x: Vec<BigInt>,
    schedule: Arc<[NodeId]>,
    config: NodeConfig,
    centroids: CentroidSet,
    assignment: usize,
    round: usize,
    inner_step: usize,
    instances: Vec<ConsensusState>,
    extrema: Arc<ExtremaState>,
    /// States already merged since the last snapshot.
    merged: Vec<Arc<ExtremaState>>,
    status: NodeStatus,
}

impl KMeansNode {
    pub fn new(
        id: NodeId,
        x: Vec<BigInt>,
        schedule: Arc<[NodeId]>,
        initial: CentroidSet,
        config: NodeConfig,
    ) -> Result<Self, KMeansError> {
        if initial.k() == 0 {
            return Err(KMeansError::NoCentroids);
        }
        if config.window == 0 {
            return Err(KMeansError::ZeroWindow);
        }
        let dim = x.len();
        let extrema = Arc::new(ExtremaState::snapshot(&vec![None; initial.k()], dim)?);
        Ok(Self {
            id,
            x,
            schedule,
            config,
            centroids: initial,
            assignment: 0,
            round: 1,
            inner_step: 0,
            instances: Vec::new(),
            extrema,
            merged: Vec::new(),
            status: NodeStatus::Running,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn status(&self) -> NodeStatus {
        self.status
    }

    /// Round currently in progress (1-based).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn assignment(&self) -> usize {
        self.assignment
    }

    pub fn centroids(&self) -> &CentroidSet {
        &self.centroids
    }

    pub fn instances(&self) -> &[ConsensusState] {
        &self.instances
    }

    pub fn estimates(&self) -> Vec<Option<FractionVector>> {
        self.instances.iter().map(ConsensusState::estimate).collect()
    }

    /// Starts round 1.
    pub fn start(&mut self) -> Result<NodeOutput, KMeansError> {
        let mut out = NodeOutput::default();
        self.begin_round(&mut out)?;
        Ok(out)
    }

    /// One synchronous step. Messages from other rounds are ignored.
    pub fn step(&mut self, masses: &[&MassMessage], extrema: &[&ExtremaMessage]) -> Result<NodeOutput, KMeansError> {
        let mut out = NodeOutput::default();
        if self.status != NodeStatus::Running {
            return Ok(out);
        }
        self.inner_step += 1;
        let k = self.centroids.k();

        let mut per_label: Vec<Vec<&Mass>> = vec![Vec::new(); k];
        for msg in masses.iter().filter(|m| m.round == self.round) {
            per_label
                .get_mut(msg.label)
                .ok_or(KMeansError::LabelOutOfRange { label: msg.label, k })?
                .push(&msg.mass);
        }
        for (instance, incoming) in self.instances.iter_mut().zip(per_label) {
            instance.absorb(incoming)?;
        }

        let fresh: Vec<&Arc<ExtremaState>> = extrema
            .iter()
            .filter(|m| m.round == self.round && !Arc::ptr_eq(&m.state, &self.extrema))
            .map(|m| &m.state)
            .filter(|s| !self.merged.iter().any(|seen| Arc::ptr_eq(seen, s)))
            .collect();
        if fresh.iter().any(|r| self.extrema.improved_by(r)) {
            Arc::make_mut(&mut self.extrema).merge(fresh.iter().map(|r| &***r))?;
        }
        self.merged.extend(fresh.into_iter().cloned());

        let boundary = self.inner_step.is_multiple_of(self.config.window);
        if boundary {
            let outcomes = self.extrema.window_check();
            if inner_loop_settled(&outcomes) {
                let (next, terminated) = finalize_round(&outcomes, &self.centroids)?;
                out.completed = Some(RoundCompletion {
                    round: self.round,
                    assignment: self.assignment,
                    centroids: next.clone(),
                    terminated,
                });
                self.centroids = next;
                if terminated {
                    self.status = NodeStatus::Terminated;
                } else if self.round >= self.config.max_rounds {
                    self.status = NodeStatus::Exhausted;
                } else {
                    self.round += 1;
                    self.begin_round(&mut out)?;
                }
                return Ok(out);
            }
        }

        for (label, instance) in self.instances.iter_mut().enumerate() {
            if instance.trigger() == Decision::Transmit {
                let t = instance.emit()?;
                out.masses.push(MassMessage { round: self.round, label, from: self.id, to: t.to, mass: t.mass });
            }
        }
        if boundary {
            self.extrema = Arc::new(self.snapshot()?);
            self.merged.clear();
        }
        out.extrema = Some(self.broadcast());
        Ok(out)
    }

    fn begin_round(&mut self, out: &mut NodeOutput) -> Result<(), KMeansError> {
        let k = self.centroids.k();
        self.assignment = assign_cluster(&self.x, &self.centroids)?;
        self.instances.clear();
        for (label, init) in init_round(&self.x, self.assignment, k)?.into_iter().enumerate() {
            let (state, sent) = ConsensusState::init(init.y0, init.z0, Arc::clone(&self.schedule))?;
            self.instances.push(state);
            if let Some(t) = sent {
                out.masses.push(MassMessage { round: self.round, label, from: self.id, to: t.to, mass: t.mass });
            }
        }
        self.inner_step = 0;
        self.extrema = Arc::new(self.snapshot()?);
        self.merged.clear();
        out.extrema = Some(self.broadcast());
        Ok(())
    }

    fn snapshot(&self) -> Result<ExtremaState, KMeansError> {
        let mut state = ExtremaState::snapshot(&self.estimates(), self.x.len())?;
        if self.config.stop_rule == StopRule::StoredAndHeld {
            for (label, instance) in self.instances.iter().enumerate() {
                if let Some(ratio) = instance.held_ratio() {
                    state.include(label, &ratio)?;
                }
            }
        }
        Ok(state)
    }

    fn broadcast(&self) -> ExtremaMessage {
        ExtremaMessage { round: self.round, from: self.id, state: Arc::clone(&self.extrema) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactmath::int_vec;

    fn fv(nums: &[i64], den: i64) -> FractionVector {
        FractionVector::new(int_vec(nums), den).unwrap()
    }

    fn set(cs: &[FractionVector]) -> CentroidSet {
        CentroidSet::initial(cs.to_vec())
    }

    #[test]
    fn assignment_examples() {
        let x = int_vec(&[0, 0]);
        assert_eq!(assign_cluster(&x, &set(&[fv(&[1, 0], 1), fv(&[0, 2], 1)])), Ok(0));
        assert_eq!(assign_cluster(&x, &set(&[fv(&[1, 0], 1), fv(&[0, 1], 1)])), Ok(0));
        assert_eq!(assign_cluster(&int_vec(&[3]), &set(&[fv(&[7], 2), fv(&[2], 1)])), Ok(0));
        assert_eq!(assign_cluster(&x, &set(&[fv(&[5, 5], 1), fv(&[1, 1], 1)])), Ok(1));
        assert_eq!(assign_cluster(&x, &set(&[])), Err(KMeansError::NoCentroids));
    }

    #[test]
    fn init_round_examples() {
        let inits = init_round(&int_vec(&[5]), 1, 3).unwrap();
        assert_eq!(
            inits,
            vec![
                LabeledInit { y0: int_vec(&[0]), z0: 0 },
                LabeledInit { y0: int_vec(&[5]), z0: 1 },
                LabeledInit { y0: int_vec(&[0]), z0: 0 },
            ]
        );
        assert_eq!(init_round(&int_vec(&[1, 2]), 0, 1).unwrap(), vec![LabeledInit { y0: int_vec(&[1, 2]), z0: 1 }]);
        for label in 0..3 {
            let inits = init_round(&int_vec(&[4, 4]), label, 3).unwrap();
            assert_eq!(inits.iter().filter(|i| i.z0 == 1).count(), 1);
        }
        assert_eq!(init_round(&int_vec(&[1]), 3, 3), Err(KMeansError::LabelOutOfRange { label: 3, k: 3 }));
    }

    #[test]
    fn finalize_examples() {
        let prev = set(&[fv(&[3, 4], 1), fv(&[1, 1], 1)]);
        let (next, done) = finalize_round(
            &[WindowOutcome::Agreed(fv(&[6, 8], 2)), WindowOutcome::Agreed(fv(&[1, 1], 1))],
            &prev,
        )
        .unwrap();
        assert!(done);
        assert_eq!(next.round, 1);

        let (_, done) = finalize_round(
            &[WindowOutcome::Agreed(fv(&[7, 8], 2)), WindowOutcome::Agreed(fv(&[1, 1], 1))],
            &prev,
        )
        .unwrap();
        assert!(!done);

        let prev = set(&[fv(&[2, 2], 1), fv(&[9, 9], 1)]);
        let (next, _) =
            finalize_round(&[WindowOutcome::Agreed(fv(&[3, 3], 1)), WindowOutcome::Empty], &prev).unwrap();
        assert_eq!(next.centroids[1], fv(&[9, 9], 1));

        assert_eq!(
            finalize_round(&[WindowOutcome::Empty, WindowOutcome::Disagreed], &prev).unwrap_err(),
            KMeansError::Disagreed(1)
        );
    }

    #[test]
    fn refinement_examples() {
        let pts = [int_vec(&[2]), int_vec(&[4]), int_vec(&[6])];
        assert_eq!(refinement_value(pts.iter().map(Vec::as_slice)).unwrap(), fv(&[4], 1));
        let pts = [int_vec(&[1, 2]), int_vec(&[3, 4]), int_vec(&[5, 6])];
        let mean = refinement_value(pts.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(mean.denom(), &BigInt::from(3));
        assert_eq!(mean, fv(&[3, 4], 1));
        let pts = [int_vec(&[7])];
        assert_eq!(refinement_value(pts.iter().map(Vec::as_slice)).unwrap(), fv(&[7], 1));
        assert_eq!(refinement_value(core::iter::empty()), Err(KMeansError::EmptyCluster));
    }

    #[test]
    fn node_rejects_bad_config() {
        let sched: Arc<[NodeId]> = Arc::from(&[1usize][..]);
        let cfg = NodeConfig { window: 0, max_rounds: 3, stop_rule: StopRule::default() };
        assert_eq!(
            KMeansNode::new(0, int_vec(&[1]), sched.clone(), set(&[fv(&[0], 1)]), cfg).unwrap_err(),
            KMeansError::ZeroWindow
        );
        let cfg = NodeConfig { window: 1, max_rounds: 3, stop_rule: StopRule::default() };
        assert_eq!(KMeansNode::new(0, int_vec(&[1]), sched, set(&[]), cfg).unwrap_err(), KMeansError::NoCentroids);
    }

    #[test]
    fn terminated_node_is_silent() {
        let sched: Arc<[NodeId]> = Arc::from(&[1usize][..]);
        let cfg = NodeConfig { window: 1, max_rounds: 5, stop_rule: StopRule::default() };
        let mut node = KMeansNode::new(0, int_vec(&[4]), sched, set(&[fv(&[4], 1)]), cfg).unwrap();
        let out = node.start().unwrap();
        assert_eq!(out.masses.len(), 1);
        // Alone with its own mass in flight, the window sees only its own value.
        let out = node.step(&[], &[]).unwrap();
        let done = out.completed.unwrap();
        assert!(done.terminated);
        assert_eq!(node.status(), NodeStatus::Terminated);
        let out = node.step(&[], &[]).unwrap();
        assert!(out.masses.is_empty() && out.extrema.is_none() && out.completed.is_none());
    }
}
