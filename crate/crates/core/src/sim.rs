//! Lock-step scheduler for the consensus and clustering protocols.
//!
//! Everything sent at step `t` is delivered at step `t + 1`: no loss, no
//! duplication, no reordering. Runs are fully deterministic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;

use crate::consensus::{ConsensusError, ConsensusState, Mass, Transmission};
use crate::exactmath::{sq_dist_exact, ExactMathError, Fraction, FractionVector};
use crate::graph::{assign_edge_orders, Digraph, EdgeOrdering, GraphError, NodeId};
use crate::kmeans::{
    assign_cluster, refinement_value, CentroidSet, ExtremaMessage, KMeansError, KMeansNode, MassMessage, NodeConfig,
    NodeStatus, RoundCompletion, StopRule,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Math(#[from] ExactMathError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("k = {k} must be smaller than n = {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("diameter bound {bound} is below the graph diameter {diameter}")]
    DiameterBoundTooSmall { bound: usize, diameter: usize },
    #[error("step bound exceeded: {steps} steps against a bound of {bound}")]
    BoundExceeded { steps: u128, bound: u128 },
    #[error("mass not conserved at step {0}")]
    ConservationViolated(usize),
    #[error("nodes disagree on the round outcome at step {0}")]
    NodesDisagree(usize),
    #[error("round {round} did not settle within {steps} steps")]
    RoundStalled { round: usize, steps: usize },
    #[error("{0} messages sent after every node stopped")]
    NotSilent(u64),
    #[error("round {0} agreed on a centroid that is not the exact cluster mean")]
    MeanMismatch(usize),
    #[error("objective increased in round {0}")]
    ObjectiveIncreased(usize),
}

/// `n * m^2`, the consensus step bound.
pub fn consensus_step_bound(g: &Digraph) -> u128 {
    let (n, m) = (g.node_count() as u128, g.edge_count() as u128);
    n * m * m
}

/// One logged transmission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub step: usize,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub label: usize,
    pub z: BigInt,
    pub y: Vec<BigInt>,
}

#[derive(Debug, Clone, Default)]
pub struct ConsensusOptions {
    /// Edge orders to use; canonical when absent.
    pub ordering: Option<EdgeOrdering>,
    pub record_messages: bool,
    pub check_conservation: bool,
}

#[derive(Debug, Clone)]
pub struct ConsensusTrace {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    /// First step from which every estimate equals the average for good.
    pub convergence_step: usize,
    pub step_bound: u128,
    /// Steps simulated until the whole mass sat in one place.
    pub steps_simulated: usize,
    pub average: FractionVector,
    pub estimates: Vec<FractionVector>,
    pub stored: Vec<(Vec<BigInt>, BigInt)>,
    pub total_messages: u64,
    pub payload_bits: u64,
    pub max_payload_bits: u64,
    pub messages: Vec<MessageRecord>,
    pub conservation_checked: bool,
}

impl ConsensusTrace {
    pub fn bound_ok(&self) -> bool {
        self.convergence_step as u128 <= self.step_bound
    }
}

fn require_strongly_connected(g: &Digraph) -> Result<(), SimError> {
    if g.is_strongly_connected() {
        Ok(())
    } else {
        Err(GraphError::NotStronglyConnected.into())
    }
}

fn common_dim(vectors: &[Vec<BigInt>]) -> Result<usize, SimError> {
    let dim = vectors.first().map_or(0, Vec::len);
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(SimError::InvalidInput("vectors must share one positive dimension".into()));
    }
    Ok(dim)
}

fn sum_masses<'a>(dim: usize, masses: impl Iterator<Item = &'a Mass>) -> Mass {
    let mut total = Mass::zero(dim);
    for m in masses {
        for (a, b) in total.y.iter_mut().zip(&m.y) {
            *a += b;
        }
        total.z += &m.z;
    }
    total
}

fn mass_ratio_is(m: &Mass, target: &FractionVector) -> bool {
    m.y.iter().zip(target.numers()).all(|(y, t)| y * target.denom() == t * &m.z)
}

/// Runs mass-accumulation consensus with every node starting at `(y0, 1)`.
pub fn run_consensus(g: &Digraph, initial: &[Vec<BigInt>], opts: &ConsensusOptions) -> Result<ConsensusTrace, SimError> {
    require_strongly_connected(g)?;
    let n = g.node_count();
    if initial.len() != n {
        return Err(SimError::InvalidInput(format!("expected {n} initial vectors, got {}", initial.len())));
    }
    let dim = common_dim(initial)?;
    let ordering = opts.ordering.clone().unwrap_or_else(|| assign_edge_orders(g));
    if ordering.node_count() != n {
        return Err(SimError::InvalidInput("edge ordering does not match the graph".into()));
    }
    let average = refinement_value(initial.iter().map(Vec::as_slice))?;
    let initial_masses: Vec<Mass> = initial.iter().map(|y| Mass::new(y.clone(), 1)).collect();
    let expected_total = sum_masses(dim, initial_masses.iter());
    let bound = consensus_step_bound(g);

    let mut nodes = Vec::with_capacity(n);
    let mut inflight: Vec<(NodeId, Transmission)> = Vec::new();
    for (j, y0) in initial.iter().enumerate() {
        let (state, sent) = ConsensusState::init(y0.clone(), 1, ordering.schedule(j))?;
        nodes.push(state);
        inflight.extend(sent.map(|t| (j, t)));
    }

    let mut trace_messages = Vec::new();
    let mut total_messages = 0u64;
    let mut payload_bits = 0u64;
    let mut max_payload_bits = 0u64;
    let mut log = |step: usize, batch: &[(NodeId, Transmission)], record: bool| {
        for (from, t) in batch {
            let bits = t.mass.payload_bits();
            total_messages += 1;
            payload_bits += bits;
            max_payload_bits = max_payload_bits.max(bits);
            if record {
                trace_messages.push(MessageRecord {
                    step,
                    sender: *from,
                    receiver: t.to,
                    label: 0,
                    z: t.mass.z.clone(),
                    y: t.mass.y.clone(),
                });
            }
        }
    };
    log(0, &inflight, opts.record_messages);

    let all_at_average = |nodes: &[ConsensusState]| nodes.iter().all(|s| s.estimate().as_ref() == Some(&average));
    let mut last_off_average = (!all_at_average(&nodes)).then_some(0usize);
    let settle_cap = 4 * (bound + 1);
    let mut step = 0usize;
    loop {
        step += 1;
        let overdue = last_off_average.is_some_and(|s| s as u128 >= bound);
        if overdue || step as u128 > settle_cap {
            return Err(SimError::BoundExceeded { steps: step as u128, bound });
        }
        let mut inbox: Vec<Vec<&Mass>> = vec![Vec::new(); n];
        for (_, t) in &inflight {
            inbox[t.to].push(&t.mass);
        }
        let mut next = Vec::new();
        for (j, node) in nodes.iter_mut().enumerate() {
            if let Some(t) = node.step(inbox[j].iter().copied())? {
                next.push((j, t));
            }
        }
        drop(inbox);
        inflight = next;
        log(step, &inflight, opts.record_messages);

        if opts.check_conservation {
            let total = sum_masses(
                dim,
                nodes.iter().map(ConsensusState::held).chain(inflight.iter().map(|(_, t)| &t.mass)),
            );
            if total != expected_total {
                return Err(SimError::ConservationViolated(step));
            }
        }

        if !all_at_average(&nodes) {
            last_off_average = Some(step);
            continue;
        }
        // Once every remaining mass carries the average, merges and stored
        // updates can only reproduce it. Run on until the leading pair has
        // reached every node.
        let settled = nodes
            .iter()
            .map(ConsensusState::held)
            .chain(inflight.iter().map(|(_, t)| &t.mass))
            .filter(|m| !m.is_zero())
            .all(|m| mass_ratio_is(m, &average));
        let uniform = nodes
            .windows(2)
            .all(|w| w[0].stored_z() == w[1].stored_z() && w[0].stored_y() == w[1].stored_y());
        if settled && uniform {
            break;
        }
    }

    let convergence_step = last_off_average.map_or(0, |s| s + 1);
    if convergence_step as u128 > bound {
        return Err(SimError::BoundExceeded { steps: convergence_step as u128, bound });
    }
    Ok(ConsensusTrace {
        n,
        m: g.edge_count(),
        dim,
        convergence_step,
        step_bound: bound,
        steps_simulated: step,
        estimates: nodes.iter().filter_map(ConsensusState::estimate).collect(),
        stored: nodes.iter().map(|s| (s.stored_y().to_vec(), s.stored_z().clone())).collect(),
        average,
        total_messages,
        payload_bits,
        max_payload_bits,
        messages: trace_messages,
        conservation_checked: opts.check_conservation,
    })
}

/// Sum of squared distances from each observation to its assigned centroid.
pub fn distance_objective(
    observations: &[Vec<BigInt>],
    assignments: &[usize],
    centroids: &CentroidSet,
) -> Result<Fraction, SimError> {
    if observations.len() != assignments.len() {
        return Err(SimError::InvalidInput("one assignment per observation required".into()));
    }
    let mut total = Fraction::zero();
    for (x, &a) in observations.iter().zip(assignments) {
        let c = centroids
            .centroids
            .get(a)
            .ok_or(KMeansError::LabelOutOfRange { label: a, k: centroids.k() })?;
        total = total.add(&sq_dist_exact(x, c)?);
    }
    Ok(total.reduced())
}

/// Nearest-centroid assignment of every observation.
pub fn assign_all(observations: &[Vec<BigInt>], centroids: &CentroidSet) -> Result<Vec<usize>, SimError> {
    observations.iter().map(|x| assign_cluster(x, centroids).map_err(SimError::from)).collect()
}

/// Inputs of one clustering run.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub graph: Digraph,
    pub observations: Vec<Vec<BigInt>>,
    pub initial: CentroidSet,
    /// Diameter bound known to every node; also the stopping window length.
    pub d_bound: usize,
    pub max_rounds: usize,
    pub ordering: Option<EdgeOrdering>,
    pub check_conservation: bool,
    pub stop_rule: StopRule,
    /// Extra steps simulated after the final round to watch for stray traffic.
    pub silence_steps: usize,
}

impl KMeansRun {
    /// Defaults: 100 rounds, canonical edge orders, no conservation check,
    /// the sound stop rule, and `d_bound + 2` silence steps.
    pub fn new(graph: Digraph, observations: Vec<Vec<BigInt>>, initial: CentroidSet, d_bound: usize) -> Self {
        Self {
            graph,
            observations,
            initial,
            d_bound,
            max_rounds: 100,
            ordering: None,
            check_conservation: false,
            stop_rule: StopRule::default(),
            silence_steps: d_bound + 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// 1-based round index; the round computes `C[round]` from `C[round - 1]`.
    pub round: usize,
    pub steps: usize,
    pub consensus_messages: u64,
    pub extrema_messages: u64,
    pub assignments: Vec<usize>,
    pub centroids: CentroidSet,
    /// Whether every nonempty cluster's agreed centroid equals the exact mean
    /// of its members.
    pub means_match: bool,
}

#[derive(Debug, Clone)]
pub struct KMeansTrace {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    pub k: usize,
    pub diameter: usize,
    pub d_bound: usize,
    pub max_rounds: usize,
    pub rounds: Vec<RoundRecord>,
    /// `C[0], C[1], ..., C[T]`.
    pub centroid_sequence: Vec<CentroidSet>,
    /// `F` evaluated at each entry of `centroid_sequence`.
    pub objective: Vec<Fraction>,
    pub final_assignments: Vec<usize>,
    pub terminated: bool,
    /// Steps until the last node stopped.
    pub total_steps: usize,
    pub step_bound: u128,
    pub consensus_messages: u64,
    pub extrema_messages: u64,
    pub payload_bits: u64,
    pub max_payload_bits: u64,
    pub messages_per_step: Vec<u32>,
    /// Messages sent at or after the step in which all nodes stopped.
    pub messages_after_stop: u64,
    pub conservation_checked: bool,
}

impl KMeansTrace {
    /// Number of centroid calculations `T`.
    pub fn centroid_calculations(&self) -> usize {
        self.rounds.len()
    }

    pub fn step_bound_ok(&self) -> bool {
        self.total_steps as u128 <= self.step_bound
    }

    pub fn silence_ok(&self) -> bool {
        self.messages_after_stop == 0
    }

    pub fn means_ok(&self) -> bool {
        self.rounds.iter().all(|r| r.means_match)
    }

    pub fn objective_non_increasing(&self) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0])
    }

    /// All protocol checks that must hold on every run.
    pub fn verify(&self) -> Result<(), SimError> {
        if !self.step_bound_ok() {
            return Err(SimError::BoundExceeded { steps: self.total_steps as u128, bound: self.step_bound });
        }
        if !self.silence_ok() {
            return Err(SimError::NotSilent(self.messages_after_stop));
        }
        if let Some(r) = self.rounds.iter().find(|r| !r.means_match) {
            return Err(SimError::MeanMismatch(r.round));
        }
        if let Some(t) = self.objective.windows(2).position(|w| w[1] > w[0]) {
            return Err(SimError::ObjectiveIncreased(t + 1));
        }
        Ok(())
    }
}

/// Runs the full clustering protocol until every node stops or the round cap
/// is reached.
pub fn run_kmeans(run: &KMeansRun) -> Result<KMeansTrace, SimError> {
    let g = &run.graph;
    require_strongly_connected(g)?;
    let n = g.node_count();
    let k = run.initial.k();
    if run.observations.len() != n {
        return Err(SimError::InvalidInput(format!("expected {n} observations, got {}", run.observations.len())));
    }
    let dim = common_dim(&run.observations)?;
    if k == 0 {
        return Err(KMeansError::NoCentroids.into());
    }
    if k >= n {
        return Err(SimError::TooManyClusters { k, n });
    }
    if run.initial.centroids.iter().any(|c| c.dim() != dim) {
        return Err(SimError::InvalidInput("centroid dimension differs from observations".into()));
    }
    if run.max_rounds == 0 {
        return Err(SimError::InvalidInput("max_rounds must be positive".into()));
    }
    let diameter = g.diameter()?;
    if run.d_bound < diameter {
        return Err(SimError::DiameterBoundTooSmall { bound: run.d_bound, diameter });
    }
    let ordering = run.ordering.clone().unwrap_or_else(|| assign_edge_orders(g));
    let config = NodeConfig { window: run.d_bound, max_rounds: run.max_rounds, stop_rule: run.stop_rule };
    let consensus_bound = consensus_step_bound(g);
    let round_cap = usize::try_from(consensus_bound).unwrap_or(usize::MAX).saturating_add(3 * run.d_bound + 1);

    let mut nodes = Vec::with_capacity(n);
    let mut masses: Vec<MassMessage> = Vec::new();
    let mut broadcasts: Vec<Option<ExtremaMessage>> = vec![None; n];
    for (j, x) in run.observations.iter().enumerate() {
        let mut node = KMeansNode::new(j, x.clone(), ordering.schedule(j), run.initial.clone(), config)?;
        let out = node.start()?;
        masses.extend(out.masses);
        broadcasts[j] = out.extrema;
        nodes.push(node);
    }

    let mut stats = Traffic::default();
    let mut messages_per_step = vec![stats.count(g, &masses, &broadcasts)];
    let mut round_traffic = (stats.consensus, stats.extrema);

    let mut centroid_sequence = vec![run.initial.clone()];
    let mut rounds = Vec::new();
    let mut round_start = 0usize;
    let mut stop_step: Option<usize> = None;
    let mut step = 0usize;

    while stop_step.is_none() {
        step += 1;
        let mut inbox: Vec<Vec<&MassMessage>> = vec![Vec::new(); n];
        for msg in &masses {
            inbox[msg.to].push(msg);
        }
        let mut next_masses = Vec::new();
        let mut next_broadcasts = vec![None; n];
        let mut completions: Vec<Option<RoundCompletion>> = Vec::with_capacity(n);
        for (j, node) in nodes.iter_mut().enumerate() {
            let heard: Vec<&ExtremaMessage> =
                g.in_neighbors(j).iter().filter_map(|&i| broadcasts[i].as_ref()).collect();
            let out = node.step(&inbox[j], &heard)?;
            next_masses.extend(out.masses);
            next_broadcasts[j] = out.extrema;
            completions.push(out.completed);
        }
        drop(inbox);
        masses = next_masses;
        broadcasts = next_broadcasts;
        messages_per_step.push(stats.count(g, &masses, &broadcasts));

        let finished = completions.iter().filter(|c| c.is_some()).count();
        if finished > 0 {
            if finished != n {
                return Err(SimError::NodesDisagree(step));
            }
            let completions: Vec<RoundCompletion> = completions.into_iter().flatten().collect();
            let first = &completions[0];
            if completions
                .iter()
                .any(|c| c.round != first.round || c.terminated != first.terminated || c.centroids != first.centroids)
            {
                return Err(SimError::NodesDisagree(step));
            }
            let assignments: Vec<usize> = completions.iter().map(|c| c.assignment).collect();
            let means_match = agreed_values_are_means(&run.observations, &assignments, &first.centroids)?;
            rounds.push(RoundRecord {
                round: first.round,
                steps: step - round_start,
                consensus_messages: stats.consensus - round_traffic.0,
                extrema_messages: stats.extrema - round_traffic.1,
                assignments,
                centroids: first.centroids.clone(),
                means_match,
            });
            centroid_sequence.push(first.centroids.clone());
            round_start = step;
            round_traffic = (stats.consensus, stats.extrema);
            if nodes.iter().all(|node| node.status() != NodeStatus::Running) {
                stop_step = Some(step);
            }
        } else if step - round_start > round_cap {
            return Err(SimError::RoundStalled { round: nodes[0].round(), steps: step - round_start });
        }

        if run.check_conservation && stop_step.is_none() {
            check_labeled_conservation(&nodes, &masses, &run.observations, k, dim, step)?;
        }
    }
    let stop_step = stop_step.unwrap_or(step);
    let mut messages_after_stop = u64::from(messages_per_step[stop_step]);
    for _ in 0..run.silence_steps {
        let mut inbox: Vec<Vec<&MassMessage>> = vec![Vec::new(); n];
        for msg in &masses {
            inbox[msg.to].push(msg);
        }
        let mut next_masses = Vec::new();
        let mut next_broadcasts = vec![None; n];
        for (j, node) in nodes.iter_mut().enumerate() {
            let heard: Vec<&ExtremaMessage> =
                g.in_neighbors(j).iter().filter_map(|&i| broadcasts[i].as_ref()).collect();
            let out = node.step(&inbox[j], &heard)?;
            next_masses.extend(out.masses);
            next_broadcasts[j] = out.extrema;
        }
        drop(inbox);
        masses = next_masses;
        broadcasts = next_broadcasts;
        let sent = stats.count(g, &masses, &broadcasts);
        messages_after_stop += u64::from(sent);
        messages_per_step.push(sent);
    }

    let objective = centroid_sequence
        .iter()
        .map(|c| distance_objective(&run.observations, &assign_all(&run.observations, c)?, c))
        .collect::<Result<Vec<_>, _>>()?;
    let last = centroid_sequence.last().unwrap_or(&run.initial);
    let final_assignments = assign_all(&run.observations, last)?;
    let terminated = nodes.iter().all(|node| node.status() == NodeStatus::Terminated);
    let t = rounds.len() as u128;

    Ok(KMeansTrace {
        n,
        m: g.edge_count(),
        dim,
        k,
        diameter,
        d_bound: run.d_bound,
        max_rounds: run.max_rounds,
        rounds,
        centroid_sequence,
        objective,
        final_assignments,
        terminated,
        total_steps: stop_step,
        step_bound: t * (run.d_bound as u128 + consensus_bound),
        consensus_messages: stats.consensus,
        extrema_messages: stats.extrema,
        payload_bits: stats.payload_bits,
        max_payload_bits: stats.max_payload_bits,
        messages_per_step,
        messages_after_stop,
        conservation_checked: run.check_conservation,
    })
}

#[derive(Debug, Default)]
struct Traffic {
    consensus: u64,
    extrema: u64,
    payload_bits: u64,
    max_payload_bits: u64,
}

impl Traffic {
    /// Tallies one step's sends; a broadcast counts once per out-edge.
    fn count(&mut self, g: &Digraph, masses: &[MassMessage], broadcasts: &[Option<ExtremaMessage>]) -> u32 {
        let mut sent = 0u32;
        for m in masses {
            let bits = m.mass.payload_bits();
            self.payload_bits += bits;
            self.max_payload_bits = self.max_payload_bits.max(bits);
            self.consensus += 1;
            sent += 1;
        }
        for b in broadcasts.iter().flatten() {
            let fanout = g.out_degree(b.from) as u64;
            self.extrema += fanout;
            sent += fanout as u32;
        }
        sent
    }
}

fn agreed_values_are_means(
    observations: &[Vec<BigInt>],
    assignments: &[usize],
    centroids: &CentroidSet,
) -> Result<bool, SimError> {
    for (label, c) in centroids.centroids.iter().enumerate() {
        let members: Vec<&[BigInt]> = observations
            .iter()
            .zip(assignments)
            .filter(|(_, &a)| a == label)
            .map(|(x, _)| x.as_slice())
            .collect();
        if members.is_empty() {
            continue;
        }
        if refinement_value(members)? != *c {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Per label: held masses plus in-flight masses of the current round equal
/// the sum over that cluster's members.
fn check_labeled_conservation(
    nodes: &[KMeansNode],
    inflight: &[MassMessage],
    observations: &[Vec<BigInt>],
    k: usize,
    dim: usize,
    step: usize,
) -> Result<(), SimError> {
    let Some(round) = nodes.iter().find(|n| n.status() == NodeStatus::Running).map(KMeansNode::round) else {
        return Ok(());
    };
    for label in 0..k {
        let mut expected = Mass::zero(dim);
        for (node, x) in nodes.iter().zip(observations) {
            if node.assignment() == label {
                expected.absorb(&Mass::new(x.clone(), 1))?;
            }
        }
        let held = nodes.iter().filter_map(|n| n.instances().get(label).map(ConsensusState::held));
        let flying = inflight.iter().filter(|m| m.round == round && m.label == label).map(|m| &m.mass);
        let total = sum_masses(dim, held.chain(flying));
        if total != expected {
            return Err(SimError::ConservationViolated(step));
        }
    }
    if nodes.iter().any(|n| n.status() == NodeStatus::Running && n.round() != round) {
        return Err(SimError::NodesDisagree(step));
    }
    Ok(())
}
