//! Static directed communication graphs.
//!
//! An edge `(receiver, sender)` means `sender` can transmit to `receiver`.
//! Node identifiers are dense and 0-based.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("random graphs need n > 2, got {0}")]
    TooFewNodes(usize),
    #[error("edge probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("node {node} out of range for n = {n}")]
    NodeOutOfRange { node: NodeId, n: usize },
    #[error("duplicate edge {sender} -> {receiver}")]
    DuplicateEdge { receiver: NodeId, sender: NodeId },
    #[error("graph not strongly connected")]
    NotStronglyConnected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    in_neighbors: Vec<Vec<NodeId>>,
    out_neighbors: Vec<Vec<NodeId>>,
    edge_count: usize,
}

impl Digraph {
    /// Builds a digraph from `(receiver, sender)` pairs.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        let mut edge_count = 0;
        for (receiver, sender) in edges {
            for node in [receiver, sender] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if receiver == sender {
                return Err(GraphError::SelfLoop(receiver));
            }
            in_neighbors[receiver].push(sender);
            out_neighbors[sender].push(receiver);
            edge_count += 1;
        }
        for (receiver, list) in in_neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(GraphError::DuplicateEdge { receiver, sender: w[0] });
            }
        }
        for list in &mut out_neighbors {
            list.sort_unstable();
        }
        Ok(Self { in_neighbors, out_neighbors, edge_count })
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, (0..n).map(|i| ((i + 1) % n, i)))
    }

    /// Every ordered pair of distinct nodes is an edge.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, (0..n).flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i))))
    }

    pub fn node_count(&self) -> usize {
        self.in_neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn in_neighbors(&self, j: NodeId) -> &[NodeId] {
        &self.in_neighbors[j]
    }

    pub fn out_neighbors(&self, j: NodeId) -> &[NodeId] {
        &self.out_neighbors[j]
    }

    pub fn in_degree(&self, j: NodeId) -> usize {
        self.in_neighbors[j].len()
    }

    pub fn out_degree(&self, j: NodeId) -> usize {
        self.out_neighbors[j].len()
    }

    /// All edges as `(receiver, sender)`, receiver-major, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.in_neighbors
            .iter()
            .enumerate()
            .flat_map(|(j, senders)| senders.iter().map(move |&i| (j, i)))
    }

    pub fn has_edge(&self, receiver: NodeId, sender: NodeId) -> bool {
        self.in_neighbors[receiver].binary_search(&sender).is_ok()
    }

    /// Hop distances from `source` along edge direction; `None` if unreachable.
    pub fn distances_from(&self, source: NodeId) -> Vec<Option<usize>> {
        bfs(&self.out_neighbors, source)
    }

    pub fn is_strongly_connected(&self) -> bool {
        let forward = bfs(&self.out_neighbors, 0);
        let backward = bfs(&self.in_neighbors, 0);
        forward.iter().chain(&backward).all(Option::is_some)
    }

    /// Longest shortest directed path over all ordered pairs.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        let mut diameter = 0;
        for source in 0..self.node_count() {
            for d in self.distances_from(source) {
                diameter = diameter.max(d.ok_or(GraphError::NotStronglyConnected)?);
            }
        }
        Ok(diameter)
    }
}

fn bfs(adjacency: &[Vec<NodeId>], source: NodeId) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or_default();
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Random strongly connected digraph: a Hamiltonian cycle over a seeded
/// permutation plus every other ordered pair with probability
/// `extra_edge_probability`.
pub fn generate_random_digraph(n: usize, extra_edge_probability: f64, seed: u64) -> Result<Digraph, GraphError> {
    if n <= 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if !(0.0..=1.0).contains(&extra_edge_probability) {
        return Err(GraphError::InvalidProbability(extra_edge_probability));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<NodeId> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut successor = vec![0; n];
    for w in 0..n {
        successor[perm[w]] = perm[(w + 1) % n];
    }
    let mut edges = Vec::new();
    for (sender, &next) in successor.iter().enumerate() {
        for receiver in 0..n {
            if receiver == sender {
                continue;
            }
            if next == receiver || rng.random_bool(extra_edge_probability) {
                edges.push((receiver, sender));
            }
        }
    }
    Digraph::from_edges(n, edges)
}

/// Per-node round-robin schedule over outgoing edges: `neighbor_at(j, p)` is the
/// out-neighbor `l` with `P_lj = p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeOrdering {
    by_order: Vec<Arc<[NodeId]>>,
}

impl EdgeOrdering {
    /// Out-neighbors of `j` listed in order `0, 1, ..., D_j^+ - 1`.
    pub fn schedule(&self, j: NodeId) -> Arc<[NodeId]> {
        Arc::clone(&self.by_order[j])
    }

    pub fn neighbor_at(&self, j: NodeId, order: usize) -> NodeId {
        self.by_order[j][order]
    }

    pub fn order_of(&self, j: NodeId, neighbor: NodeId) -> Option<usize> {
        self.by_order[j].iter().position(|&l| l == neighbor)
    }

    pub fn node_count(&self) -> usize {
        self.by_order.len()
    }
}

/// Canonical orders: out-neighbors by ascending id receive `0, 1, ...`.
pub fn assign_edge_orders(g: &Digraph) -> EdgeOrdering {
    EdgeOrdering {
        by_order: (0..g.node_count()).map(|j| Arc::from(g.out_neighbors(j))).collect(),
    }
}

/// Seeded random orders, for checking the protocol does not depend on the
/// canonical choice.
pub fn assign_edge_orders_shuffled(g: &Digraph, seed: u64) -> EdgeOrdering {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EdgeOrdering {
        by_order: (0..g.node_count())
            .map(|j| {
                let mut order = g.out_neighbors(j).to_vec();
                order.shuffle(&mut rng);
                Arc::from(order)
            })
            .collect(),
    }
}
