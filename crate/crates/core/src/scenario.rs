//! Seeded random experiment instances: graph, observations, initial centroids.

use alloc::vec::Vec;

use num_bigint::BigInt;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exactmath::FractionVector;
use crate::graph::{generate_random_digraph, Digraph, GraphError};
use crate::kmeans::CentroidSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    InvalidClusterCount { k: usize, n: usize },
    #[error("region has {found} dimensions, expected {expected}")]
    RegionDimension { expected: usize, found: usize },
    #[error("empty region interval [{lo}, {hi}]")]
    EmptyInterval { lo: i64, hi: i64 },
    #[error("quantization scale must be positive")]
    ZeroScale,
    #[error("diameter bound {bound} is below the diameter {diameter}")]
    DiameterBoundTooSmall { bound: usize, diameter: usize },
}

/// Independent seed for `stream` derived from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Stream numbers used by [`ScenarioConfig::planar`].
pub const GRAPH_STREAM: u64 = 1;
pub const OBSERVATION_STREAM: u64 = 2;
pub const CENTROID_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiameterBound {
    /// Use the exact diameter of the generated graph.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    /// Inclusive integer interval per dimension.
    pub region: Vec<(i64, i64)>,
    pub edge_probability: f64,
    pub graph_seed: u64,
    pub observation_seed: u64,
    pub centroid_seed: u64,
    pub d_bound: DiameterBound,
    pub max_rounds: usize,
    /// Observations and centroids are drawn on a grid of `1 / scale`, stored
    /// as integers multiplied by `scale`.
    pub scale: u64,
}

impl ScenarioConfig {
    /// `n` nodes, `k` clusters in the box `[0, 50]^2`, with graph,
    /// observation and centroid seeds derived from `seed`.
    pub fn planar(n: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            k,
            dim: 2,
            region: alloc::vec![(0, 50); 2],
            edge_probability: 0.05,
            graph_seed: derive_seed(seed, GRAPH_STREAM),
            observation_seed: derive_seed(seed, OBSERVATION_STREAM),
            centroid_seed: derive_seed(seed, CENTROID_STREAM),
            d_bound: DiameterBound::Auto,
            max_rounds: 100,
            scale: 1,
        }
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        if self.k == 0 || self.k >= self.n {
            return Err(ScenarioError::InvalidClusterCount { k: self.k, n: self.n });
        }
        if self.region.len() != self.dim {
            return Err(ScenarioError::RegionDimension { expected: self.dim, found: self.region.len() });
        }
        if let Some(&(lo, hi)) = self.region.iter().find(|(lo, hi)| lo > hi) {
            return Err(ScenarioError::EmptyInterval { lo, hi });
        }
        if self.scale == 0 {
            return Err(ScenarioError::ZeroScale);
        }
        let graph = generate_random_digraph(self.n, self.edge_probability, self.graph_seed)?;
        let diameter = graph.diameter()?;
        let d_bound = match self.d_bound {
            DiameterBound::Auto => diameter,
            DiameterBound::Fixed(bound) if bound < diameter => {
                return Err(ScenarioError::DiameterBoundTooSmall { bound, diameter })
            }
            DiameterBound::Fixed(bound) => bound,
        };
        let observations = draw_points(&self.region, self.scale, self.n, self.observation_seed)?;
        let initial = draw_centroids(&self.region, self.scale, self.k, self.centroid_seed)?;
        Ok(Scenario { graph, observations, initial, d_bound, diameter })
    }
}

/// `count` integer points drawn uniformly from the box, scaled by `scale`.
pub fn draw_points(region: &[(i64, i64)], scale: u64, count: usize, seed: u64) -> Result<Vec<Vec<BigInt>>, ScenarioError> {
    if scale == 0 {
        return Err(ScenarioError::ZeroScale);
    }
    if let Some(&(lo, hi)) = region.iter().find(|(lo, hi)| lo > hi) {
        return Err(ScenarioError::EmptyInterval { lo, hi });
    }
    let scale = i128::from(scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            region
                .iter()
                .map(|&(lo, hi)| BigInt::from(rng.random_range(i128::from(lo) * scale..=i128::from(hi) * scale)))
                .collect()
        })
        .collect())
}

/// `k` initial centroids drawn like [`draw_points`].
pub fn draw_centroids(region: &[(i64, i64)], scale: u64, k: usize, seed: u64) -> Result<CentroidSet, ScenarioError> {
    let points = draw_points(region, scale, k, seed)?;
    Ok(CentroidSet::initial(points.iter().map(|p| FractionVector::from_integers(p)).collect()))
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: Digraph,
    pub observations: Vec<Vec<BigInt>>,
    pub initial: CentroidSet,
    pub d_bound: usize,
    pub diameter: usize,
}
