//! Experiment configuration: defaults, a TOML key-value file, and flag
//! overrides, resolved in that order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use qkmeans_core::kmeans::StopRule;
use qkmeans_core::scenario::{
    derive_seed, DiameterBound, ScenarioConfig, CENTROID_STREAM, GRAPH_STREAM, OBSERVATION_STREAM,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// `"auto"` or a fixed positive bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DBound {
    Auto,
    Fixed(usize),
}

impl FromStr for DBound {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DBound::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected \"auto\" or a positive integer, got {s:?}")),
            Ok(v) => Ok(DBound::Fixed(v)),
        }
    }
}

impl fmt::Display for DBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DBound::Auto => f.write_str("auto"),
            DBound::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for DBound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DBound::Auto => s.serialize_str("auto"),
            DBound::Fixed(v) => s.serialize_u64(*v as u64),
        }
    }
}

impl<'de> Deserialize<'de> for DBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Word(String),
            Number(u64),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) => w.parse().map_err(serde::de::Error::custom),
            Repr::Number(v) => v.to_string().parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Inclusive integer box, one `[lo, hi]` pair per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(pub Vec<[i64; 2]>);

impl Region {
    pub fn square(dim: usize, lo: i64, hi: i64) -> Self {
        Region(vec![[lo, hi]; dim])
    }

    pub fn pairs(&self) -> Vec<(i64, i64)> {
        self.0.iter().map(|&[lo, hi]| (lo, hi)).collect()
    }
}

impl FromStr for Region {
    type Err = String;

    /// `lo:hi,lo:hi,...`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|part| {
                let (lo, hi) = part.split_once(':').ok_or_else(|| format!("expected lo:hi, got {part:?}"))?;
                let lo = lo.trim().parse().map_err(|_| format!("bad bound {lo:?}"))?;
                let hi = hi.trim().parse().map_err(|_| format!("bad bound {hi:?}"))?;
                Ok([lo, hi])
            })
            .collect::<Result<_, _>>()
            .map(Region)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StopRuleName {
    StoredAndHeld,
    StoredOnly,
}

impl From<StopRuleName> for StopRule {
    fn from(r: StopRuleName) -> Self {
        match r {
            StopRuleName::StoredAndHeld => StopRule::StoredAndHeld,
            StopRuleName::StoredOnly => StopRule::StoredOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeOrder {
    /// Ascending out-neighbor id.
    Canonical,
    /// Seeded shuffle per node, using the graph seed.
    Shuffled,
}

/// A fully resolved experiment; embedded verbatim in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    pub region: Region,
    pub edge_probability: f64,
    pub seed: u64,
    pub graph_seed: u64,
    pub observation_seed: u64,
    pub centroid_seed: u64,
    pub d_bound: DBound,
    pub max_rounds: usize,
    pub scale: u64,
    pub stop_rule: StopRuleName,
    pub edge_order: EdgeOrder,
    pub check_conservation: bool,
    /// Input files, when data came from disk rather than the seeds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub graph_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub observations_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub centroids_file: Option<String>,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Scenario for fully generated inputs.
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n: self.n,
            k: self.k,
            dim: self.dim,
            region: self.region.pairs(),
            edge_probability: self.edge_probability,
            graph_seed: self.graph_seed,
            observation_seed: self.observation_seed,
            centroid_seed: self.centroid_seed,
            d_bound: match self.d_bound {
                DBound::Auto => DiameterBound::Auto,
                DBound::Fixed(v) => DiameterBound::Fixed(v),
            },
            max_rounds: self.max_rounds,
            scale: self.scale,
        }
    }

    /// Same experiment with a different master seed; the derived seeds follow.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.graph_seed = derive_seed(seed, GRAPH_STREAM);
        c.observation_seed = derive_seed(seed, OBSERVATION_STREAM);
        c.centroid_seed = derive_seed(seed, CENTROID_STREAM);
        c
    }
}

/// Every tunable, all optional. Used both as the config-file schema and as
/// command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Number of nodes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Observation dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Integer box, e.g. `0:50,0:50`.
    #[arg(long)]
    pub region: Option<Region>,
    /// Probability of each non-backbone edge.
    #[arg(long = "p", alias = "edge-probability")]
    pub edge_probability: Option<f64>,
    /// Master seed; graph, observation and centroid seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
    #[arg(long)]
    pub observation_seed: Option<u64>,
    #[arg(long)]
    pub centroid_seed: Option<u64>,
    /// Diameter bound known to every node: `auto` or a positive integer.
    #[arg(long)]
    pub d_bound: Option<DBound>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Quantization scale for real-valued inputs.
    #[arg(long)]
    pub scale: Option<u64>,
    #[arg(long, value_enum)]
    pub stop_rule: Option<StopRuleName>,
    #[arg(long, value_enum)]
    pub edge_order: Option<EdgeOrder>,
    /// Check mass conservation at every step (slower).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub check_conservation: Option<bool>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
    }

    /// Fields set here win over `base`.
    pub fn over(self, base: Overrides) -> Overrides {
        Overrides {
            n: self.n.or(base.n),
            k: self.k.or(base.k),
            dim: self.dim.or(base.dim),
            region: self.region.or(base.region),
            edge_probability: self.edge_probability.or(base.edge_probability),
            seed: self.seed.or(base.seed),
            graph_seed: self.graph_seed.or(base.graph_seed),
            observation_seed: self.observation_seed.or(base.observation_seed),
            centroid_seed: self.centroid_seed.or(base.centroid_seed),
            d_bound: self.d_bound.or(base.d_bound),
            max_rounds: self.max_rounds.or(base.max_rounds),
            scale: self.scale.or(base.scale),
            stop_rule: self.stop_rule.or(base.stop_rule),
            edge_order: self.edge_order.or(base.edge_order),
            check_conservation: self.check_conservation.or(base.check_conservation),
        }
    }

    /// Fills defaults (n=100, k=3, box [0,50]^d, p=0.05, seed 1, auto
    /// diameter bound, 100 rounds) and validates.
    pub fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let dim = self.dim.or(self.region.as_ref().map(|r| r.0.len())).unwrap_or(2);
        let region = self.region.unwrap_or_else(|| Region::square(dim, 0, 50));
        let seed = self.seed.unwrap_or(1);
        let cfg = ExperimentConfig {
            n: self.n.unwrap_or(100),
            k: self.k.unwrap_or(3),
            dim,
            region,
            edge_probability: self.edge_probability.unwrap_or(0.05),
            seed,
            graph_seed: self.graph_seed.unwrap_or_else(|| derive_seed(seed, GRAPH_STREAM)),
            observation_seed: self.observation_seed.unwrap_or_else(|| derive_seed(seed, OBSERVATION_STREAM)),
            centroid_seed: self.centroid_seed.unwrap_or_else(|| derive_seed(seed, CENTROID_STREAM)),
            d_bound: self.d_bound.unwrap_or(DBound::Auto),
            max_rounds: self.max_rounds.unwrap_or(100),
            scale: self.scale.unwrap_or(1),
            stop_rule: self.stop_rule.unwrap_or(StopRuleName::StoredAndHeld),
            edge_order: self.edge_order.unwrap_or(EdgeOrder::Canonical),
            check_conservation: self.check_conservation.unwrap_or(false),
            graph_file: None,
            observations_file: None,
            centroids_file: None,
        };
        validate(&cfg)?;
        Ok(cfg)
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let bad = |m: String| Err(ConfigError::Invalid(m));
    if cfg.dim == 0 {
        return bad("dim must be positive".into());
    }
    if cfg.region.0.len() != cfg.dim {
        return bad(format!("region has {} dimensions but dim = {}", cfg.region.0.len(), cfg.dim));
    }
    if let Some([lo, hi]) = cfg.region.0.iter().find(|[lo, hi]| lo > hi) {
        return bad(format!("empty region interval {lo}:{hi}"));
    }
    if cfg.k == 0 || cfg.k >= cfg.n {
        return bad(format!("k = {} must satisfy 1 <= k < n = {}", cfg.k, cfg.n));
    }
    if !(0.0..=1.0).contains(&cfg.edge_probability) {
        return bad(format!("edge probability {} outside [0, 1]", cfg.edge_probability));
    }
    if cfg.max_rounds == 0 {
        return bad("max_rounds must be positive".into());
    }
    if cfg.scale == 0 {
        return bad("scale must be positive".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_derived_seeds() {
        let cfg = Overrides::default().resolve().unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.dim), (100, 3, 2));
        assert_eq!(cfg.region, Region::square(2, 0, 50));
        assert_eq!(cfg.graph_seed, derive_seed(1, GRAPH_STREAM));
        assert_eq!(cfg, cfg.with_seed(1));
    }

    #[test]
    fn flags_override_file() {
        let file: Overrides = toml::from_str("n = 20\nk = 2\nd_bound = \"auto\"\nseed = 9\nregion = [[0, 5], [1, 6]]").unwrap();
        let flags = Overrides { k: Some(4), d_bound: Some(DBound::Fixed(7)), ..Default::default() };
        let cfg = flags.over(file).resolve().unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.seed), (20, 4, 9));
        assert_eq!(cfg.d_bound, DBound::Fixed(7));
        assert_eq!(cfg.region.pairs(), vec![(0, 5), (1, 6)]);
    }

    #[test]
    fn file_rejects_unknown_keys() {
        assert!(toml::from_str::<Overrides>("clusters = 3").is_err());
        assert!(toml::from_str::<Overrides>("d_bound = 0").is_err());
        let o: Overrides = toml::from_str("d_bound = 4").unwrap();
        assert_eq!(o.d_bound, Some(DBound::Fixed(4)));
    }

    #[test]
    fn validation() {
        let resolve = |o: Overrides| o.resolve();
        assert!(resolve(Overrides { n: Some(3), k: Some(3), ..Default::default() }).is_err());
        assert!(resolve(Overrides { dim: Some(3), region: Some("0:1".parse().unwrap()), ..Default::default() }).is_err());
        assert!(resolve(Overrides { edge_probability: Some(1.5), ..Default::default() }).is_err());
        assert!(resolve(Overrides { region: Some("5:1,0:1".parse().unwrap()), ..Default::default() }).is_err());
    }

    #[test]
    fn region_and_bound_parsing() {
        assert_eq!("0:50, -3:4".parse::<Region>().unwrap().pairs(), vec![(0, 50), (-3, 4)]);
        assert!("0-50".parse::<Region>().is_err());
        assert_eq!("AUTO".parse::<DBound>().unwrap(), DBound::Auto);
        assert!("0".parse::<DBound>().is_err());
        assert_eq!(serde_json::to_string(&DBound::Fixed(3)).unwrap(), "3");
    }
}
