//! Graph representation, statistics, stochastic block model generation and
//! graph file I/O.
//!
//! Graphs are simple and undirected: no self-loops, no duplicate edges, no
//! weights. `m` always counts undirected edges; the adjacency matrix is
//! symmetric with a zero diagonal and is materialized on demand.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// Errors arising from graph construction, generation, statistics or I/O.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {index}: endpoint {endpoint} is out of range for n={n}")]
    EndpointOutOfRange {
        index: usize,
        endpoint: usize,
        n: usize,
    },
    #[error("edge {index}: self-loop ({node}, {node}) is not allowed")]
    SelfLoop { index: usize, node: usize },
    #[error("edge {index}: duplicate of ({i}, {j})")]
    DuplicateEdge { index: usize, i: usize, j: usize },
    #[error("features must have one row per node: expected {n} rows, found {rows}")]
    FeatureRowMismatch { n: usize, rows: usize },
    #[error("feature row {row} has width {found}, expected {expected}")]
    RaggedFeatures {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("labels must have one entry per node: expected {n}, found {len}")]
    LabelLenMismatch { n: usize, len: usize },
    #[error("invalid SBM spec: {0}")]
    InvalidSbmSpec(String),
    #[error("graph statistics require at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("modularity is undefined for a graph with no edges")]
    NoEdges,
    #[error("labels must cover all {n} nodes, got {len}")]
    PartitionLenMismatch { n: usize, len: usize },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// An undirected simple graph with optional node features and ground-truth
/// community labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Option<Array2<f64>>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, validating every structural invariant.
    ///
    /// Edges are stored as given; duplicates are rejected under either
    /// ordering of the endpoints.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: Option<Array2<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for (index, &(i, j)) in edges.iter().enumerate() {
            if i >= n {
                return Err(GraphError::EndpointOutOfRange {
                    index,
                    endpoint: i,
                    n,
                });
            }
            if j >= n {
                return Err(GraphError::EndpointOutOfRange {
                    index,
                    endpoint: j,
                    n,
                });
            }
            if i == j {
                return Err(GraphError::SelfLoop { index, node: i });
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge { index, i, j });
            }
        }
        if let Some(f) = &features {
            if f.nrows() != n {
                return Err(GraphError::FeatureRowMismatch { n, rows: f.nrows() });
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::LabelLenMismatch { n, len: l.len() });
            }
        }
        Ok(Self {
            n,
            edges,
            features,
            labels,
        })
    }

    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of undirected edges (`m`).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edge list as stored.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Node features, if any.
    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    /// Ground-truth community labels, if any.
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Dense symmetric 0/1 adjacency matrix with zero diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Replaces the feature matrix (used by loaders and tests).
    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self, GraphError> {
        if features.nrows() != self.n {
            return Err(GraphError::FeatureRowMismatch {
                n: self.n,
                rows: features.nrows(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }
}

/// Parameters of a stochastic block model draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    /// Planted community sizes; their sum is the node count.
    pub cluster_sizes: Vec<usize>,
    /// Edge probability inside a community.
    pub p_in: f64,
    /// Edge probability between communities.
    pub p_out: f64,
    /// RNG seed; the draw is fully determined by the spec.
    pub seed: u64,
}

impl SbmSpec {
    /// Checks the spec invariants, reporting the first violated one.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.cluster_sizes.len() < 2 {
            return Err(GraphError::InvalidSbmSpec(format!(
                "at least 2 clusters required, got {}",
                self.cluster_sizes.len()
            )));
        }
        if let Some(pos) = self.cluster_sizes.iter().position(|&s| s == 0) {
            return Err(GraphError::InvalidSbmSpec(format!(
                "cluster size at index {pos} must be >= 1"
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraphError::InvalidSbmSpec(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.p_out > self.p_in {
            return Err(GraphError::InvalidSbmSpec(format!(
                "p_out ({}) must not exceed p_in ({})",
                self.p_out, self.p_in
            )));
        }
        Ok(())
    }

    /// Total node count.
    pub fn node_count(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    /// Expected number of undirected edges under the spec.
    pub fn expected_edges(&self) -> f64 {
        let n = self.node_count() as f64;
        let intra: f64 = self
            .cluster_sizes
            .iter()
            .map(|&s| s as f64 * (s as f64 - 1.0) / 2.0)
            .sum();
        let total = n * (n - 1.0) / 2.0;
        intra * self.p_in + (total - intra) * self.p_out
    }
}

/// Draws a graph from the stochastic block model.
///
/// Unordered pairs are visited in `(i, j)`, `i < j` row-major order and each
/// receives one uniform draw from a ChaCha8 generator seeded with
/// `spec.seed`, so the edge list is reproducible bit-for-bit. Node labels are
/// set to the planted block ids; features are left empty.
pub fn sbm_generate(spec: &SbmSpec) -> Result<Graph, GraphError> {
    spec.validate()?;
    let n = spec.node_count();
    let mut block = Vec::with_capacity(n);
    for (b, &size) in spec.cluster_sizes.iter().enumerate() {
        block.extend(std::iter::repeat(b).take(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block[i] == block[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges, None, Some(block))
}

/// Summary statistics of a graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    /// `2m / (n (n - 1))`, the fraction of possible edges present.
    pub density: f64,
    /// `2m / n`.
    pub average_degree: f64,
    /// Modularity of the ground-truth labels, when labels exist and `m >= 1`.
    pub ground_truth_modularity: Option<f64>,
}

/// Computes density, average degree and, when labels are present, the
/// ground-truth modularity.
pub fn graph_stats(g: &Graph) -> Result<GraphStats, GraphError> {
    let n = g.node_count();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let m = g.edge_count() as f64;
    let nf = n as f64;
    let ground_truth_modularity = match g.labels() {
        Some(labels) if g.edge_count() >= 1 => Some(hard_modularity(g, labels)?),
        _ => None,
    };
    Ok(GraphStats {
        density: 2.0 * m / (nf * (nf - 1.0)),
        average_degree: 2.0 * m / nf,
        ground_truth_modularity,
    })
}

/// Modularity of a hard partition.
///
/// Equals `(1/2m) Σ_ij [A_ij − d_i d_j / 2m] δ(k_i, k_j)` over ordered node
/// pairs including `i = j`, evaluated per cluster as
/// `Σ_k [ e_k / m − (deg_k / 2m)² ]` where `e_k` counts intra-cluster edges
/// and `deg_k` sums member degrees.
pub fn hard_modularity(g: &Graph, labels: &[usize]) -> Result<f64, GraphError> {
    let m = g.edge_count();
    if m == 0 {
        return Err(GraphError::NoEdges);
    }
    if labels.len() != g.node_count() {
        return Err(GraphError::PartitionLenMismatch {
            n: g.node_count(),
            len: labels.len(),
        });
    }
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut intra = vec![0usize; k];
    let mut deg_sum = vec![0usize; k];
    for &(i, j) in g.edges() {
        deg_sum[labels[i]] += 1;
        deg_sum[labels[j]] += 1;
        if labels[i] == labels[j] {
            intra[labels[i]] += 1;
        }
    }
    let m = m as f64;
    let two_m = 2.0 * m;
    let q = (0..k)
        .map(|c| intra[c] as f64 / m - (deg_sum[c] as f64 / two_m).powi(2))
        .sum();
    Ok(q)
}

/// Feature matrix fallback for graphs without features: node `i`'s feature
/// vector is the `i`-th column of the adjacency matrix.
pub fn adjacency_features(g: &Graph) -> Array2<f64> {
    // A is symmetric, so columns equal rows.
    g.adjacency()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

/// Loads a graph from its JSON file format, validating all invariants.
///
/// Unknown fields (including any weight-like field) are rejected.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: GraphFile = serde_json::from_str(&text).map_err(|source| GraphError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let features = match file.features {
        None => None,
        Some(rows) => {
            if rows.len() != file.n {
                return Err(GraphError::FeatureRowMismatch {
                    n: file.n,
                    rows: rows.len(),
                });
            }
            let width = rows.first().map_or(0, Vec::len);
            for (row, r) in rows.iter().enumerate() {
                if r.len() != width {
                    return Err(GraphError::RaggedFeatures {
                        row,
                        found: r.len(),
                        expected: width,
                    });
                }
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Some(
                Array2::from_shape_vec((file.n, width), flat)
                    .expect("row-major reshape of validated feature rows"),
            )
        }
    };
    Graph::new(
        file.n,
        file.edges.into_iter().map(|[i, j]| (i, j)).collect(),
        features,
        file.labels,
    )
}

/// Saves a graph to the JSON file format accepted by [`load_graph`].
pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    let file = GraphFile {
        n: g.node_count(),
        edges: g.edges().iter().map(|&(i, j)| [i, j]).collect(),
        features: g
            .features()
            .map(|f| f.rows().into_iter().map(|r| r.to_vec()).collect()),
        labels: g.labels().map(<[usize]>::to_vec),
    };
    let text = serde_json::to_string(&file).expect("graph file serialization");
    std::fs::write(path, text).map_err(|source| GraphError::Write {
        path: path.display().to_string(),
        source,
    })
}
