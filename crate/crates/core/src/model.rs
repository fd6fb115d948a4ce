//! The cluster-assignment network: GraphSage layers with mean aggregation
//! feeding a multilayer perceptron; a row softmax on the final logits yields
//! the soft assignment matrix.
//!
//! Each Sage layer computes
//! `h'_i = relu(W_self·h_i + W_nbr·mean_{j∈N(i)} h_j + bias)`, with a zero
//! neighbor mean for isolated nodes and node `i` excluded from its own mean.
//! Hidden MLP layers use relu; the final layer is affine only.

use crate::autodiff::{CsrMatrix, Tape, VarId};
use crate::graph::{adjacency_features, Graph};
use crate::losses::AssignmentMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature width {found} does not match the model input width {expected}")]
    FeatureWidthMismatch { expected: usize, found: usize },
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
    #[error("checkpoint parameter {index} has {len} values, expected {rows}x{cols}")]
    BadParamShape {
        index: usize,
        len: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint parameter {index} contains a non-finite value")]
    NonFiniteParam { index: usize },
}

/// Architecture of the assignment network. `c` is the output width and
/// doubles as the upper bound on the returned number of clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn_layers: usize,
    pub hidden_dim: usize,
    pub mlp_layers: usize,
    pub c: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults used for synthetic graphs: 3 Sage layers, width 64, 2-layer
    /// MLP.
    pub fn synthetic(c: usize, seed: u64) -> Self {
        Self {
            gnn_layers: 3,
            hidden_dim: 64,
            mlp_layers: 2,
            c,
            seed,
        }
    }

    /// Defaults used for real graphs: 4 Sage layers.
    pub fn real_world(c: usize, seed: u64) -> Self {
        Self {
            gnn_layers: 4,
            hidden_dim: 64,
            mlp_layers: 2,
            c,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.gnn_layers < 1 || self.hidden_dim < 1 || self.mlp_layers < 1 {
            return Err(ModelError::InvalidConfig(
                "layer counts and hidden width must be >= 1".into(),
            ));
        }
        if self.c < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "output cluster count must be >= 2, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Learnable parameters: Sage self/neighbor transforms plus biases, then
/// MLP layers. Parameter order is fixed and shared with the optimizer and
/// the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    feature_dim: usize,
    params: Vec<Array2<f64>>,
}

impl ModelState {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Flat parameter list; layout: per Sage layer `[w_self, w_nbr, bias]`,
    /// then per MLP layer `[w, bias]`. Biases are 1-row matrices.
    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }
}

/// Shapes of every parameter for a config and input width, in state order.
fn param_shapes(config: &ModelConfig, feature_dim: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mut width = feature_dim;
    for _ in 0..config.gnn_layers {
        shapes.push((width, config.hidden_dim)); // w_self
        shapes.push((width, config.hidden_dim)); // w_nbr
        shapes.push((1, config.hidden_dim)); // bias
        width = config.hidden_dim;
    }
    for layer in 0..config.mlp_layers {
        let out = if layer + 1 == config.mlp_layers {
            config.c
        } else {
            config.hidden_dim
        };
        shapes.push((width, out));
        shapes.push((1, out));
        width = out;
    }
    shapes
}

/// Initializes weights from a seeded uniform distribution scaled by
/// `1/√fan_in`; biases start at zero. Deterministic for a given seed.
pub fn init_model(config: &ModelConfig, feature_dim: usize) -> Result<ModelState, ModelError> {
    config.validate()?;
    if feature_dim < 1 {
        return Err(ModelError::InvalidConfig(
            "feature dimension must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(3 * config.gnn_layers + 2 * config.mlp_layers);
    let mut width = feature_dim;
    for _ in 0..config.gnn_layers {
        out.push(random_weight(&mut rng, width, config.hidden_dim));
        out.push(random_weight(&mut rng, width, config.hidden_dim));
        out.push(Array2::zeros((1, config.hidden_dim)));
        width = config.hidden_dim;
    }
    for layer in 0..config.mlp_layers {
        let cols = if layer + 1 == config.mlp_layers {
            config.c
        } else {
            config.hidden_dim
        };
        out.push(random_weight(&mut rng, width, cols));
        out.push(Array2::zeros((1, cols)));
        width = cols;
    }
    Ok(ModelState {
        config: config.clone(),
        feature_dim,
        params: out,
    })
}

fn random_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Row-normalized adjacency: row `i` holds `1/deg(i)` at each neighbor of
/// `i`, so multiplying by it averages neighbor features. Isolated nodes get
/// an all-zero row.
pub fn mean_aggregation(g: &Graph) -> CsrMatrix {
    let n = g.node_count();
    let deg = g.degrees();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * g.edge_count());
    for &(i, j) in g.edges() {
        entries.push((i, j, 1.0 / deg[i] as f64));
        entries.push((j, i, 1.0 / deg[j] as f64));
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    CsrMatrix::from_sorted_entries(n, n, entries)
}

/// The input feature matrix: the graph's own features, or adjacency columns
/// when it has none.
pub fn input_features(g: &Graph) -> Array2<f64> {
    match g.features() {
        Some(f) => f.clone(),
        None => adjacency_features(g),
    }
}

/// Builds the network forward pass on a tape. `params` must follow the
/// [`ModelState::params`] layout; the returned node is the softmax
/// assignment matrix.
pub fn forward_on_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[VarId],
    features: VarId,
    aggregation: Rc<CsrMatrix>,
) -> VarId {
    let mut idx = 0;
    let mut next = || {
        let p = params[idx];
        idx += 1;
        p
    };
    let mut h = features;
    for _ in 0..config.gnn_layers {
        let (w_self, w_nbr, bias) = (next(), next(), next());
        let own = tape.matmul(h, w_self);
        let transformed = tape.matmul(h, w_nbr);
        let aggregated = tape.csr_mul(aggregation.clone(), transformed);
        let combined = tape.add(own, aggregated);
        let biased = tape.add(combined, bias);
        h = tape.relu(biased);
    }
    for layer in 0..config.mlp_layers {
        let (w, bias) = (next(), next());
        let affine = tape.matmul(h, w);
        let biased = tape.add(affine, bias);
        h = if layer + 1 == config.mlp_layers {
            biased
        } else {
            tape.relu(biased)
        };
    }
    tape.row_softmax(h)
}

/// Runs the network on a graph and returns the soft assignment.
pub fn forward(g: &Graph, state: &ModelState) -> Result<AssignmentMatrix, ModelError> {
    let features = input_features(g);
    if features.ncols() != state.feature_dim {
        return Err(ModelError::FeatureWidthMismatch {
            expected: state.feature_dim,
            found: features.ncols(),
        });
    }
    let mut tape = Tape::new();
    let param_ids: Vec<VarId> = state
        .params
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let x = tape.constant(features);
    let agg = Rc::new(mean_aggregation(g));
    let s = forward_on_tape(&mut tape, &state.config, &param_ids, x, agg);
    Ok(AssignmentMatrix::from_softmax(tape.value(s).clone()))
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    config: ModelConfig,
    feature_dim: usize,
    params: Vec<ParamFile>,
}

/// Saves config and flat weight arrays as JSON. The float encoding
/// round-trips exactly.
pub fn save_model(state: &ModelState, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = CheckpointFile {
        config: state.config.clone(),
        feature_dim: state.feature_dim,
        params: state
            .params
            .iter()
            .map(|p| ParamFile {
                rows: p.nrows(),
                cols: p.ncols(),
                data: p.iter().copied().collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).expect("checkpoint serialization");
    std::fs::write(path, text).map_err(|source| ModelError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint saved by [`save_model`], validating shapes and
/// finiteness.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|source| ModelError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    file.config.validate()?;
    let shapes = param_shapes(&file.config, file.feature_dim);
    if shapes.len() != file.params.len() {
        return Err(ModelError::InvalidConfig(format!(
            "checkpoint holds {} parameters, config implies {}",
            file.params.len(),
            shapes.len()
        )));
    }
    let mut params = Vec::with_capacity(shapes.len());
    for (index, (p, (rows, cols))) in file.params.into_iter().zip(shapes).enumerate() {
        if p.rows != rows || p.cols != cols || p.data.len() != rows * cols {
            return Err(ModelError::BadParamShape {
                index,
                len: p.data.len(),
                rows,
                cols,
            });
        }
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteParam { index });
        }
        params.push(
            Array2::from_shape_vec((rows, cols), p.data)
                .expect("shape validated above"),
        );
    }
    Ok(ModelState {
        config: file.config,
        feature_dim: file.feature_dim,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn ring_graph(n: usize) -> Graph {
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, edges, None, None).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let config = ModelConfig::synthetic(4, 11);
        let a = init_model(&config, 10).unwrap();
        let b = init_model(&config, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_seed_changes_weights() {
        let a = init_model(&ModelConfig::synthetic(4, 1), 10).unwrap();
        let b = init_model(&ModelConfig::synthetic(4, 2), 10).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn parameter_shapes_match_config() {
        let config = ModelConfig {
            gnn_layers: 3,
            hidden_dim: 64,
            mlp_layers: 2,
            c: 10,
            seed: 0,
        };
        let state = init_model(&config, 100).unwrap();
        let dims: Vec<(usize, usize)> = state.params().iter().map(|p| p.dim()).collect();
        assert_eq!(
            dims,
            vec![
                (100, 64),
                (100, 64),
                (1, 64),
                (64, 64),
                (64, 64),
                (1, 64),
                (64, 64),
                (64, 64),
                (1, 64),
                (64, 64),
                (1, 64),
                (64, 10),
                (1, 10),
            ]
        );
    }

    #[test]
    fn forward_rows_are_probabilities() {
        let g = ring_graph(8);
        let state = init_model(&ModelConfig::synthetic(5, 3), 8).unwrap();
        let s = forward(&g, &state).unwrap();
        for row in s.matrix().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_weights_give_uniform_assignment() {
        let g = ring_graph(6);
        let mut state = init_model(&ModelConfig::synthetic(4, 3), 6).unwrap();
        for p in state.params_mut() {
            p.fill(0.0);
        }
        let s = forward(&g, &state).unwrap();
        for &v in s.matrix().iter() {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn forward_is_node_permutation_equivariant() {
        use rand::{Rng, SeedableRng};
        let n = 10;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let edges = vec![
            (0, 1),
            (0, 2),
            (1, 2),
            (3, 4),
            (4, 5),
            (5, 3),
            (6, 7),
            (8, 9),
            (2, 3),
            (7, 8),
        ];
        let features = Array2::from_shape_fn((n, 6), |_| rng.gen_range(-1.0..1.0));
        let g = Graph::new(n, edges.clone(), Some(features.clone()), None).unwrap();

        let perm: Vec<usize> = vec![3, 1, 4, 0, 9, 6, 7, 2, 8, 5];
        let permuted_edges: Vec<(usize, usize)> =
            edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let mut permuted_features = Array2::zeros((n, 6));
        for i in 0..n {
            permuted_features
                .row_mut(perm[i])
                .assign(&features.row(i));
        }
        let pg = Graph::new(n, permuted_edges, Some(permuted_features), None).unwrap();

        let state = init_model(&ModelConfig::synthetic(3, 7), 6).unwrap();
        let s = forward(&g, &state).unwrap();
        let ps = forward(&pg, &state).unwrap();
        for i in 0..n {
            for k in 0..3 {
                let diff = (s.matrix()[[i, k]] - ps.matrix()[[perm[i], k]]).abs();
                assert!(diff < 1e-10, "node {i} cluster {k}: diff {diff}");
            }
        }
    }

    #[test]
    fn forward_rejects_feature_width_mismatch() {
        let g = ring_graph(5);
        let state = init_model(&ModelConfig::synthetic(3, 0), 7).unwrap();
        assert!(matches!(
            forward(&g, &state),
            Err(ModelError::FeatureWidthMismatch {
                expected: 7,
                found: 5
            })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let state = init_model(&ModelConfig::synthetic(6, 21), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&state, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(state.config(), loaded.config());
        assert_eq!(state.feature_dim(), loaded.feature_dim());
        for (a, b) in state.params().iter().zip(loaded.params()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn load_rejects_wrong_shapes() {
        let state = init_model(&ModelConfig::synthetic(3, 2), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&state, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let corrupted = text.replacen("\"rows\":4", "\"rows\":5", 1);
        std::fs::write(&path, corrupted).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn config_validation() {
        let mut config = ModelConfig::synthetic(1, 0);
        assert!(config.validate().is_err());
        config.c = 2;
        assert!(config.validate().is_ok());
        config.gnn_layers = 0;
        assert!(config.validate().is_err());
    }
}
