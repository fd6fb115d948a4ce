//! Community detection on graphs by gradient-based optimization of a soft
//! cluster-assignment matrix, with a differentiable penalty that enforces a
//! lower bound (or, together with the output width, an exact count or
//! range) on the number of returned communities.
//!
//! The crate provides:
//!
//! - [`graph`]: graph representation, statistics, stochastic block model
//!   generation and graph file I/O;
//! - [`autodiff`]: a small reverse-mode engine over dense matrices with a
//!   finite-difference checker;
//! - [`losses`]: soft modularity, the bound penalties, the balance
//!   regularizer and the combined loss;
//! - [`model`]: the GraphSage + MLP assignment network;
//! - [`trainer`]: full-batch Adam training with penalty-weight escalation;
//! - [`evaluation`]: hard assignment, cluster counting and the ARI;
//! - [`experiment`]: parallel sweeps with CSV results;
//! - [`gradcheck`]: the gradient verification suite.
//!
//! # Example
//!
//! ```
//! use graphclust_core::graph::{sbm_generate, SbmSpec};
//! use graphclust_core::losses::{Bounds, LossWeights};
//! use graphclust_core::model::ModelConfig;
//! use graphclust_core::trainer::{train, TrainConfig};
//! use graphclust_core::evaluation::{count_clusters, hard_assign};
//!
//! let g = sbm_generate(&SbmSpec {
//!     cluster_sizes: vec![10, 10],
//!     p_in: 0.9,
//!     p_out: 0.05,
//!     seed: 1,
//! })
//! .unwrap();
//!
//! let model = ModelConfig { gnn_layers: 2, hidden_dim: 16, mlp_layers: 2, c: 2, seed: 1 };
//! let config = TrainConfig {
//!     epochs: 150,
//!     learning_rate: 1e-2,
//!     weights: LossWeights { mu: 1.0, lambda: 1.0 },
//!     bounds: Bounds::new(2, 2).unwrap(),
//!     seed: 1,
//!     mu_escalation: Some(1000.0),
//! };
//! let result = train(&g, &model, &config).unwrap();
//! assert_eq!(count_clusters(&hard_assign(&result.assignment)), 2);
//! ```

pub mod autodiff;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod presets;
pub mod trainer;

pub use evaluation::{EvalReport, Partition};
pub use graph::{Graph, GraphStats, SbmSpec};
pub use losses::{AssignmentMatrix, Bounds, LossWeights};
pub use model::{ModelConfig, ModelState};
pub use trainer::{TrainConfig, TrainResult};
