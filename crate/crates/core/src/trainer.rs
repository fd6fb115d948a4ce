//! Full-batch gradient training of the assignment network under the
//! combined loss, with Adam and an automated single-retry escalation of the
//! penalty weight when the requested bound is still violated after a
//! complete run.

use crate::evaluation::{count_clusters, hard_assign};
use crate::graph::Graph;
use crate::losses::{
    total_loss_node, Bounds, GraphOperators, LossError, LossWeights,
};
use crate::model::{
    forward_on_tape, init_model, input_features, mean_aggregation, ModelConfig, ModelError,
    ModelState,
};
use crate::autodiff::Tape;
use crate::losses::AssignmentMatrix;
use ndarray::Array2;
use std::path::Path;
use std::rc::Rc;
use thiserror::Error;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Seed salt for the fresh initialization of an escalated rerun.
const ESCALATION_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("bounds upper {bounds_c} must equal the model output width {model_c}")]
    BoundsModelMismatch { bounds_c: usize, model_c: usize },
    #[error("lower bound {l} is infeasible for a graph with {n} nodes")]
    InfeasibleLowerBound { l: usize, n: usize },
    #[error("non-finite loss at epoch {epoch}; run aborted")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradient at epoch {epoch}; run aborted")]
    NonFiniteGradient { epoch: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training hyperparameters for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub bounds: Bounds,
    pub seed: u64,
    /// Replacement penalty weight for one rerun when the hard cluster count
    /// violates the bounds after a full run.
    pub mu_escalation: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        self.bounds.validate()?;
        Ok(())
    }
}

/// Per-epoch record of the combined loss and its components. Penalty and
/// balance are reported unweighted even when their weights are zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub neg_modularity: f64,
    pub constraint: f64,
    pub balance: f64,
}

/// Outcome of one training run (two concatenated runs when escalated).
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub state: ModelState,
    pub assignment: AssignmentMatrix,
    pub history: Vec<LossRecord>,
    pub escalated: bool,
}

impl TrainResult {
    /// Writes the per-epoch loss history as CSV
    /// (`epoch,total,neg_modularity,constraint,balance`).
    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_path(path)?;
        for record in &self.history {
            writer.serialize(record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Adam first/second moment accumulators, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u32,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }
}

/// One Adam update with bias correction: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
/// Rejects non-finite gradients before touching the parameters.
pub fn adam_step(
    params: &mut [Array2<f64>],
    gradients: &[Array2<f64>],
    moments: &mut AdamState,
    learning_rate: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), gradients.len(), "parameter/gradient mismatch");
    for g in gradients {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { epoch: 0 });
        }
    }
    moments.t += 1;
    let t = moments.t;
    let bias1 = 1.0 - BETA1.powi(t as i32);
    let bias2 = 1.0 - BETA2.powi(t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(gradients)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        m.zip_mut_with(g, |m, &g| *m = BETA1 * *m + (1.0 - BETA1) * g);
        v.zip_mut_with(g, |v, &g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
        ndarray::Zip::from(p)
            .and(&*m)
            .and(&*v)
            .for_each(|p, &m, &v| {
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
            });
    }
    Ok(())
}

struct RunArtifacts {
    state: ModelState,
    assignment: AssignmentMatrix,
    history: Vec<LossRecord>,
}

fn run_once(
    g: &Graph,
    ops: &GraphOperators,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    weights: LossWeights,
    init_seed: u64,
    epoch_offset: usize,
) -> Result<RunArtifacts, TrainError> {
    let features = input_features(g);
    let mut config = model_config.clone();
    config.seed = init_seed;
    let mut state = init_model(&config, features.ncols())?;
    let agg = Rc::new(mean_aggregation(g));
    let mut moments = AdamState::new(state.params());
    let mut history = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let mut tape = Tape::new();
        let param_ids: Vec<_> = state
            .params()
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect();
        let x = tape.constant(features.clone());
        let s = forward_on_tape(&mut tape, &config, &param_ids, x, agg.clone());
        let nodes = total_loss_node(&mut tape, ops, s, &train_config.bounds, &weights);

        let record = LossRecord {
            epoch: epoch_offset + epoch,
            total: tape.scalar_value(nodes.total),
            neg_modularity: tape.scalar_value(nodes.neg_modularity),
            constraint: tape.scalar_value(nodes.penalty),
            balance: tape.scalar_value(nodes.balance),
        };
        if !record.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: epoch_offset + epoch,
            });
        }
        history.push(record);

        tape.backward(nodes.total).expect("loss root is scalar");
        let grads: Vec<Array2<f64>> = param_ids.iter().map(|&id| tape.grad(id).clone()).collect();
        adam_step(
            state.params_mut(),
            &grads,
            &mut moments,
            train_config.learning_rate,
        )
        .map_err(|e| match e {
            TrainError::NonFiniteGradient { .. } => TrainError::NonFiniteGradient {
                epoch: epoch_offset + epoch,
            },
            other => other,
        })?;
    }

    // The tape's assignment predates the last update; report the trained
    // network's output instead.
    let assignment = crate::model::forward(g, &state)?;
    Ok(RunArtifacts {
        state,
        assignment,
        history,
    })
}

/// Trains the model on one graph, full batch.
///
/// The initial model is seeded with `train_config.seed`; when
/// `mu_escalation` is set and the hard cluster count after the run falls
/// outside `[lower, upper]`, one rerun starts from a fresh derived seed
/// with the penalty weight replaced. The history of both runs is
/// concatenated.
pub fn train(
    g: &Graph,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    if train_config.bounds.upper != model_config.c {
        return Err(TrainError::BoundsModelMismatch {
            bounds_c: train_config.bounds.upper,
            model_c: model_config.c,
        });
    }
    if train_config.bounds.lower > g.node_count() {
        return Err(TrainError::InfeasibleLowerBound {
            l: train_config.bounds.lower,
            n: g.node_count(),
        });
    }
    train_config.bounds.validate_for_n(g.node_count())?;
    let ops = GraphOperators::new(g)?;

    let first = run_once(
        g,
        &ops,
        model_config,
        train_config,
        train_config.weights,
        train_config.seed,
        0,
    )?;
    let count = count_clusters(&hard_assign(&first.assignment));
    let violated = count < train_config.bounds.lower || count > train_config.bounds.upper;
    let escalate = train_config.mu_escalation.filter(|_| violated);

    let Some(mu) = escalate else {
        return Ok(TrainResult {
            state: first.state,
            assignment: first.assignment,
            history: first.history,
            escalated: false,
        });
    };

    let weights = LossWeights {
        mu,
        ..train_config.weights
    };
    let second = run_once(
        g,
        &ops,
        model_config,
        train_config,
        weights,
        train_config.seed ^ ESCALATION_SEED_SALT,
        train_config.epochs,
    )?;
    let mut history = first.history;
    history.extend(second.history);
    Ok(TrainResult {
        state: second.state,
        assignment: second.assignment,
        history,
        escalated: true,
    })
}
