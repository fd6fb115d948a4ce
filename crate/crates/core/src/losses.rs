//! Differentiable objective terms for bounded community detection: soft
//! modularity, the lower-bound penalty on the cluster count, its minimum-
//! cluster-size variant, the balance regularizer, and the combined loss.
//!
//! Each term exists in two forms that share one implementation: a tape
//! builder used during training, and a standalone evaluator for direct use
//! in tests and reporting. Minimization form throughout: the combined loss
//! is `−Q + μ·penalty + λ·balance`, so all terms decrease together.

use crate::autodiff::{CsrMatrix, Tape, VarId};
use crate::graph::Graph;
use ndarray::Array2;
use std::rc::Rc;
use thiserror::Error;

/// Errors from loss evaluation.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("modularity is undefined for a graph with no edges")]
    NoEdges,
    #[error("assignment matrix has {found} rows, expected {expected} (one per node)")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("invalid assignment matrix: {0}")]
    InvalidAssignment(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("minimum-size bound infeasible: {l} clusters of {b} nodes exceed n={n}")]
    MinSizeInfeasible { l: usize, b: usize, n: usize },
}

/// Soft cluster assignment: an n×c matrix with entries in `[0, 1]` whose
/// rows each sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(Array2<f64>);

impl AssignmentMatrix {
    /// Validates entries and row sums (tolerance 1e-9 on the sums).
    pub fn new(s: Array2<f64>) -> Result<Self, LossError> {
        if s.ncols() == 0 || s.nrows() == 0 {
            return Err(LossError::InvalidAssignment(
                "assignment matrix must be non-empty".into(),
            ));
        }
        for (r, row) in s.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(LossError::InvalidAssignment(format!(
                    "row {r} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(LossError::InvalidAssignment(format!(
                    "row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self(s))
    }

    /// Hard assignment as a matrix: row `i` is the indicator of
    /// `labels[i]`.
    pub fn one_hot(labels: &[usize], c: usize) -> Result<Self, LossError> {
        let mut s = Array2::zeros((labels.len(), c));
        for (i, &l) in labels.iter().enumerate() {
            if l >= c {
                return Err(LossError::InvalidAssignment(format!(
                    "label {l} at row {i} exceeds c={c}"
                )));
            }
            s[[i, l]] = 1.0;
        }
        Self::new(s)
    }

    /// The maximally uncertain assignment: every entry `1/c`.
    pub fn uniform(n: usize, c: usize) -> Self {
        Self(Array2::from_elem((n, c), 1.0 / c as f64))
    }

    /// Wraps a row-softmax output without re-validating.
    pub(crate) fn from_softmax(s: Array2<f64>) -> Self {
        Self(s)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    /// Node count (rows).
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Maximum cluster count (columns).
    pub fn c(&self) -> usize {
        self.0.ncols()
    }
}

/// Requested range for the returned number of clusters. `lower == upper`
/// forces an exact count; `min_size` additionally requires that many nodes
/// per counted cluster.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lower: usize,
    pub upper: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
}

impl Bounds {
    pub fn new(lower: usize, upper: usize) -> Result<Self, LossError> {
        let b = Self {
            lower,
            upper,
            min_size: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_min_size(lower: usize, upper: usize, min_size: usize) -> Result<Self, LossError> {
        let b = Self {
            lower,
            upper,
            min_size: Some(min_size),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.lower < 1 {
            return Err(LossError::InvalidBounds("lower bound must be >= 1".into()));
        }
        if self.lower > self.upper {
            return Err(LossError::InvalidBounds(format!(
                "lower bound {} exceeds upper bound {}",
                self.lower, self.upper
            )));
        }
        if self.min_size == Some(0) {
            return Err(LossError::InvalidBounds(
                "minimum cluster size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Checks `l·b <= n` when a minimum size is set.
    pub fn validate_for_n(&self, n: usize) -> Result<(), LossError> {
        self.validate()?;
        if let Some(b) = self.min_size {
            if self.lower * b > n {
                return Err(LossError::MinSizeInfeasible {
                    l: self.lower,
                    b,
                    n,
                });
            }
        }
        Ok(())
    }
}

/// Weights of the penalty terms in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub mu: f64,
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(mu: f64, lambda: f64) -> Result<Self, LossError> {
        if !(mu.is_finite() && lambda.is_finite()) || mu < 0.0 || lambda < 0.0 {
            return Err(LossError::InvalidBounds(format!(
                "loss weights must be finite and nonnegative, got mu={mu}, lambda={lambda}"
            )));
        }
        Ok(Self { mu, lambda })
    }
}

/// Constant graph operators shared by every loss evaluation of one graph:
/// sparse adjacency, the degree row vector, and `2m`.
#[derive(Clone)]
pub struct GraphOperators {
    adjacency: Rc<CsrMatrix>,
    degrees: Array2<f64>,
    two_m: f64,
    n: usize,
}

impl GraphOperators {
    pub fn new(g: &Graph) -> Result<Self, LossError> {
        if g.edge_count() == 0 {
            return Err(LossError::NoEdges);
        }
        let n = g.node_count();
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * g.edge_count());
        for &(i, j) in g.edges() {
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let adjacency = Rc::new(CsrMatrix::from_sorted_entries(n, n, entries));
        let deg = g.degrees();
        let degrees =
            Array2::from_shape_fn((1, n), |(_, i)| deg[i] as f64);
        Ok(Self {
            adjacency,
            degrees,
            two_m: 2.0 * g.edge_count() as f64,
            n,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> Rc<CsrMatrix> {
        self.adjacency.clone()
    }
}

/// Soft modularity in trace form:
/// `Q = (1/2m) [ Σ_k (SᵀAS)_kk − ‖dᵀS‖² / 2m ]`.
pub fn soft_modularity_node(tape: &mut Tape, ops: &GraphOperators, s: VarId) -> VarId {
    let a_s = tape.csr_mul(ops.adjacency.clone(), s);
    let s_t = tape.transpose(s);
    let s_a_s = tape.matmul(s_t, a_s);
    let diag = tape.diag(s_a_s);
    let trace = tape.sum(diag);
    let d = tape.constant(ops.degrees.clone());
    let d_s = tape.matmul(d, s);
    let d_s_norm = tape.l2_norm(d_s);
    let d_s_sq = tape.mul(d_s_norm, d_s_norm);
    let null_term = tape.scale(d_s_sq, 1.0 / ops.two_m);
    let diff = tape.sub(trace, null_term);
    tape.scale(diff, 1.0 / ops.two_m)
}

/// Normalizes each row of `s` by its row maximum.
fn row_normalized(tape: &mut Tape, s: VarId) -> VarId {
    let row_max = tape.row_max(s);
    tape.div(s, row_max)
}

/// Lower-bound penalty: `l` minus the sum of the `l` largest column maxima
/// of the row-normalized assignment. Zero exactly when at least `l` clusters
/// hold some node's (unique) maximum membership; at most `l − 1`.
pub fn lower_bound_penalty_node(tape: &mut Tape, s: VarId, l: usize) -> VarId {
    let normalized = row_normalized(tape, s);
    let col_peaks = tape.col_max(normalized);
    let occupied = tape.top_k_sum(col_peaks, l);
    let target = tape.scalar(l as f64);
    tape.sub(target, occupied)
}

/// Minimum-size variant: per column, sum the `b` largest row-normalized
/// entries; rank columns by those group sums; return `l·b` minus the sum of
/// the `l` largest groups. With `b = 1` this computes exactly
/// [`lower_bound_penalty_node`].
pub fn min_size_penalty_node(tape: &mut Tape, s: VarId, l: usize, b: usize) -> VarId {
    let normalized = row_normalized(tape, s);
    let group_sums = tape.col_top_k_sum(normalized, b);
    let occupied = tape.top_k_sum(group_sums, l);
    let target = tape.scalar((l * b) as f64);
    tape.sub(target, occupied)
}

/// Balance regularizer:
/// `‖diag(SᵀS) − (n/c)·1‖₂ / (n·√((c−1)/c))` — 1 when all nodes share one
/// cluster, 0 when clusters are perfectly balanced.
pub fn balance_node(tape: &mut Tape, s: VarId) -> VarId {
    let (n, c) = tape.value(s).dim();
    let s_t = tape.transpose(s);
    let s_t_s = tape.matmul(s_t, s);
    let diag = tape.diag(s_t_s);
    let target = tape.constant(Array2::from_elem((1, c), n as f64 / c as f64));
    let diff = tape.sub(diag, target);
    let numerator = tape.l2_norm(diff);
    let denominator = n as f64 * ((c as f64 - 1.0) / c as f64).sqrt();
    tape.scale(numerator, 1.0 / denominator)
}

/// MinCutPool orthogonality/balance penalty, unnormalized:
/// `‖SᵀS − (n/c)·I‖_F`.
pub fn mincut_pool_penalty_node(tape: &mut Tape, s: VarId) -> VarId {
    let (n, c) = tape.value(s).dim();
    let s_t = tape.transpose(s);
    let s_t_s = tape.matmul(s_t, s);
    let target = tape.constant(Array2::from_diag_elem(c, n as f64 / c as f64));
    let diff = tape.sub(s_t_s, target);
    tape.l2_norm(diff)
}

/// DMoN collapse penalty: `(√c / n)·‖Σ_i s_i‖ − 1`. Zero both at balanced
/// hard assignments and at the fully uniform assignment.
pub fn dmon_penalty_node(tape: &mut Tape, s: VarId) -> VarId {
    let (n, c) = tape.value(s).dim();
    let ones = tape.constant(Array2::from_elem((1, n), 1.0));
    let col_sums = tape.matmul(ones, s);
    let norm = tape.l2_norm(col_sums);
    let scaled = tape.scale(norm, (c as f64).sqrt() / n as f64);
    let one = tape.scalar(1.0);
    tape.sub(scaled, one)
}

/// Tape nodes of the combined loss and its reported components.
pub struct LossNodes {
    pub total: VarId,
    pub neg_modularity: VarId,
    pub penalty: VarId,
    pub balance: VarId,
}

/// Combined loss `−Q + μ·penalty + λ·balance`, where the penalty is the
/// lower-bound penalty or its minimum-size variant when `bounds.min_size`
/// is set. All three components are recorded even at zero weight.
pub fn total_loss_node(
    tape: &mut Tape,
    ops: &GraphOperators,
    s: VarId,
    bounds: &Bounds,
    weights: &LossWeights,
) -> LossNodes {
    let q = soft_modularity_node(tape, ops, s);
    let neg_modularity = tape.scale(q, -1.0);
    let penalty = match bounds.min_size {
        Some(b) => min_size_penalty_node(tape, s, bounds.lower, b),
        None => lower_bound_penalty_node(tape, s, bounds.lower),
    };
    let balance = balance_node(tape, s);
    let weighted_penalty = tape.scale(penalty, weights.mu);
    let weighted_balance = tape.scale(balance, weights.lambda);
    let partial = tape.add(neg_modularity, weighted_penalty);
    let total = tape.add(partial, weighted_balance);
    LossNodes {
        total,
        neg_modularity,
        penalty,
        balance,
    }
}

fn check_rows(g: &Graph, s: &AssignmentMatrix) -> Result<(), LossError> {
    if s.n() != g.node_count() {
        return Err(LossError::RowCountMismatch {
            expected: g.node_count(),
            found: s.n(),
        });
    }
    Ok(())
}

fn check_lower(l: usize, c: usize) -> Result<(), LossError> {
    if l < 1 || l > c {
        return Err(LossError::InvalidBounds(format!(
            "lower bound {l} must lie in [1, {c}]"
        )));
    }
    Ok(())
}

/// Standalone soft modularity.
pub fn soft_modularity(g: &Graph, s: &AssignmentMatrix) -> Result<f64, LossError> {
    check_rows(g, s)?;
    let ops = GraphOperators::new(g)?;
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let q = soft_modularity_node(&mut tape, &ops, sid);
    Ok(tape.scalar_value(q))
}

/// Standalone lower-bound penalty.
pub fn lower_bound_penalty(s: &AssignmentMatrix, l: usize) -> Result<f64, LossError> {
    check_lower(l, s.c())?;
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let p = lower_bound_penalty_node(&mut tape, sid, l);
    Ok(tape.scalar_value(p))
}

/// Standalone minimum-size penalty.
pub fn min_size_penalty(s: &AssignmentMatrix, l: usize, b: usize) -> Result<f64, LossError> {
    check_lower(l, s.c())?;
    if b < 1 {
        return Err(LossError::InvalidBounds(
            "minimum cluster size must be >= 1".into(),
        ));
    }
    if l * b > s.n() {
        return Err(LossError::MinSizeInfeasible { l, b, n: s.n() });
    }
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let p = min_size_penalty_node(&mut tape, sid, l, b);
    Ok(tape.scalar_value(p))
}

/// Standalone balance regularizer. Requires `c >= 2`.
pub fn balance(s: &AssignmentMatrix) -> Result<f64, LossError> {
    if s.c() < 2 {
        return Err(LossError::InvalidBounds(
            "balance requires at least 2 cluster columns".into(),
        ));
    }
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let b = balance_node(&mut tape, sid);
    Ok(tape.scalar_value(b))
}

/// Standalone MinCutPool penalty.
pub fn mincut_pool_penalty(s: &AssignmentMatrix) -> f64 {
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let p = mincut_pool_penalty_node(&mut tape, sid);
    tape.scalar_value(p)
}

/// Standalone DMoN penalty.
pub fn dmon_penalty(s: &AssignmentMatrix) -> f64 {
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let p = dmon_penalty_node(&mut tape, sid);
    tape.scalar_value(p)
}

/// Values of the combined loss and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub neg_modularity: f64,
    pub penalty: f64,
    pub balance: f64,
}

/// Standalone combined loss.
pub fn total_loss(
    g: &Graph,
    s: &AssignmentMatrix,
    bounds: &Bounds,
    weights: &LossWeights,
) -> Result<TotalLoss, LossError> {
    check_rows(g, s)?;
    check_lower(bounds.lower, s.c())?;
    bounds.validate_for_n(s.n())?;
    let ops = GraphOperators::new(g)?;
    let mut tape = Tape::new();
    let sid = tape.constant(s.matrix().clone());
    let nodes = total_loss_node(&mut tape, &ops, sid, bounds, weights);
    Ok(TotalLoss {
        total: tape.scalar_value(nodes.total),
        neg_modularity: tape.scalar_value(nodes.neg_modularity),
        penalty: tape.scalar_value(nodes.penalty),
        balance: tape.scalar_value(nodes.balance),
    })
}
