//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one forward evaluation; [`Tape::backward`] propagates
//! gradients from a scalar root to every differentiable leaf. The op set is
//! exactly what the clustering model and its losses need. All max-style ops
//! (row/column max, top-k sums) break ties toward the lowest index and route
//! the gradient to the selected entries only — the direct subgradient of the
//! sorted-truncation they implement.
//!
//! Scalars are 1x1 matrices; row vectors are 1xc, column vectors nx1.

use ndarray::{Array2, Axis};
use std::rc::Rc;
use thiserror::Error;

/// Errors from the tape entry points.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward requires a scalar (1x1) root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Compressed sparse row matrix used for constant graph operators
/// (adjacency, mean aggregation). Multiplication by a `CsrMatrix` is a tape
/// op whose gradient flows only to the dense operand.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triples; entries must be sorted by row.
    pub fn from_sorted_entries(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut last_row = 0;
        for (r, c, v) in entries {
            debug_assert!(r >= last_row, "entries must be sorted by row");
            debug_assert!(r < nrows && c < ncols);
            while last_row < r {
                last_row += 1;
                indptr[last_row] = indices.len();
            }
            indices.push(c);
            data.push(v);
        }
        while last_row < nrows {
            last_row += 1;
            indptr[last_row] = indices.len();
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// `self · x` for dense `x`.
    pub fn mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            self.ncols,
            x.nrows(),
            "csr_mul shape mismatch: {}x{} . {}x{}",
            self.nrows,
            self.ncols,
            x.nrows(),
            x.ncols()
        );
        let mut out = Array2::zeros((self.nrows, x.ncols()));
        for r in 0..self.nrows {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[idx];
                let v = self.data[idx];
                let src = x.row(c);
                let mut dst = out.row_mut(r);
                dst.scaled_add(v, &src);
            }
        }
        out
    }

    /// `selfᵀ · x` for dense `x`.
    pub fn transpose_mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.nrows, x.nrows(), "csr transpose_mul shape mismatch");
        let mut out = Array2::zeros((self.ncols, x.ncols()));
        for r in 0..self.nrows {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[idx];
                let v = self.data[idx];
                let src = x.row(r);
                let mut dst = out.row_mut(c);
                dst.scaled_add(v, &src);
            }
        }
        out
    }
}

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    CsrMul(Rc<CsrMatrix>, VarId),
    Transpose(VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Scale(VarId, f64),
    RowSoftmax(VarId),
    Relu(VarId),
    /// Selected column index per row.
    RowMax(VarId, Vec<usize>),
    /// Selected row index per column.
    ColMax(VarId, Vec<usize>),
    Sum(VarId),
    /// Selected flat (row-major) indices, ascending.
    TopKSum(VarId, Vec<usize>),
    /// Selected row indices per column, `k` per column.
    ColTopKSum(VarId, usize, Vec<usize>),
    L2Norm(VarId),
    DiagExtract(VarId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_fold(hash: u64, word: u64) -> u64 {
    let mut h = hash;
    for byte in word.to_le_bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Records one forward evaluation and replays it backwards for gradients.
///
/// Shape mismatches and division by zero are programming errors and panic;
/// public callers validate their inputs before building a tape.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Array2<f64>>,
    /// Running hash of every discrete choice made during the forward pass
    /// (argmax selections, top-k selections, relu activation signs). Two
    /// evaluations of the same computation with the same hash took identical
    /// subgradient branches.
    selection_hash: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            selection_hash: FNV_OFFSET,
        }
    }

    /// A differentiable leaf; [`Tape::grad`] is meaningful for it after
    /// [`Tape::backward`].
    pub fn leaf(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (graph matrices, targets).
    pub fn constant(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    /// A 1x1 constant.
    pub fn scalar(&mut self, v: f64) -> VarId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar_value on non-scalar node");
        v[[0, 0]]
    }

    /// Gradient of the last [`Tape::backward`] root w.r.t. this node.
    pub fn grad(&self, id: VarId) -> &Array2<f64> {
        assert!(
            !self.grads.is_empty(),
            "grad queried before backward was run"
        );
        &self.grads[id.0]
    }

    pub fn selection_hash(&self) -> u64 {
        self.selection_hash
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn fold_selection(&mut self, it: impl IntoIterator<Item = usize>) {
        let mut h = self.selection_hash;
        for v in it {
            h = fnv_fold(h, v as u64);
        }
        self.selection_hash = h;
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul shape mismatch: {:?} . {:?}",
            va.dim(),
            vb.dim()
        );
        let value = va.dot(vb);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    /// Multiplication by a constant sparse matrix: `m · x`.
    pub fn csr_mul(&mut self, m: Rc<CsrMatrix>, x: VarId) -> VarId {
        let value = m.mul_dense(&self.nodes[x.0].value);
        let needs = self.needs(x);
        self.push(value, Op::CsrMul(m, x), needs)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.t().to_owned();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    /// Elementwise addition; `b` may also be a 1xc row vector broadcast over
    /// the rows of `a` (bias addition).
    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if va.dim() == vb.dim() {
            va + vb
        } else if vb.nrows() == 1 && vb.ncols() == va.ncols() {
            va + &vb.row(0)
        } else {
            panic!("add shape mismatch: {:?} + {:?}", va.dim(), vb.dim());
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.dim(),
            vb.dim(),
            "sub shape mismatch: {:?} - {:?}",
            va.dim(),
            vb.dim()
        );
        let value = va - vb;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.dim(),
            vb.dim(),
            "mul shape mismatch: {:?} * {:?}",
            va.dim(),
            vb.dim()
        );
        let value = va * vb;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    /// Elementwise division; `b` may also be an nx1 column vector broadcast
    /// across the columns of `a` (row normalization). Panics when any
    /// denominator entry is zero.
    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            vb.iter().all(|&v| v != 0.0),
            "elementwise divide by zero"
        );
        let value = if va.dim() == vb.dim() {
            va / vb
        } else if vb.ncols() == 1 && vb.nrows() == va.nrows() {
            va / &vb.column(0).insert_axis(Axis(1))
        } else {
            panic!("div shape mismatch: {:?} / {:?}", va.dim(), vb.dim());
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Div(a, b), needs)
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let value = &self.nodes[a.0].value * k;
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, k), needs)
    }

    /// Softmax applied independently to every row (shifted by the row max
    /// for stability). A zero row maps to the uniform row `1/c`.
    pub fn row_softmax(&mut self, a: VarId) -> VarId {
        let va = &self.nodes[a.0].value;
        let mut value = va.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let needs = self.needs(a);
        self.push(value, Op::RowSoftmax(a), needs)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        // Fold the activation sign pattern so kink crossings are visible to
        // the finite-difference checker.
        let mut h = self.selection_hash;
        let mut word = 0u64;
        let mut bits = 0;
        for &x in self.nodes[a.0].value.iter() {
            word = (word << 1) | u64::from(x > 0.0);
            bits += 1;
            if bits == 64 {
                h = fnv_fold(h, word);
                word = 0;
                bits = 0;
            }
        }
        if bits > 0 {
            h = fnv_fold(h, word);
        }
        self.selection_hash = h;
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Maximum of each row, as an nx1 column vector. Ties select the lowest
    /// column index.
    pub fn row_max(&mut self, a: VarId) -> VarId {
        let va = &self.nodes[a.0].value;
        assert!(va.ncols() > 0, "row_max of an empty matrix");
        let mut sel = Vec::with_capacity(va.nrows());
        let mut value = Array2::zeros((va.nrows(), 1));
        for (r, row) in va.rows().into_iter().enumerate() {
            let (mut best_c, mut best) = (0usize, row[0]);
            for (c, &x) in row.iter().enumerate().skip(1) {
                if x > best {
                    best = x;
                    best_c = c;
                }
            }
            value[[r, 0]] = best;
            sel.push(best_c);
        }
        self.fold_selection(sel.iter().copied());
        let needs = self.needs(a);
        self.push(value, Op::RowMax(a, sel), needs)
    }

    /// Maximum of each column, as a 1xc row vector. Ties select the lowest
    /// row index.
    pub fn col_max(&mut self, a: VarId) -> VarId {
        let va = &self.nodes[a.0].value;
        assert!(va.nrows() > 0, "col_max of an empty matrix");
        let mut sel = Vec::with_capacity(va.ncols());
        let mut value = Array2::zeros((1, va.ncols()));
        for c in 0..va.ncols() {
            let col = va.column(c);
            let (mut best_r, mut best) = (0usize, col[0]);
            for (r, &x) in col.iter().enumerate().skip(1) {
                if x > best {
                    best = x;
                    best_r = r;
                }
            }
            value[[0, c]] = best;
            sel.push(best_r);
        }
        self.fold_selection(sel.iter().copied());
        let needs = self.needs(a);
        self.push(value, Op::ColMax(a, sel), needs)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: VarId) -> VarId {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    /// Sum of the `k` largest entries (row-major flattening; ties toward the
    /// lowest index), as a scalar. Gradient is 1 on the selected entries.
    pub fn top_k_sum(&mut self, a: VarId, k: usize) -> VarId {
        let va = &self.nodes[a.0].value;
        let len = va.len();
        assert!(k <= len, "top_k_sum: k={k} exceeds {len} entries");
        let flat: Vec<f64> = va.iter().copied().collect();
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&i, &j| flat[j].total_cmp(&flat[i]).then(i.cmp(&j)));
        let mut sel: Vec<usize> = order[..k].to_vec();
        sel.sort_unstable();
        let value = Array2::from_elem((1, 1), sel.iter().map(|&i| flat[i]).sum());
        self.fold_selection(sel.iter().copied());
        let needs = self.needs(a);
        self.push(value, Op::TopKSum(a, sel), needs)
    }

    /// Per-column sum of the `k` largest entries, as a 1xc row vector. With
    /// `k = 1` this computes exactly [`Tape::col_max`].
    pub fn col_top_k_sum(&mut self, a: VarId, k: usize) -> VarId {
        let va = &self.nodes[a.0].value;
        assert!(
            k <= va.nrows(),
            "col_top_k_sum: k={k} exceeds {} rows",
            va.nrows()
        );
        let mut value = Array2::zeros((1, va.ncols()));
        let mut sel = Vec::with_capacity(k * va.ncols());
        for c in 0..va.ncols() {
            let col: Vec<f64> = va.column(c).iter().copied().collect();
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&i, &j| col[j].total_cmp(&col[i]).then(i.cmp(&j)));
            let mut rows: Vec<usize> = order[..k].to_vec();
            rows.sort_unstable();
            value[[0, c]] = rows.iter().map(|&r| col[r]).sum();
            sel.extend(rows);
        }
        self.fold_selection(sel.iter().copied());
        let needs = self.needs(a);
        self.push(value, Op::ColTopKSum(a, k, sel), needs)
    }

    /// Euclidean norm of all entries (Frobenius norm for matrices), as a
    /// scalar. The subgradient at the zero matrix is zero.
    pub fn l2_norm(&mut self, a: VarId) -> VarId {
        let value = Array2::from_elem(
            (1, 1),
            self.nodes[a.0].value.iter().map(|x| x * x).sum::<f64>().sqrt(),
        );
        let needs = self.needs(a);
        self.push(value, Op::L2Norm(a), needs)
    }

    /// Diagonal of a square matrix, as a 1xc row vector.
    pub fn diag(&mut self, a: VarId) -> VarId {
        let va = &self.nodes[a.0].value;
        assert_eq!(
            va.nrows(),
            va.ncols(),
            "diag of a non-square matrix {:?}",
            va.dim()
        );
        let mut value = Array2::zeros((1, va.nrows()));
        for i in 0..va.nrows() {
            value[[0, i]] = va[[i, i]];
        }
        let needs = self.needs(a);
        self.push(value, Op::DiagExtract(a), needs)
    }

    /// Accumulates `d(root)/d(node)` for every node reachable from a scalar
    /// root. Gradients do not reset between calls; use one backward per tape.
    pub fn backward(&mut self, root: VarId) -> Result<(), AutodiffError> {
        let dim = self.nodes[root.0].value.dim();
        if dim != (1, 1) {
            return Err(AutodiffError::NonScalarRoot {
                rows: dim.0,
                cols: dim.1,
            });
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| {
                if n.needs_grad {
                    Array2::zeros(n.value.dim())
                } else {
                    Array2::zeros((0, 0))
                }
            })
            .collect();
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        self.grads[root.0][[0, 0]] = 1.0;
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut self.grads[id]);
            self.propagate(id, &g);
            self.grads[id] = g;
        }
        Ok(())
    }

    fn accumulate(&mut self, target: VarId, delta: Array2<f64>) {
        if self.nodes[target.0].needs_grad {
            self.grads[target.0] += &delta;
        }
    }

    fn propagate(&mut self, id: usize, g: &Array2<f64>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.dot(&self.nodes[b.0].value.t());
                let db = self.nodes[a.0].value.t().dot(g);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::CsrMul(m, x) => {
                let x = *x;
                let dx = m.transpose_mul_dense(g);
                self.accumulate(x, dx);
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.t().to_owned());
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                if self.nodes[b.0].value.dim() == g.dim() {
                    self.accumulate(b, g.clone());
                } else {
                    // Broadcast bias: collapse rows.
                    self.accumulate(b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, -g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g * &self.nodes[b.0].value;
                let db = g * &self.nodes[a.0].value;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if va.dim() == vb.dim() {
                    let da = g / vb;
                    let db = -&(g * va) / &(vb * vb);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                } else {
                    let col = vb.column(0).insert_axis(Axis(1));
                    let da = g / &col;
                    let db = (-&(g * va) / &(&col * &col))
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
            }
            Op::Scale(a, k) => {
                let (a, k) = (*a, *k);
                self.accumulate(a, g * k);
            }
            Op::RowSoftmax(a) => {
                let a = *a;
                let y = &self.nodes[id].value;
                let mut da = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = y
                        .row(r)
                        .iter()
                        .zip(g.row(r).iter())
                        .map(|(yi, gi)| yi * gi)
                        .sum();
                    for c in 0..y.ncols() {
                        da[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                self.accumulate(a, da);
            }
            Op::Relu(a) => {
                let a = *a;
                let mask = self.nodes[a.0].value.mapv(|x| f64::from(x > 0.0));
                self.accumulate(a, g * &mask);
            }
            Op::RowMax(a, sel) => {
                let a = *a;
                let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                for (r, &c) in sel.iter().enumerate() {
                    da[[r, c]] = g[[r, 0]];
                }
                self.accumulate(a, da);
            }
            Op::ColMax(a, sel) => {
                let a = *a;
                let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                for (c, &r) in sel.iter().enumerate() {
                    da[[r, c]] = g[[0, c]];
                }
                self.accumulate(a, da);
            }
            Op::Sum(a) => {
                let a = *a;
                let da = Array2::from_elem(self.nodes[a.0].value.dim(), g[[0, 0]]);
                self.accumulate(a, da);
            }
            Op::TopKSum(a, sel) => {
                let a = *a;
                let cols = self.nodes[a.0].value.ncols();
                let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                for &flat in sel {
                    da[[flat / cols, flat % cols]] = g[[0, 0]];
                }
                self.accumulate(a, da);
            }
            Op::ColTopKSum(a, k, sel) => {
                let (a, k) = (*a, *k);
                let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                for (c, rows) in sel.chunks(k).enumerate() {
                    for &r in rows {
                        da[[r, c]] = g[[0, c]];
                    }
                }
                self.accumulate(a, da);
            }
            Op::L2Norm(a) => {
                let a = *a;
                let norm = self.nodes[id].value[[0, 0]];
                if norm > 0.0 {
                    let da = &self.nodes[a.0].value * (g[[0, 0]] / norm);
                    self.accumulate(a, da);
                }
            }
            Op::DiagExtract(a) => {
                let a = *a;
                let mut da = Array2::zeros(self.nodes[a.0].value.dim());
                for i in 0..da.nrows() {
                    da[[i, i]] = g[[0, i]];
                }
                self.accumulate(a, da);
            }
        }
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Worst per-coordinate relative error among conclusive coordinates,
    /// with the denominator floored at 1 so near-zero gradients compare
    /// absolutely.
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub coords_checked: usize,
    /// Coordinates skipped because a max/top-k selection or relu sign
    /// flipped within the step — the comparison is inconclusive there, not
    /// failed.
    pub inconclusive: usize,
}

/// Compares reverse-mode gradients of `f` against central finite
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate over every
/// parameter matrix.
///
/// `f` must build the same computation each time it is called and return a
/// scalar node.
pub fn finite_difference_check<F>(f: F, params: &[Array2<f64>], step: f64) -> FdReport
where
    F: Fn(&mut Tape, &[VarId]) -> VarId,
{
    let eval = |p: &[Array2<f64>]| -> (f64, u64) {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = p.iter().map(|m| tape.leaf(m.clone())).collect();
        let root = f(&mut tape, &ids);
        (tape.scalar_value(root), tape.selection_hash())
    };

    let mut tape = Tape::new();
    let ids: Vec<VarId> = params.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &ids);
    let base_hash = tape.selection_hash();
    tape.backward(root).expect("fd check root must be scalar");
    let ad_grads: Vec<Array2<f64>> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

    let mut report = FdReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        inconclusive: 0,
    };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for r in 0..param.nrows() {
            for c in 0..param.ncols() {
                let orig = work[pi][[r, c]];
                work[pi][[r, c]] = orig + step;
                let (fp, hp) = eval(&work);
                work[pi][[r, c]] = orig - step;
                let (fm, hm) = eval(&work);
                work[pi][[r, c]] = orig;
                if hp != base_hash || hm != base_hash {
                    report.inconclusive += 1;
                    continue;
                }
                let fd = (fp - fm) / (2.0 * step);
                let ad = ad_grads[pi][[r, c]];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                }
                report.coords_checked += 1;
            }
        }
    }
    report
}
