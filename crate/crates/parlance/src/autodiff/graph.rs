//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every operation of one rollout as it executes
//! (define-by-run). [`Graph::backward`] then walks the tape once in reverse
//! and accumulates gradients for every node, including all parameter leaves.
//!
//! Design points:
//!
//! * one tape per rollout, discarded after a single backward pass;
//! * node inputs always reference earlier nodes, so the graph is acyclic by
//!   construction and replayable bit-exactly;
//! * sampled values (action noise, Gumbel noise, dropout masks) enter the
//!   tape as constants, so gradients flow only through the deterministic
//!   part of stochastic ops and a replay reproduces the recorded values;
//! * every op output is checked for NaN/Inf; the first offence poisons the
//!   tape and `backward` refuses to run.

use std::cell::{Cell, RefCell};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::tensor::{matmul_at_dc_into, matmul_dc_bt_into, matmul_into, Tensor};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("numeric error: {0}")]
    NonFinite(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract error: backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("contract error: backward already ran on this tape")]
    BackwardAlreadyRun,
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Whether stochastic ops (noise, dropout) are live or identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on the tape. Cheap to copy; only meaningful for the
/// graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn ix(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable leaf; `param` links it to a parameter registry slot.
    Leaf { param: Option<usize> },
    /// Recorded value with no gradient (world constants, sampled noise).
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[m x n] + [1 x n]` broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise multiply by a scalar node, broadcast to any shape.
    ScaleByVar(Var, Var),
    Tanh(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Recip(Var),
    Softmax(Var, usize),
    /// Per-dimension softmax-weighted pooling over rows: `[J x D] -> [1 x D]`.
    SoftPool(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Sqnorm(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only differentiation tape.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    mode: Mode,
    poison: RefCell<Option<DiffError>>,
    backward_done: Cell<bool>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: RefCell::new(Vec::with_capacity(1024)),
            mode,
            poison: RefCell::new(None),
            backward_done: Cell::new(false),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First numeric failure recorded on this tape, if any.
    pub fn poisoned(&self) -> Option<String> {
        self.poison.borrow().as_ref().map(|e| e.to_string())
    }

    fn poison_with(&self, err: DiffError) {
        let mut p = self.poison.borrow_mut();
        if p.is_none() {
            *p = Some(err);
        }
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        if !value.all_finite() {
            self.poison_with(DiffError::NonFinite(format!(
                "non-finite output of {:?} at node {}",
                op_name(&op),
                self.nodes.borrow().len()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var((nodes.len() - 1) as u32)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.ix()].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.ix()].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.ix()].value.item()
    }

    // ----- leaves ---------------------------------------------------------

    /// Differentiable leaf.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, t)
    }

    /// Differentiable leaf tagged with a parameter-registry index.
    pub fn param(&self, index: usize, t: Tensor) -> Var {
        self.push(Op::Leaf { param: Some(index) }, t)
    }

    /// Non-differentiable recorded value.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    // ----- arithmetic -----------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (value, shapes_ok) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.ix()].value;
            let tb = &nodes[b.ix()].value;
            let (m, k) = (ta.rows(), ta.cols());
            let (k2, n) = (tb.rows(), tb.cols());
            assert_eq!(
                k, k2,
                "dimension error: matmul {}x{} . {}x{}",
                m, k, k2, n
            );
            let mut out = vec![0.0; m * n];
            matmul_into(&mut out, ta.data(), tb.data(), m, k, n);
            (Tensor::matrix(m, n, out), true)
        };
        debug_assert!(shapes_ok);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.ix()].value;
            let tb = &nodes[b.ix()].value;
            assert_eq!(ta.shape(), tb.shape(), "dimension error: add {:?} + {:?}", ta.shape(), tb.shape());
            let mut out = ta.clone();
            out.add_assign(tb);
            out
        };
        self.push(Op::Add(a, b), value)
    }

    /// `[m x n] + [1 x n]`, the bias-add of a linear layer.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.ix()].value;
            let tr = &nodes[row.ix()].value;
            assert_eq!(tr.rows(), 1, "dimension error: add_row rhs must be a row vector");
            assert_eq!(ta.cols(), tr.cols(), "dimension error: add_row {:?} + {:?}", ta.shape(), tr.shape());
            let n = ta.cols();
            let mut out = ta.clone();
            for r in 0..ta.rows() {
                for (o, &b) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(tr.data()) {
                    *o += b;
                }
            }
            out
        };
        self.push(Op::AddRow(a, row), value)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.ix()].value;
            let tb = &nodes[b.ix()].value;
            assert_eq!(ta.shape(), tb.shape(), "dimension error: sub {:?} - {:?}", ta.shape(), tb.shape());
            Tensor::new(
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect(),
            )
        };
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.ix()].value;
            let tb = &nodes[b.ix()].value;
            assert_eq!(ta.shape(), tb.shape(), "dimension error: mul {:?} * {:?}", ta.shape(), tb.shape());
            Tensor::new(
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
            )
        };
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(|v| v * s);
        self.push(Op::Scale(a, s), value)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Multiply every entry of `a` by the scalar node `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.ix()].value.item();
            nodes[a.ix()].value.map(|v| v * sv)
        };
        self.push(Op::ScaleByVar(a, s), value)
    }

    // ----- elementwise nonlinearities -------------------------------------

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// elu(x) = x for x >= 0, e^x - 1 otherwise.
    pub fn elu(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(|v| if v >= 0.0 { v } else { v.exp() - 1.0 });
        self.push(Op::Elu(a), value)
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    /// Natural log; non-positive inputs poison the tape with a domain error.
    pub fn log(&self, a: Var) -> Var {
        {
            let nodes = self.nodes.borrow();
            if nodes[a.ix()].value.data().iter().any(|&v| v <= 0.0) {
                self.poison_with(DiffError::Domain("log of non-positive value".into()));
            }
        }
        let value = self.nodes.borrow()[a.ix()].value.map(f64::ln);
        self.push(Op::Log(a), value)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    /// Square root; negative inputs poison the tape with a domain error.
    pub fn sqrt(&self, a: Var) -> Var {
        {
            let nodes = self.nodes.borrow();
            if nodes[a.ix()].value.data().iter().any(|&v| v < 0.0) {
                self.poison_with(DiffError::Domain("sqrt of negative value".into()));
            }
        }
        let value = self.nodes.borrow()[a.ix()].value.map(f64::sqrt);
        self.push(Op::Sqrt(a), value)
    }

    pub fn recip(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.ix()].value.map(|v| 1.0 / v);
        self.push(Op::Recip(a), value)
    }

    // ----- softmax family --------------------------------------------------

    /// Numerically stabilized softmax along `axis` (0 = down columns,
    /// 1 = across rows).
    pub fn softmax(&self, a: Var, axis: usize) -> Var {
        assert!(axis < 2, "dimension error: softmax axis {axis}");
        let value = {
            let nodes = self.nodes.borrow();
            softmax_tensor(&nodes[a.ix()].value, axis)
        };
        self.push(Op::Softmax(a, axis), value)
    }

    /// Permutation-invariant pooling of `[J x D]` rows into `[1 x D]`:
    /// per dimension d, `phi_d = sum_j softmax_j(x[., d])_j * x[j, d]`.
    ///
    /// Internal reductions run in a canonical (value-sorted) order, so the
    /// output is bit-identical under any permutation of the input rows.
    pub fn softpool(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            softpool_forward(&nodes[a.ix()].value)
        };
        self.push(Op::SoftPool(a), value)
    }

    // ----- reductions -------------------------------------------------------

    /// Sum over all entries (axis `None`) or along an axis of a 2-D tensor.
    pub fn sum(&self, a: Var, axis: Option<usize>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            reduce_tensor(&nodes[a.ix()].value, axis, false)
        };
        self.push(Op::Sum(a, axis), value)
    }

    pub fn mean(&self, a: Var, axis: Option<usize>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            reduce_tensor(&nodes[a.ix()].value, axis, true)
        };
        self.push(Op::Mean(a, axis), value)
    }

    /// Sum of squared entries, down to a scalar.
    pub fn sqnorm(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes.borrow()[a.ix()].value.sqnorm());
        self.push(Op::Sqnorm(a), value)
    }

    // ----- structure ---------------------------------------------------------

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "dimension error: concat of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].ix()].value.rows();
            let total: usize = parts.iter().map(|p| nodes[p.ix()].value.cols()).sum();
            let mut out = vec![0.0; rows * total];
            let mut col0 = 0;
            for p in parts {
                let t = &nodes[p.ix()].value;
                assert_eq!(t.rows(), rows, "dimension error: concat_cols row mismatch");
                for r in 0..rows {
                    out[r * total + col0..r * total + col0 + t.cols()].copy_from_slice(t.row_slice(r));
                }
                col0 += t.cols();
            }
            Tensor::matrix(rows, total, out)
        };
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    /// Vertical stack of tensors with equal column counts.
    pub fn stack_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "dimension error: stack of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].ix()].value.cols();
            let rows: usize = parts.iter().map(|p| nodes[p.ix()].value.rows()).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                let t = &nodes[p.ix()].value;
                assert_eq!(t.cols(), cols, "dimension error: stack_rows col mismatch");
                out.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, cols, out)
        };
        self.push(Op::StackRows(parts.to_vec()), value)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.ix()].value;
            assert!(start + len <= t.cols(), "dimension error: slice_cols {}..{} of {}", start, start + len, t.cols());
            let mut out = Vec::with_capacity(t.rows() * len);
            for r in 0..t.rows() {
                out.extend_from_slice(&t.row_slice(r)[start..start + len]);
            }
            Tensor::matrix(t.rows(), len, out)
        };
        self.push(Op::SliceCols(a, start, len), value)
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.ix()].value;
            assert!(start + len <= t.rows(), "dimension error: slice_rows {}..{} of {}", start, start + len, t.rows());
            let cols = t.cols();
            Tensor::matrix(len, cols, t.data()[start * cols..(start + len) * cols].to_vec())
        };
        self.push(Op::SliceRows(a, start, len), value)
    }

    // ----- stochastic ---------------------------------------------------------

    /// Additive zero-mean Gaussian noise with standard deviation `std`.
    ///
    /// The noise is drawn once from `rng`, recorded as a constant, and
    /// gradients flow only through `x`. Identity in `Eval` mode or when
    /// `std == 0`.
    pub fn gaussian_noise(&self, x: Var, std: f64, rng: &mut ChaCha8Rng) -> Result<Var, DiffError> {
        if !(std >= 0.0) {
            return Err(DiffError::Parameter(format!("noise std must be >= 0, got {std}")));
        }
        if self.mode == Mode::Eval || std == 0.0 {
            return Ok(x);
        }
        let normal = Normal::new(0.0, std).expect("std checked above");
        let noise = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.ix()].value;
            Tensor::new(t.shape().to_vec(), (0..t.numel()).map(|_| normal.sample(rng)).collect())
        };
        let n = self.constant(noise);
        Ok(self.add(x, n))
    }

    /// Inverted dropout: entries survive with probability `1 - rate` and are
    /// scaled by `1/(1 - rate)`, so `Eval` mode is a pure identity.
    pub fn dropout(&self, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var, DiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::Parameter(format!("dropout rate must be in [0,1), got {rate}")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.ix()].value;
            Tensor::new(
                t.shape().to_vec(),
                (0..t.numel())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        };
        let m = self.constant(mask);
        Ok(self.mul(x, m))
    }

    // ----- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar `root`. Populates a gradient for every
    /// node on the path, returned as [`Gradients`]. A tape can be swept once.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        if let Some(p) = self.poison.borrow_mut().take() {
            return Err(p);
        }
        if self.backward_done.get() {
            return Err(DiffError::BackwardAlreadyRun);
        }
        let nodes = self.nodes.borrow();
        if !nodes[root.ix()].value.is_scalar() {
            return Err(DiffError::NonScalarRoot(nodes[root.ix()].value.shape().to_vec()));
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.ix()] = Some(Tensor::scalar(1.0));

        for id in (0..=root.ix()).rev() {
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &nodes[id];
            backprop_one(node, &nodes, g, lower);
        }

        let mut params = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = &grads[id] {
                    params.push((p, g.clone()));
                }
            }
        }

        Ok(Gradients { grads, params })
    }

    /// Recompute every non-leaf node from its recorded inputs and check that
    /// the stored forward values are reproduced bit-exactly.
    pub fn replay_matches(&self) -> bool {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            let recomputed = match &node.op {
                Op::Leaf { .. } | Op::Constant => continue,
                op => recompute(op, &nodes),
            };
            if recomputed.data() != node.value.data() {
                return false;
            }
        }
        true
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Tensor)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, zero if `v` is off-path.
    pub fn grad(&self, g: &Graph, v: Var) -> Tensor {
        match &self.grads[v.ix()] {
            Some(t) => t.clone(),
            None => Tensor::zeros(g.shape(v)),
        }
    }

    /// Gradients of parameter leaves, summed into a dense per-slot vector of
    /// length `param_count`.
    pub fn into_param_grads(self, g: &Graph, param_shapes: &[Vec<usize>]) -> Vec<Tensor> {
        let _ = g;
        let mut out: Vec<Tensor> = param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        for (p, t) in self.params {
            out[p].add_assign(&t);
        }
        out
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Constant => "constant",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::ScaleByVar(..) => "scale_by",
        Op::Tanh(..) => "tanh",
        Op::Elu(..) => "elu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sigmoid(..) => "sigmoid",
        Op::Sqrt(..) => "sqrt",
        Op::Recip(..) => "recip",
        Op::Softmax(..) => "softmax",
        Op::SoftPool(..) => "softpool",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Sqnorm(..) => "sqnorm",
        Op::ConcatCols(..) => "concat_cols",
        Op::StackRows(..) => "stack_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::SliceRows(..) => "slice_rows",
    }
}

fn softmax_tensor(t: &Tensor, axis: usize) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = vec![0.0; rows * cols];
    if axis == 1 {
        for r in 0..rows {
            let row = t.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
    } else {
        for c in 0..cols {
            let mut m = f64::NEG_INFINITY;
            for r in 0..rows {
                m = m.max(t.get(r, c));
            }
            let mut z = 0.0;
            for r in 0..rows {
                let e = (t.get(r, c) - m).exp();
                out[r * cols + c] = e;
                z += e;
            }
            for r in 0..rows {
                out[r * cols + c] /= z;
            }
        }
    }
    Tensor::matrix(rows, cols, out)
}

/// Sum addends in a canonical order (sorted by bit pattern) so the result is
/// independent of how the caller ordered them.
fn canonical_sum(vals: &mut Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.total_cmp(b));
    vals.iter().sum()
}

fn softpool_forward(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    assert!(rows >= 1, "dimension error: softpool of empty set");
    let mut out = vec![0.0; cols];
    let mut exps = vec![0.0; rows];
    let mut addends: Vec<f64> = Vec::with_capacity(rows);
    for c in 0..cols {
        let mut m = f64::NEG_INFINITY;
        for r in 0..rows {
            m = m.max(t.get(r, c));
        }
        for (r, e) in exps.iter_mut().enumerate() {
            *e = (t.get(r, c) - m).exp();
        }
        addends.clear();
        addends.extend_from_slice(&exps);
        let z = canonical_sum(&mut addends);
        addends.clear();
        for r in 0..rows {
            addends.push(exps[r] / z * t.get(r, c));
        }
        out[c] = canonical_sum(&mut addends);
    }
    Tensor::matrix(1, cols, out)
}

fn reduce_tensor(t: &Tensor, axis: Option<usize>, mean: bool) -> Tensor {
    match axis {
        None => {
            let s: f64 = t.data().iter().sum();
            Tensor::scalar(if mean { s / t.numel() as f64 } else { s })
        }
        Some(0) => {
            let (rows, cols) = (t.rows(), t.cols());
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, &v) in out.iter_mut().zip(t.row_slice(r)) {
                    *o += v;
                }
            }
            if mean {
                for o in out.iter_mut() {
                    *o /= rows as f64;
                }
            }
            Tensor::matrix(1, cols, out)
        }
        Some(1) => {
            let (rows, cols) = (t.rows(), t.cols());
            let mut out = vec![0.0; rows];
            for (r, o) in out.iter_mut().enumerate() {
                *o = t.row_slice(r).iter().sum();
                if mean {
                    *o /= cols as f64;
                }
            }
            Tensor::matrix(rows, 1, out)
        }
        Some(a) => panic!("dimension error: reduce axis {a}"),
    }
}

fn recompute(op: &Op, nodes: &[Node]) -> Tensor {
    let val = |v: &Var| &nodes[v.ix()].value;
    match op {
        Op::Leaf { .. } | Op::Constant => unreachable!(),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            let mut out = vec![0.0; m * n];
            matmul_into(&mut out, ta.data(), tb.data(), m, k, n);
            Tensor::matrix(m, n, out)
        }
        Op::Add(a, b) => {
            let mut out = val(a).clone();
            out.add_assign(val(b));
            out
        }
        Op::AddRow(a, b) => {
            let (ta, tr) = (val(a), val(b));
            let n = ta.cols();
            let mut out = ta.clone();
            for r in 0..ta.rows() {
                for (o, &bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(tr.data()) {
                    *o += bv;
                }
            }
            out
        }
        Op::Sub(a, b) => Tensor::new(
            val(a).shape().to_vec(),
            val(a).data().iter().zip(val(b).data()).map(|(x, y)| x - y).collect(),
        ),
        Op::Mul(a, b) => Tensor::new(
            val(a).shape().to_vec(),
            val(a).data().iter().zip(val(b).data()).map(|(x, y)| x * y).collect(),
        ),
        Op::Scale(a, s) => val(a).map(|v| v * s),
        Op::ScaleByVar(a, s) => {
            let sv = val(s).item();
            val(a).map(|v| v * sv)
        }
        Op::Tanh(a) => val(a).map(f64::tanh),
        Op::Elu(a) => val(a).map(|v| if v >= 0.0 { v } else { v.exp() - 1.0 }),
        Op::Exp(a) => val(a).map(f64::exp),
        Op::Log(a) => val(a).map(f64::ln),
        Op::Sigmoid(a) => val(a).map(|v| 1.0 / (1.0 + (-v).exp())),
        Op::Sqrt(a) => val(a).map(f64::sqrt),
        Op::Recip(a) => val(a).map(|v| 1.0 / v),
        Op::Softmax(a, axis) => softmax_tensor(val(a), *axis),
        Op::SoftPool(a) => softpool_forward(val(a)),
        Op::Sum(a, axis) => reduce_tensor(val(a), *axis, false),
        Op::Mean(a, axis) => reduce_tensor(val(a), *axis, true),
        Op::Sqnorm(a) => Tensor::scalar(val(a).sqnorm()),
        Op::ConcatCols(parts) => {
            let rows = val(&parts[0]).rows();
            let total: usize = parts.iter().map(|p| val(p).cols()).sum();
            let mut out = vec![0.0; rows * total];
            let mut col0 = 0;
            for p in parts {
                let t = val(p);
                for r in 0..rows {
                    out[r * total + col0..r * total + col0 + t.cols()].copy_from_slice(t.row_slice(r));
                }
                col0 += t.cols();
            }
            Tensor::matrix(rows, total, out)
        }
        Op::StackRows(parts) => {
            let cols = val(&parts[0]).cols();
            let rows: usize = parts.iter().map(|p| val(p).rows()).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                out.extend_from_slice(val(p).data());
            }
            Tensor::matrix(rows, cols, out)
        }
        Op::SliceCols(a, start, len) => {
            let t = val(a);
            let mut out = Vec::with_capacity(t.rows() * len);
            for r in 0..t.rows() {
                out.extend_from_slice(&t.row_slice(r)[*start..*start + *len]);
            }
            Tensor::matrix(t.rows(), *len, out)
        }
        Op::SliceRows(a, start, len) => {
            let t = val(a);
            let cols = t.cols();
            Tensor::matrix(*len, cols, t.data()[*start * cols..(*start + *len) * cols].to_vec())
        }
    }
}

/// Accumulate input gradients of one node given its output gradient `g`.
/// `lower` is the gradient storage for all nodes with smaller ids.
fn backprop_one(node: &Node, nodes: &[Node], g: &Tensor, lower: &mut [Option<Tensor>]) {
    let mut acc = |v: Var, contribution: Tensor| {
        if matches!(nodes[v.ix()].op, Op::Constant) {
            return;
        }
        match &mut lower[v.ix()] {
            Some(t) => t.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    };
    let val = |v: &Var| &nodes[v.ix()].value;

    match &node.op {
        Op::Leaf { .. } | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if !matches!(nodes[a.ix()].op, Op::Constant) {
                let mut da = vec![0.0; m * k];
                matmul_dc_bt_into(&mut da, g.data(), tb.data(), m, k, n);
                acc(*a, Tensor::matrix(m, k, da));
            }
            if !matches!(nodes[b.ix()].op, Op::Constant) {
                let mut db = vec![0.0; k * n];
                matmul_at_dc_into(&mut db, ta.data(), g.data(), m, k, n);
                acc(*b, Tensor::matrix(k, n, db));
            }
        }
        Op::Add(a, b) => {
            acc(*a, g.clone());
            acc(*b, g.clone());
        }
        Op::AddRow(a, row) => {
            acc(*a, g.clone());
            let n = g.cols();
            let mut dr = vec![0.0; n];
            for r in 0..g.rows() {
                for (d, &gv) in dr.iter_mut().zip(g.row_slice(r)) {
                    *d += gv;
                }
            }
            acc(*row, Tensor::matrix(1, n, dr));
        }
        Op::Sub(a, b) => {
            acc(*a, g.clone());
            acc(*b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            acc(*a, elementwise(g, val(b), |x, y| x * y));
            acc(*b, elementwise(g, val(a), |x, y| x * y));
        }
        Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
        Op::ScaleByVar(a, s) => {
            let sv = val(s).item();
            acc(*a, g.map(|v| v * sv));
            let ds: f64 = g.data().iter().zip(val(a).data()).map(|(x, y)| x * y).sum();
            acc(*s, Tensor::scalar(ds));
        }
        Op::Tanh(a) => acc(*a, elementwise(g, &node.value, |gv, y| gv * (1.0 - y * y))),
        Op::Elu(a) => acc(*a, elementwise(g, &node.value, |gv, y| if y >= 0.0 { gv } else { gv * (y + 1.0) })),
        Op::Exp(a) => acc(*a, elementwise(g, &node.value, |gv, y| gv * y)),
        Op::Log(a) => acc(*a, elementwise(g, val(a), |gv, x| gv / x)),
        Op::Sigmoid(a) => acc(*a, elementwise(g, &node.value, |gv, y| gv * y * (1.0 - y))),
        Op::Sqrt(a) => acc(*a, elementwise(g, &node.value, |gv, y| gv * 0.5 / y)),
        Op::Recip(a) => acc(*a, elementwise(g, val(a), |gv, x| -gv / (x * x))),
        Op::Softmax(a, axis) => {
            let y = &node.value;
            let (rows, cols) = (y.rows(), y.cols());
            let mut dx = Tensor::zeros(vec![rows, cols]);
            if *axis == 1 {
                for r in 0..rows {
                    let yrow = y.row_slice(r);
                    let grow = g.row_slice(r);
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    let out = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                    for ((o, &yv), &gv) in out.iter_mut().zip(yrow).zip(grow) {
                        *o = yv * (gv - dot);
                    }
                }
            } else {
                for c in 0..cols {
                    let mut dot = 0.0;
                    for r in 0..rows {
                        dot += y.get(r, c) * g.get(r, c);
                    }
                    for r in 0..rows {
                        let yv = y.get(r, c);
                        dx.data_mut()[r * cols + c] = yv * (g.get(r, c) - dot);
                    }
                }
            }
            acc(*a, dx);
        }
        Op::SoftPool(a) => {
            // d phi_d / d x_{l,d} = w_{l,d} * (1 + x_{l,d} - phi_d)
            let x = val(a);
            let phi = &node.value;
            let (rows, cols) = (x.rows(), x.cols());
            let mut dx = Tensor::zeros(vec![rows, cols]);
            for c in 0..cols {
                let mut m = f64::NEG_INFINITY;
                for r in 0..rows {
                    m = m.max(x.get(r, c));
                }
                let mut z = 0.0;
                for r in 0..rows {
                    z += (x.get(r, c) - m).exp();
                }
                let gd = g.get(0, c);
                let pd = phi.get(0, c);
                for r in 0..rows {
                    let w = (x.get(r, c) - m).exp() / z;
                    dx.data_mut()[r * cols + c] = gd * w * (1.0 + x.get(r, c) - pd);
                }
            }
            acc(*a, dx);
        }
        Op::Sum(a, axis) => {
            let t = val(a);
            acc(*a, broadcast_reduce_grad(g, t, *axis, 1.0));
        }
        Op::Mean(a, axis) => {
            let t = val(a);
            let denom = match axis {
                None => t.numel() as f64,
                Some(0) => t.rows() as f64,
                Some(1) => t.cols() as f64,
                Some(_) => unreachable!(),
            };
            acc(*a, broadcast_reduce_grad(g, t, *axis, 1.0 / denom));
        }
        Op::Sqnorm(a) => {
            let gv = g.item();
            acc(*a, val(a).map(|x| 2.0 * x * gv));
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut col0 = 0;
            for p in parts {
                let c = val(p).cols();
                if !matches!(nodes[p.ix()].op, Op::Constant) {
                    let mut out = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        out.extend_from_slice(&g.row_slice(r)[col0..col0 + c]);
                    }
                    let _ = total;
                    acc(*p, Tensor::matrix(rows, c, out));
                }
                col0 += c;
            }
        }
        Op::StackRows(parts) => {
            let cols = g.cols();
            let mut row0 = 0;
            for p in parts {
                let r = val(p).rows();
                if !matches!(nodes[p.ix()].op, Op::Constant) {
                    acc(
                        *p,
                        Tensor::matrix(r, cols, g.data()[row0 * cols..(row0 + r) * cols].to_vec()),
                    );
                }
                row0 += r;
            }
        }
        Op::SliceCols(a, start, len) => {
            let t = val(a);
            let mut dx = Tensor::zeros(vec![t.rows(), t.cols()]);
            let cols = t.cols();
            for r in 0..t.rows() {
                let grow = g.row_slice(r);
                dx.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(grow);
            }
            acc(*a, dx);
        }
        Op::SliceRows(a, start, len) => {
            let t = val(a);
            let cols = t.cols();
            let mut dx = Tensor::zeros(vec![t.rows(), cols]);
            dx.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
            acc(*a, dx);
        }
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        g.shape().to_vec(),
        g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

fn broadcast_reduce_grad(g: &Tensor, input: &Tensor, axis: Option<usize>, scale: f64) -> Tensor {
    let (rows, cols) = (input.rows(), input.cols());
    match axis {
        None => {
            let gv = g.item() * scale;
            Tensor::new(input.shape().to_vec(), vec![gv; input.numel()])
        }
        Some(0) => {
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                out.extend(g.data().iter().map(|v| v * scale));
            }
            Tensor::matrix(rows, cols, out)
        }
        Some(1) => {
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let gv = g.get(r, 0) * scale;
                out.extend(std::iter::repeat(gv).take(cols));
            }
            Tensor::matrix(rows, cols, out)
        }
        Some(_) => unreachable!(),
    }
}
