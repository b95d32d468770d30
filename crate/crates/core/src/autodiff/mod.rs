//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Every value in a model graph is a 2-D array; scalars are `[1,1]`. A
//! [`Tape`] records define-by-run ops and replays them backward to produce
//! gradients keyed by parameter name. The op set is deliberately small: the
//! recurrent cells, convolutions, and losses in this crate are composed from
//! it rather than added as monolithic ops, except for the row-wise losses,
//! which are fused for numerical stability.
//!
//! Gradient-flow separation (adversarial training) is expressed with
//! [`Tape::frozen`] and [`Tape::detach`]: a frozen leaf never receives or
//! transmits gradient, so the separation holds exactly, not approximately.

mod fd;
mod params;

pub use fd::{fd_grad_at, fd_grad_full, fd_grad_of_grads, max_rel_err};
pub use params::ParamSet;

use ndarray::{Array2, Axis};
use std::collections::HashMap;

use crate::error::ModelError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Affine { x: Var, mul: f64 },
    Rows { src: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaxMany(Vec<Var>),
    SumAll(Var),
    CeRows { logits: Var, targets: Vec<usize>, row_w: Vec<f64> },
    CeDist { logits: Var, target: Array2<f64>, row_w: Vec<f64> },
    EntropyRows { logits: Var, row_w: Vec<f64> },
    BceRows { logits: Var, targets: Vec<f64>, row_w: Vec<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    tracked: HashMap<String, usize>,
}

fn bdim(x: usize, y: usize) -> usize {
    if x == y {
        x
    } else if x == 1 {
        y
    } else if y == 1 {
        x
    } else {
        panic!("incompatible broadcast dims {x} vs {y}");
    }
}

fn bcast_dim(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    (bdim(a.0, b.0), bdim(a.1, b.1))
}

/// Sums `g` down to `dim` over any axes that were broadcast up.
fn reduce_to(g: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if dim.0 == 1 && out.nrows() > 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if dim.1 == 1 && out.ncols() > 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn bin_broadcast<F: Fn(f64, f64) -> f64>(
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: F,
) -> Array2<f64> {
    let dim = bcast_dim(a.dim(), b.dim());
    let av = a.broadcast(dim).expect("broadcast lhs");
    let bv = b.broadcast(dim).expect("broadcast rhs");
    let mut out = Array2::zeros(dim);
    ndarray::azip!((o in &mut out, &x in &av, &y in &bv) *o = f(x, y));
    out
}

fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g),
    }
}

/// Log-sum-exp of each row, computed against the row max.
fn row_lse(logits: &Array2<f64>) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            m + s.ln()
        })
        .collect()
}

/// Row-wise softmax; a value helper, not a tape op.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let lse = row_lse(logits);
    let mut out = logits.clone();
    for (mut row, l) in out.rows_mut().into_iter().zip(lse) {
        row.mapv_inplace(|x| (x - l).exp());
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar read on non-scalar node");
        val[[0, 0]]
    }

    pub fn dim(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Tracked leaf for a named model parameter. Repeated binds of the same
    /// name return the same node so gradient contributions accumulate.
    pub fn param(&mut self, ps: &ParamSet, name: &str) -> Result<Var, ModelError> {
        if let Some(&idx) = self.tracked.get(name) {
            return Ok(Var(idx));
        }
        let value = ps.require(name)?.clone();
        let v = self.push(value, Op::Param, true);
        self.tracked.insert(name.to_string(), v.0);
        Ok(v)
    }

    /// Untracked leaf holding a copy of a named parameter: its value enters
    /// the graph, gradient does not reach it. This is the stop-gradient bind
    /// used to train one side of an adversarial pair at a time.
    pub fn frozen(&mut self, ps: &ParamSet, name: &str) -> Result<Var, ModelError> {
        let value = ps.require(name)?.clone();
        Ok(self.push(value, Op::Constant, false))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// Copies a node's value into a fresh constant leaf, cutting the
    /// gradient path through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = bin_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = bin_broadcast(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = bin_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.dim(a);
        let (br, bc) = self.dim(b);
        assert_eq!(ac, br, "matmul inner dims {ar}x{ac} . {br}x{bc}");
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let ng = self.ng(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let ng = self.ng(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::exp);
        let ng = self.ng(x);
        self.push(value, Op::Exp(x), ng)
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let value = self.value(x).mapv(|v| mul * v + add);
        let ng = self.ng(x);
        self.push(value, Op::Affine { x, mul }, ng)
    }

    pub fn scale(&mut self, x: Var, mul: f64) -> Var {
        self.affine(x, mul, 0.0)
    }

    /// Gathers rows of `src` by index; duplicates allowed. With a parameter
    /// table as `src` this is an embedding lookup, with an activation matrix
    /// it is a row-select (used for conv windows and per-example pooling).
    pub fn rows(&mut self, src: Var, ids: &[usize]) -> Var {
        let s = self.value(src);
        let cols = s.ncols();
        let mut value = Array2::zeros((ids.len(), cols));
        for (out_i, &id) in ids.iter().enumerate() {
            assert!(id < s.nrows(), "row id {id} out of range {}", s.nrows());
            value.row_mut(out_i).assign(&s.row(id));
        }
        let ng = self.ng(src);
        self.push(
            value,
            Op::Rows {
                src,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.dim(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.dim(p).1).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), rows, "concat_cols row mismatch");
            value
                .slice_mut(ndarray::s![.., at..at + pv.ncols()])
                .assign(pv);
            at += pv.ncols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.dim(parts[0]).1;
        let rows: usize = parts.iter().map(|&p| self.dim(p).0).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.ncols(), cols, "concat_rows col mismatch");
            value
                .slice_mut(ndarray::s![at..at + pv.nrows(), ..])
                .assign(pv);
            at += pv.nrows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Elementwise maximum over same-shaped inputs. Backward routes each
    /// element's gradient to the first input attaining the maximum, so ties
    /// resolve deterministically.
    pub fn max_many(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let dim = self.dim(parts[0]);
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            assert_eq!(self.dim(p), dim, "max_many shape mismatch");
            ndarray::azip!((o in &mut value, &x in self.value(p)) *o = o.max(x));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::MaxMany(parts.to_vec()), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::SumAll(x), ng)
    }

    /// Weighted row-wise cross entropy against integer targets:
    /// `sum_b row_w[b] * (lse(logits[b]) - logits[b][targets[b]])`.
    pub fn ce_rows(&mut self, logits: Var, targets: &[usize], row_w: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), row_w.len());
        let lse = row_lse(lv);
        let mut total = 0.0;
        for (b, (&t, &w)) in targets.iter().zip(row_w).enumerate() {
            assert!(t < lv.ncols(), "target {t} out of range {}", lv.ncols());
            total += w * (lse[b] - lv[[b, t]]);
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CeRows {
                logits,
                targets: targets.to_vec(),
                row_w: row_w.to_vec(),
            },
            ng,
        )
    }

    /// Weighted row-wise cross entropy against full target distributions:
    /// `sum_b row_w[b] * (lse(logits[b]) - sum_j target[b][j] * logits[b][j])`.
    /// Each target row must sum to 1.
    pub fn ce_dist(&mut self, logits: Var, target: &Array2<f64>, row_w: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), target.dim());
        assert_eq!(lv.nrows(), row_w.len());
        let lse = row_lse(lv);
        let mut total = 0.0;
        for b in 0..lv.nrows() {
            let dot: f64 = lv.row(b).iter().zip(target.row(b)).map(|(&x, &t)| t * x).sum();
            total += row_w[b] * (lse[b] - dot);
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CeDist {
                logits,
                target: target.clone(),
                row_w: row_w.to_vec(),
            },
            ng,
        )
    }

    /// Weighted row-wise softmax entropy:
    /// `sum_b row_w[b] * H(softmax(logits[b]))`, `H(p) = -sum_j p_j ln p_j`.
    pub fn entropy_rows(&mut self, logits: Var, row_w: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), row_w.len());
        let lse = row_lse(lv);
        let mut total = 0.0;
        for b in 0..lv.nrows() {
            let dot: f64 = lv
                .row(b)
                .iter()
                .map(|&x| (x - lse[b]).exp() * x)
                .sum();
            total += row_w[b] * (lse[b] - dot);
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::EntropyRows {
                logits,
                row_w: row_w.to_vec(),
            },
            ng,
        )
    }

    /// Weighted binary cross entropy on a column of logits against
    /// probabilities in `[0,1]`: `sum_b row_w[b] * bce(logits[b], targets[b])`.
    pub fn bce_rows(&mut self, logits: Var, targets: &[f64], row_w: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.ncols(), 1, "bce_rows expects a [B,1] logit column");
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), row_w.len());
        let mut total = 0.0;
        for b in 0..lv.nrows() {
            let l = lv[[b, 0]];
            let y = targets[b];
            total += row_w[b] * (l.max(0.0) - l * y + (-l.abs()).exp().ln_1p());
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::BceRows {
                logits,
                targets: targets.to_vec(),
                row_w: row_w.to_vec(),
            },
            ng,
        )
    }

    /// Sum of several scalars (fold of [`Tape::add`]).
    pub fn add_many(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = parts[0];
        for &p in &parts[1..] {
            out = self.add(out, p);
        }
        out
    }

    /// Runs backward from a scalar root and returns gradients aligned with
    /// `ps`: zero matrices for parameters the graph never touched.
    pub fn grads(&self, root: Var, ps: &ParamSet) -> ParamSet {
        assert_eq!(self.dim(root), (1, 1), "backward root must be scalar");
        let mut bufs: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        bufs[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = bufs[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut bufs);
            if matches!(self.nodes[idx].op, Op::Param) {
                bufs[idx] = Some(g);
            }
        }

        let mut out = ps.zeros_like();
        for (name, &idx) in &self.tracked {
            if let Some(g) = bufs[idx].take() {
                if let Some(slot) = out.get_mut(name) {
                    *slot = g;
                }
            }
        }
        out
    }

    fn backprop_node(&self, idx: usize, g: &Array2<f64>, bufs: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::Add(a, b) => {
                if self.ng(*a) {
                    acc(&mut bufs[a.0], reduce_to(g, self.dim(*a)));
                }
                if self.ng(*b) {
                    acc(&mut bufs[b.0], reduce_to(g, self.dim(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    acc(&mut bufs[a.0], reduce_to(g, self.dim(*a)));
                }
                if self.ng(*b) {
                    acc(&mut bufs[b.0], reduce_to(&g.mapv(|x| -x), self.dim(*b)));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let gb = bin_broadcast(g, self.value(*b), |x, y| x * y);
                    acc(&mut bufs[a.0], reduce_to(&gb, self.dim(*a)));
                }
                if self.ng(*b) {
                    let ga = bin_broadcast(g, self.value(*a), |x, y| x * y);
                    acc(&mut bufs[b.0], reduce_to(&ga, self.dim(*b)));
                }
            }
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(&mut bufs[a.0], g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(&mut bufs[b.0], self.value(*a).t().dot(g));
                }
            }
            Op::Sigmoid(x) => {
                if self.ng(*x) {
                    let dy = node.value.mapv(|v| v * (1.0 - v));
                    acc(&mut bufs[x.0], bin_broadcast(g, &dy, |a, b| a * b));
                }
            }
            Op::Tanh(x) => {
                if self.ng(*x) {
                    let y = &node.value;
                    let gx = bin_broadcast(g, &y.mapv(|v| 1.0 - v * v), |a, b| a * b);
                    acc(&mut bufs[x.0], gx);
                }
            }
            Op::Relu(x) => {
                if self.ng(*x) {
                    let mask = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut bufs[x.0], bin_broadcast(g, &mask, |a, b| a * b));
                }
            }
            Op::Exp(x) => {
                if self.ng(*x) {
                    acc(&mut bufs[x.0], bin_broadcast(g, &node.value, |a, b| a * b));
                }
            }
            Op::Affine { x, mul, .. } => {
                if self.ng(*x) {
                    acc(&mut bufs[x.0], g.mapv(|v| v * mul));
                }
            }
            Op::Rows { src, ids } => {
                if self.ng(*src) {
                    let mut gs = Array2::zeros(self.dim(*src));
                    for (out_i, &id) in ids.iter().enumerate() {
                        let mut row = gs.row_mut(id);
                        row += &g.row(out_i);
                    }
                    acc(&mut bufs[src.0], gs);
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.dim(p).1;
                    if self.ng(p) {
                        let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        acc(&mut bufs[p.0], gp);
                    }
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let h = self.dim(p).0;
                    if self.ng(p) {
                        let gp = g.slice(ndarray::s![at..at + h, ..]).to_owned();
                        acc(&mut bufs[p.0], gp);
                    }
                    at += h;
                }
            }
            Op::MaxMany(parts) => {
                let out = &node.value;
                let mut claimed = Array2::<f64>::zeros(out.dim());
                for &p in parts {
                    let pv = self.value(p);
                    let mut mask = Array2::<f64>::zeros(out.dim());
                    ndarray::azip!((m in &mut mask, &x in pv, &o in out, c in &mut claimed) {
                        if *c == 0.0 && x == o {
                            *m = 1.0;
                            *c = 1.0;
                        }
                    });
                    if self.ng(p) {
                        acc(&mut bufs[p.0], bin_broadcast(g, &mask, |a, b| a * b));
                    }
                }
            }
            Op::SumAll(x) => {
                if self.ng(*x) {
                    let gx = Array2::from_elem(self.dim(*x), g[[0, 0]]);
                    acc(&mut bufs[x.0], gx);
                }
            }
            Op::CeRows {
                logits,
                targets,
                row_w,
            } => {
                if self.ng(*logits) {
                    let gs = g[[0, 0]];
                    let mut gl = softmax_rows(self.value(*logits));
                    for (b, (&t, &w)) in targets.iter().zip(row_w).enumerate() {
                        gl[[b, t]] -= 1.0;
                        let mut row = gl.row_mut(b);
                        row.mapv_inplace(|v| v * w * gs);
                    }
                    acc(&mut bufs[logits.0], gl);
                }
            }
            Op::CeDist {
                logits,
                target,
                row_w,
            } => {
                if self.ng(*logits) {
                    let gs = g[[0, 0]];
                    let mut gl = softmax_rows(self.value(*logits));
                    gl -= target;
                    for (b, &w) in row_w.iter().enumerate() {
                        let mut row = gl.row_mut(b);
                        row.mapv_inplace(|v| v * w * gs);
                    }
                    acc(&mut bufs[logits.0], gl);
                }
            }
            Op::EntropyRows { logits, row_w } => {
                if self.ng(*logits) {
                    let gs = g[[0, 0]];
                    let lv = self.value(*logits);
                    let lse = row_lse(lv);
                    let mut gl = Array2::zeros(lv.dim());
                    for b in 0..lv.nrows() {
                        let h: f64 = lse[b]
                            - lv
                                .row(b)
                                .iter()
                                .map(|&x| (x - lse[b]).exp() * x)
                                .sum::<f64>();
                        for j in 0..lv.ncols() {
                            let lnp = lv[[b, j]] - lse[b];
                            let p = lnp.exp();
                            gl[[b, j]] = -row_w[b] * gs * p * (lnp + h);
                        }
                    }
                    acc(&mut bufs[logits.0], gl);
                }
            }
            Op::BceRows {
                logits,
                targets,
                row_w,
            } => {
                if self.ng(*logits) {
                    let gs = g[[0, 0]];
                    let lv = self.value(*logits);
                    let mut gl = Array2::zeros(lv.dim());
                    for b in 0..lv.nrows() {
                        let p = 1.0 / (1.0 + (-lv[[b, 0]]).exp());
                        gl[[b, 0]] = row_w[b] * gs * (p - targets[b]);
                    }
                    acc(&mut bufs[logits.0], gl);
                }
            }
        }
    }
}
