//! Tape-recorded computation graph with reverse-mode gradients.
//!
//! Every op appends one node holding its forward value. Nodes are created in
//! topological order by construction, so `backward` is a single reverse sweep.
//! Reductions accumulate in `f64` regardless of the storage type and always in
//! index order, which keeps repeated runs bitwise identical.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    AddRow { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Log { a: Var, floor: f64 },
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Mean(Var),
    Sum(Var),
    WeightedSum { a: Var, w: Vec<f64> },
    SqDist(Var, Var),
    SqrtFloor { a: Var, floor: f64 },
    Recip(Var),
    NormalizeRows(Var),
    Pick { a: Var, idx: Vec<usize> },
    StraightThrough { soft: Var },
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op,
    needs_grad: bool,
}

/// Which store parameters receive gradients when bound into a graph.
#[derive(Clone, Debug)]
enum Trainable {
    All,
    Only(HashSet<ParamId>),
}

#[derive(Debug)]
pub struct Graph<R = f32> {
    nodes: Vec<Node<R>>,
    bound: HashMap<ParamId, Var>,
    trainable: Trainable,
    st_log: Vec<StRecord<R>>,
    st_reference: Option<Vec<StRecord<R>>>,
}

/// Hard choice and surrogate value of one straight-through node.
#[derive(Clone, Debug, PartialEq)]
pub struct StRecord<R> {
    pub hard: Vec<usize>,
    pub soft: Tensor<R>,
}

/// Gradients of a scalar loss with respect to every grad-requiring leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients<R = f32> {
    by_var: HashMap<Var, Tensor<R>>,
    by_param: BTreeMap<ParamId, Tensor<R>>,
}

impl<R: Real> Gradients<R> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<R>> {
        self.by_var.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.by_param.get(&id)
    }

    /// Parameter gradients in ascending id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<R>)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Tensor::is_finite)
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!(
            "{op}: shape mismatch {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

impl<R: Real> Graph<R> {
    /// Graph in which every bound parameter is trainable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            trainable: Trainable::All,
            st_log: Vec::new(),
            st_reference: None,
        }
    }

    /// Graph in which only the listed parameters receive gradients; all
    /// others are bound as constants.
    pub fn restricted(ids: impl IntoIterator<Item = ParamId>) -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            trainable: Trainable::Only(ids.into_iter().collect()),
            st_log: Vec::new(),
            st_reference: None,
        }
    }

    /// Graph with no trainable parameters (evaluation only).
    pub fn inference() -> Self {
        Self::restricted(std::iter::empty())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<R>, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op_name,
                detail: format!("non-finite output of shape {:?}", value.shape()),
            });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor<R>, requires_grad: bool, param: Option<ParamId>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: "leaf",
                detail: "non-finite input".into(),
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param },
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<R>) -> Result<Var> {
        self.push_leaf(value, false, None)
    }

    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Result<Var> {
        self.push_leaf(value, requires_grad, None)
    }

    /// Bind a stored parameter. Binding the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let trainable = match &self.trainable {
            Trainable::All => true,
            Trainable::Only(set) => set.contains(&id),
        };
        let v = self.push_leaf(store.get(id).clone(), trainable, Some(id))?;
        self.bound.insert(id, v);
        Ok(v)
    }

    // ---- forward ops -------------------------------------------------

    /// `a [m,k] · b [k,n]`. Zero entries of `a` are skipped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::contract(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (av.rows(), bv.cols());
        let out = matmul_rows(av.data(), bv.data(), None, m, av.cols(), n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `x [m,k] · w [k,n] + b [n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || xv.cols() != wv.rows() || bv.numel() != wv.cols() {
            return Err(Error::contract(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (xv.rows(), wv.cols());
        let out = matmul_rows(xv.data(), wv.data(), Some(bv.data()), m, xv.cols(), n);
        self.push("affine", Tensor::new(vec![m, n], out)?, Op::Affine { x, w, b }, &[x, w, b])
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.numel() != xv.cols() {
            return Err(Error::contract(format!(
                "add_row: x {:?}, b {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % c])
            .collect();
        let shape = xv.shape().to_vec();
        self.push("add_row", Tensor::new(shape, data)?, Op::AddRow { x, b }, &[x, b])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(R, R) -> R, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(name, av.shape(), bv.shape())?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(name, Tensor::new(shape, data)?, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(R) -> R, op: Op) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let shape = av.shape().to_vec();
        self.push(name, Tensor::new(shape, data)?, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let rc = R::of(c);
        self.map("scale", a, |x| x * rc, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x > R::zero() { x } else { R::zero() }, Op::Relu(a))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, |x| R::of(softplus(x.f64())), Op::Softplus(a))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        let fl = R::of(floor);
        self.map("log", a, |x| x.max(fl).ln(), Op::Log { a, floor })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Vec::with_capacity(av.numel());
        for row in av.data().chunks(c) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let e: Vec<f64> = row.iter().map(|v| (v.f64() - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| R::of(v / s)));
        }
        let shape = av.shape().to_vec();
        self.push("softmax", Tensor::new(shape, out)?, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Vec::with_capacity(av.numel());
        for row in av.data().chunks(c) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let lse = mx + row.iter().map(|v| (v.f64() - mx).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| R::of(v.f64() - lse)));
        }
        let shape = av.shape().to_vec();
        self.push("log_softmax", Tensor::new(shape, out)?, Op::LogSoftmax(a), &[a])
    }

    /// Concatenation along the last axis; all parts must share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != m {
                return Err(Error::contract(format!(
                    "concat: row count {} vs {}",
                    pv.rows(),
                    m
                )));
            }
            total += pv.cols();
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat", Tensor::new(vec![m, total], out)?, Op::Concat(parts.to_vec()), parts)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s: f64 = av.data().iter().map(|v| v.f64()).sum();
        let n = av.numel() as f64;
        self.push("mean", Tensor::scalar(R::of(s / n)), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|v| v.f64()).sum();
        self.push("sum", Tensor::scalar(R::of(s)), Op::Sum(a), &[a])
    }

    /// `Σ_i w_i a_i` over all elements of `a`, with constant weights.
    pub fn weighted_sum(&mut self, a: Var, w: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if w.len() != av.numel() {
            return Err(Error::contract(format!(
                "weighted_sum: {} weights for {} values",
                w.len(),
                av.numel()
            )));
        }
        let s: f64 = av.data().iter().zip(&w).map(|(v, w)| v.f64() * w).sum();
        self.push("weighted_sum", Tensor::scalar(R::of(s)), Op::WeightedSum { a, w }, &[a])
    }

    /// Pairwise squared Euclidean distances between rows: `a [m,d]`, `b [n,d]` -> `[m,n]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::contract(format!(
                "sq_dist: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (av.rows(), bv.rows());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let ra = av.row(i);
            for j in 0..n {
                let d: f64 = ra
                    .iter()
                    .zip(bv.row(j))
                    .map(|(x, y)| {
                        let t = x.f64() - y.f64();
                        t * t
                    })
                    .sum();
                out.push(R::of(d));
            }
        }
        self.push("sq_dist", Tensor::new(vec![m, n], out)?, Op::SqDist(a, b), &[a, b])
    }

    /// `max(sqrt(x), floor)`; turns squared distances into floored distances.
    pub fn sqrt_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.map(
            "sqrt_floor",
            a,
            |x| R::of(x.f64().max(0.0).sqrt().max(floor)),
            Op::SqrtFloor { a, floor },
        )
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.map("recip", a, |x| R::one() / x, Op::Recip(a))
    }

    /// Divides every row by its sum.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Vec::with_capacity(av.numel());
        for row in av.data().chunks(c) {
            let s: f64 = row.iter().map(|v| v.f64()).sum();
            out.extend(row.iter().map(|v| R::of(v.f64() / s)));
        }
        let shape = av.shape().to_vec();
        self.push("normalize_rows", Tensor::new(shape, out)?, Op::NormalizeRows(a), &[a])
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if idx.len() != av.rows() || idx.iter().any(|&j| j >= c) {
            return Err(Error::contract(format!(
                "pick: {} indices for {:?}",
                idx.len(),
                av.shape()
            )));
        }
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| av.data()[i * c + j])
            .collect();
        self.push(
            "pick",
            Tensor::new(vec![idx.len()], out)?,
            Op::Pick {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    /// Straight-through estimator: the forward value is the one-hot of `hard`,
    /// the backward pass hands the incoming gradient unchanged to `soft`.
    ///
    /// Under [`Graph::freeze_straight_through`] the k-th call instead yields
    /// `onehot(hard_k) + soft - soft_k` from the k-th reference record: equal
    /// to the reference one-hot at the reference point, with the surrogate's
    /// first-order variation around it.
    pub fn straight_through(&mut self, soft: Var, hard: &[usize]) -> Result<Var> {
        let sv = self.value(soft).clone();
        let c = sv.cols();
        if hard.len() != sv.rows() || hard.iter().any(|&j| j >= c) {
            return Err(Error::contract(format!(
                "straight_through: {} indices for {:?}",
                hard.len(),
                sv.shape()
            )));
        }
        let k = self.st_log.len();
        self.st_log.push(StRecord {
            hard: hard.to_vec(),
            soft: sv.clone(),
        });
        let mut out = vec![R::zero(); sv.numel()];
        let hard = match &self.st_reference {
            Some(refs) => {
                let r = refs.get(k).ok_or_else(|| Error::contract("missing straight-through reference"))?;
                if r.soft.shape() != sv.shape() {
                    return Err(Error::contract("straight-through reference shape mismatch"));
                }
                for ((o, s), s0) in out.iter_mut().zip(sv.data()).zip(r.soft.data()) {
                    *o = *s - *s0;
                }
                r.hard.clone()
            }
            None => hard.to_vec(),
        };
        for (i, &j) in hard.iter().enumerate() {
            out[i * c + j] = out[i * c + j] + R::one();
        }
        let shape = sv.shape().to_vec();
        self.push("straight_through", Tensor::new(shape, out)?, Op::StraightThrough { soft }, &[soft])
    }

    /// Straight-through records of this graph, in creation order.
    pub fn straight_through_log(&self) -> &[StRecord<R>] {
        &self.st_log
    }

    /// Makes later straight-through nodes follow `records` (see
    /// [`Graph::straight_through`]).
    pub fn freeze_straight_through(&mut self, records: Vec<StRecord<R>>) {
        self.st_reference = Some(records);
    }

    // ---- backward ----------------------------------------------------

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward on non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<R>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![R::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = node.value.data();
            match &node.op {
                Op::Leaf { param } => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    if let Some(p) = param {
                        out.by_param.insert(*p, t.clone());
                    }
                    out.by_var.insert(Var(i), t);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.requires_grad(*a) {
                        let d = grad_lhs(&g, bv.data(), m, k, n);
                        self.acc(&mut grads, *a, d);
                    }
                    if self.requires_grad(*b) {
                        let d = grad_rhs(av.data(), &g, m, k, n);
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                    if self.requires_grad(*x) {
                        let d = grad_lhs(&g, wv.data(), m, k, n);
                        self.acc(&mut grads, *x, d);
                    }
                    if self.requires_grad(*w) {
                        let d = grad_rhs(xv.data(), &g, m, k, n);
                        self.acc(&mut grads, *w, d);
                    }
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, col_sums(&g, n));
                    }
                }
                Op::AddRow { x, b } => {
                    let n = self.value(*x).cols();
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, col_sums(&g, n));
                    }
                    self.acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *b, g.clone());
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *b, g.iter().map(|&v| -v).collect());
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        self.acc(&mut grads, *a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                    }
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, g.iter().zip(av).map(|(&g, &x)| g * x).collect());
                    }
                }
                Op::Scale(a, c) => {
                    let c = R::of(*c);
                    self.acc(&mut grads, *a, g.iter().map(|&v| v * c).collect());
                }
                Op::Tanh(a) => {
                    let d = g.iter().zip(y).map(|(&g, &y)| g * (R::one() - y * y)).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > R::zero() { g } else { R::zero() })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| R::of(g.f64() * sigmoid(x.f64())))
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Log { a, floor } => {
                    let x = self.value(*a).data();
                    let fl = R::of(*floor);
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > fl { g / x } else { R::zero() })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let c = node.value.cols();
                    let mut d = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(c).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g.f64() * y.f64()).sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| R::of(y.f64() * (g.f64() - dot))));
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let c = node.value.cols();
                    let mut d = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(c).zip(y.chunks(c)) {
                        let gs: f64 = gr.iter().map(|g| g.f64()).sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| R::of(g.f64() - y.f64().exp() * gs)));
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let total = node.value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.requires_grad(p) {
                            let d = g
                                .chunks(total)
                                .flat_map(|row| row[off..off + c].iter().copied())
                                .collect();
                            self.acc(&mut grads, p, d);
                        }
                        off += c;
                    }
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    let v = R::of(g[0].f64() / n as f64);
                    self.acc(&mut grads, *a, vec![v; n]);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    self.acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::WeightedSum { a, w } => {
                    let g0 = g[0].f64();
                    self.acc(&mut grads, *a, w.iter().map(|w| R::of(g0 * w)).collect());
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, n, dim) = (av.rows(), bv.rows(), av.cols());
                    let mut da = vec![0.0f64; m * dim];
                    let mut db = vec![0.0f64; n * dim];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j].f64();
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..dim {
                                let t = 2.0 * gij * (av.data()[i * dim + k].f64() - bv.data()[j * dim + k].f64());
                                da[i * dim + k] += t;
                                db[j * dim + k] -= t;
                            }
                        }
                    }
                    if self.requires_grad(*a) {
                        self.acc(&mut grads, *a, da.into_iter().map(R::of).collect());
                    }
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, db.into_iter().map(R::of).collect());
                    }
                }
                Op::SqrtFloor { a, floor } => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| {
                            let r = x.f64().max(0.0).sqrt();
                            if r > *floor {
                                R::of(g.f64() / (2.0 * r))
                            } else {
                                R::zero()
                            }
                        })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Recip(a) => {
                    let d = g.iter().zip(y).map(|(&g, &y)| -g * y * y).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut d = Vec::with_capacity(g.len());
                    for ((gr, yr), xr) in g.chunks(c).zip(y.chunks(c)).zip(x.data().chunks(c)) {
                        let s: f64 = xr.iter().map(|v| v.f64()).sum();
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g.f64() * y.f64()).sum();
                        d.extend(gr.iter().map(|g| R::of((g.f64() - dot) / s)));
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Pick { a, idx } => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut d = vec![R::zero(); av.numel()];
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * c + j] = g[i];
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::StraightThrough { soft } => {
                    self.acc(&mut grads, *soft, g);
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<R>>], v: Var, d: Vec<R>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(d) {
                    *e = *e + x;
                }
            }
            slot @ None => *slot = Some(d),
        }
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `a [m,k] · b [k,n] (+ bias)`, skipping zero entries of `a`.
fn matmul_rows<R: Real>(a: &[R], b: &[R], bias: Option<&[R]>, m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        match bias {
            Some(bias) => acc.iter_mut().zip(bias).for_each(|(a, b)| *a = b.f64()),
            None => acc.fill(0.0),
        }
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == R::zero() {
                continue;
            }
            let av = av.f64();
            for (o, &bv) in acc.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                *o += av * bv.f64();
            }
        }
        out.extend(acc.iter().map(|&v| R::of(v)));
    }
    out
}

/// `g [m,n] · bᵀ` -> `[m,k]`.
fn grad_lhs<R: Real>(g: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let br = &b[kk * n..(kk + 1) * n];
            let s: f64 = gr.iter().zip(br).map(|(x, y)| x.f64() * y.f64()).sum();
            out.push(R::of(s));
        }
    }
    out
}

/// `aᵀ · g` -> `[k,n]`, skipping zero entries of `a`.
fn grad_rhs<R: Real>(a: &[R], g: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == R::zero() {
                continue;
            }
            let av = av.f64();
            for (o, gv) in acc[kk * n..(kk + 1) * n].iter_mut().zip(gr) {
                *o += av * gv.f64();
            }
        }
    }
    acc.into_iter().map(R::of).collect()
}

fn col_sums<R: Real>(g: &[R], n: usize) -> Vec<R> {
    let mut acc = vec![0.0f64; n];
    for row in g.chunks(n) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.f64();
        }
    }
    acc.into_iter().map(R::of).collect()
}
