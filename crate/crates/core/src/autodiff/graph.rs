use super::tensor::{matmul_at_acc, matmul_bt_acc, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Probability clamp applied inside [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;
/// Range of log standard deviations accepted by [`Graph::gaussian_nll`].
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    L1(NodeId),
    Bce(NodeId, NodeId),
    GaussianNll(NodeId, NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so every input precedes its consumers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros if the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { op, value, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Leaf whose gradient is tracked (parameters, planned actions).
    pub fn param(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, t, true, "param")
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, t, false, "constant")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (ta.dims2(), tb.dims2());
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let v = Tensor::matrix(m, n, out)?;
        let ng = self.ng(&[a, b]);
        self.push(Op::MatMul(a, b), v, ng, "matmul")
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, name: &'static str) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.dims2() != tb.dims2() {
            return Err(mismatch(name, ta, tb));
        }
        let f: fn(f64, f64) -> f64 = match name {
            "add" => |x, y| x + y,
            "sub" => |x, y| x - y,
            _ => |x, y| x * y,
        };
        Ok((ta.zip(tb, f), self.ng(&[a, b])))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, ng) = self.elementwise(a, b, "add")?;
        self.push(Op::Add(a, b), v, ng, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, ng) = self.elementwise(a, b, "sub")?;
        self.push(Op::Sub(a, b), v, ng, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, ng) = self.elementwise(a, b, "mul")?;
        self.push(Op::Mul(a, b), v, ng, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(&[a]);
        self.push(Op::Scale(a, c), v, ng, "scale")
    }

    /// Adds a bias row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (m, n) = tx.dims2();
        if tb.len() != n {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for r in 0..m {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        let ng = self.ng(&[x, b]);
        self.push(Op::AddBias(x, b), v, ng, "add_bias")
    }

    /// `x · w + b`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let ((m, k), (k2, n)) = (tx.dims2(), tw.dims2());
        if k != k2 {
            return Err(mismatch("affine", tx, tw));
        }
        if tb.len() != n {
            return Err(mismatch("affine", tw, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(tx.data(), tw.data(), &mut out, m, k, n);
        for r in 0..m {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        let ng = self.ng(&[x, w, b]);
        self.push(Op::Affine(x, w, b), v, ng, "affine")
    }

    fn unary(&mut self, a: NodeId, op: Op, f: fn(f64) -> f64, name: &'static str) -> Result<NodeId> {
        let v = self.value(a).map(f);
        let ng = self.ng(&[a]);
        self.push(op, v, ng, name)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a), f64::tanh, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0), "relu")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), sigmoid, "sigmoid")
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a), softplus, "softplus")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::ShapeMismatch {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let m = self.value(first).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pm != m {
                return Err(mismatch("concat", self.value(first), self.value(p)));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        let ng = self.ng(parts);
        self.push(Op::Concat(parts.to_vec()), v, ng, "concat")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(a);
        let (m, n) = t.dims2();
        if start >= end || end > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{start}..{end} of {n} columns"),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let v = Tensor::matrix(m, w, out)?;
        let ng = self.ng(&[a]);
        self.push(Op::SliceCols(a, start), v, ng, "slice_cols")
    }

    /// Stacks the selected rows (repeats allowed).
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        let (m, n) = t.dims2();
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                detail: format!("row {bad} of {m}"),
            });
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(t.row_slice(r));
        }
        let v = Tensor::matrix(rows.len(), n, out)?;
        let ng = self.ng(&[a]);
        self.push(Op::GatherRows(a, rows.to_vec()), v, ng, "gather_rows")
    }

    /// Elementwise clamp; the gradient passes only inside `[lo, hi]`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(&[a]);
        self.push(Op::Clamp(a, lo, hi), v, ng, "clamp")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let ng = self.ng(&[a]);
        self.push(Op::Sum(a), v, ng, "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let ng = self.ng(&[a]);
        self.push(Op::Mean(a), v, ng, "mean")
    }

    /// Sum of absolute values.
    pub fn l1_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(a).data().iter().map(|x| x.abs()).sum());
        let ng = self.ng(&[a]);
        self.push(Op::L1(a), v, ng, "l1_norm")
    }

    /// Mean binary cross-entropy; predictions are clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, pred: NodeId, label: NodeId) -> Result<NodeId> {
        let (tp, tl) = (self.value(pred), self.value(label));
        if tp.len() != tl.len() {
            return Err(mismatch("bce", tp, tl));
        }
        let n = tp.len() as f64;
        let total: f64 = tp
            .data()
            .iter()
            .zip(tl.data())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let ng = self.ng(&[pred, label]);
        self.push(Op::Bce(pred, label), Tensor::scalar(total / n), ng, "bce")
    }

    /// Diagonal Gaussian negative log-likelihood, summed over the last axis
    /// and averaged over rows. `log_sigma` is clamped to
    /// `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub fn gaussian_nll(&mut self, x: NodeId, mu: NodeId, log_sigma: NodeId) -> Result<NodeId> {
        let (tx, tm, ts) = (self.value(x), self.value(mu), self.value(log_sigma));
        if tx.len() != tm.len() || tx.dims2() != tm.dims2() {
            return Err(mismatch("gaussian_nll", tx, tm));
        }
        if tx.len() != ts.len() {
            return Err(mismatch("gaussian_nll", tx, ts));
        }
        let rows = tx.dims2().0 as f64;
        let mut total = 0.0;
        for ((&xv, &mv), &sv) in tx.data().iter().zip(tm.data()).zip(ts.data()) {
            let ls = sv.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            let d = xv - mv;
            total += ls + HALF_LN_2PI + d * d / (2.0 * (2.0 * ls).exp());
        }
        let ng = self.ng(&[x, mu, log_sigma]);
        self.push(
            Op::GaussianNll(x, mu, log_sigma),
            Tensor::scalar(total / rows),
            ng,
            "gaussian_nll",
        )
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NotScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let like = |id: NodeId| Tensor::zeros(self.value(id).shape());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (_, n)) = (ta.dims2(), tb.dims2());
                if wants(*a) {
                    let mut da = like(*a);
                    matmul_bt_acc(g.data(), tb.data(), da.data_mut(), m, k, n);
                    acc(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = like(*b);
                    matmul_at_acc(ta.data(), g.data(), db.data_mut(), m, k, n);
                    acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, reshape_like(g, self.value(*a)));
                }
                if wants(*b) {
                    acc(grads, *b, reshape_like(g, self.value(*b)));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, reshape_like(g, self.value(*a)));
                }
                if wants(*b) {
                    acc(grads, *b, reshape_like(&g.map(|v| -v), self.value(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    acc(grads, *a, reshape_like(&g.zip(tb, |gv, bv| gv * bv), ta));
                }
                if wants(*b) {
                    acc(grads, *b, reshape_like(&g.zip(ta, |gv, av| gv * av), tb));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, *a, reshape_like(&g.map(|v| v * c), self.value(*a)));
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    acc(grads, *x, reshape_like(g, self.value(*x)));
                }
                if wants(*b) {
                    acc(grads, *b, column_sums(g, self.value(*b)));
                }
            }
            Op::Affine(x, w, b) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let ((m, k), (_, n)) = (tx.dims2(), tw.dims2());
                if wants(*x) {
                    let mut dx = like(*x);
                    matmul_bt_acc(g.data(), tw.data(), dx.data_mut(), m, k, n);
                    acc(grads, *x, dx);
                }
                if wants(*w) {
                    let mut dw = like(*w);
                    matmul_at_acc(tx.data(), g.data(), dw.data_mut(), m, k, n);
                    acc(grads, *w, dw);
                }
                if wants(*b) {
                    acc(grads, *b, column_sums(g, self.value(*b)));
                }
            }
            Op::Tanh(a) => {
                let d = g.zip(&node.value, |gv, y| gv * (1.0 - y * y));
                acc(grads, *a, reshape_like(&d, self.value(*a)));
            }
            Op::Relu(a) => {
                let d = g.zip(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                acc(grads, *a, reshape_like(&d, self.value(*a)));
            }
            Op::Sigmoid(a) => {
                let d = g.zip(&node.value, |gv, y| gv * y * (1.0 - y));
                acc(grads, *a, reshape_like(&d, self.value(*a)));
            }
            Op::Softplus(a) => {
                let d = g.zip(self.value(*a), |gv, x| gv * sigmoid(x));
                acc(grads, *a, reshape_like(&d, self.value(*a)));
            }
            Op::Concat(parts) => {
                let (m, n) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).dims2().1;
                    if wants(p) {
                        let mut d = Vec::with_capacity(m * pn);
                        for r in 0..m {
                            d.extend_from_slice(&g.data()[r * n + offset..r * n + offset + pn]);
                        }
                        let t = Tensor::new(self.value(p).shape().to_vec(), d).expect("concat grad");
                        acc(grads, p, t);
                    }
                    offset += pn;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let w = g.dims2().1;
                let mut d = like(*a);
                for r in 0..m {
                    d.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row_slice(r));
                }
                acc(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let n = self.value(*a).dims2().1;
                let mut d = like(*a);
                for (i, &r) in rows.iter().enumerate() {
                    for (o, &gv) in d.data_mut()[r * n..(r + 1) * n].iter_mut().zip(g.row_slice(i)) {
                        *o += gv;
                    }
                }
                acc(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip(self.value(*a), |gv, x| if x >= lo && x <= hi { gv } else { 0.0 });
                acc(grads, *a, reshape_like(&d, self.value(*a)));
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                acc(grads, *a, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            Op::L1(a) => {
                let gv = g.item();
                let d = self.value(*a).map(|x| gv * sign(x));
                acc(grads, *a, d);
            }
            Op::Bce(pred, label) => {
                let (tp, tl) = (self.value(*pred), self.value(*label));
                let scale = g.item() / tp.len() as f64;
                if wants(*pred) {
                    let d = tp.zip(tl, |p, y| {
                        if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            scale * (-y / p + (1.0 - y) / (1.0 - p))
                        } else {
                            0.0
                        }
                    });
                    acc(grads, *pred, d);
                }
                if wants(*label) {
                    let d = tp.map(|p| {
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        -scale * (p.ln() - (1.0 - p).ln())
                    });
                    acc(grads, *label, reshape_like(&d, tl));
                }
            }
            Op::GaussianNll(x, mu, ls) => {
                let (tx, tm, ts) = (self.value(*x), self.value(*mu), self.value(*ls));
                let scale = g.item() / tx.dims2().0 as f64;
                let n = tx.len();
                let mut dx = Vec::with_capacity(n);
                let mut dls = Vec::with_capacity(n);
                for i in 0..n {
                    let raw = ts.data()[i];
                    let s = raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
                    let inv_var = (-2.0 * s).exp();
                    let d = tx.data()[i] - tm.data()[i];
                    dx.push(scale * d * inv_var);
                    let inside = (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw);
                    dls.push(if inside { scale * (1.0 - d * d * inv_var) } else { 0.0 });
                }
                if wants(*x) {
                    acc(
                        grads,
                        *x,
                        Tensor::new(tx.shape().to_vec(), dx.clone()).expect("nll grad"),
                    );
                }
                if wants(*mu) {
                    let dm: Vec<f64> = dx.iter().map(|v| -v).collect();
                    acc(grads, *mu, Tensor::new(tm.shape().to_vec(), dm).expect("nll grad"));
                }
                if wants(*ls) {
                    acc(grads, *ls, Tensor::new(ts.shape().to_vec(), dls).expect("nll grad"));
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reshape_like(g: &Tensor, target: &Tensor) -> Tensor {
    Tensor::new(target.shape().to_vec(), g.data().to_vec()).expect("same element count")
}

fn column_sums(g: &Tensor, bias: &Tensor) -> Tensor {
    let (m, n) = g.dims2();
    let mut out = vec![0.0; n];
    for r in 0..m {
        for (o, &v) in out.iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::new(bias.shape().to_vec(), out).expect("bias shape")
}
