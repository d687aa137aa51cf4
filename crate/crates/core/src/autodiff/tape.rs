//! A small reverse-mode tape over vector-valued nodes.
//!
//! Only the primitives the alignment model needs are supported. Nodes are
//! appended in evaluation order, so the node list is already topologically
//! sorted and the backward pass simply walks it in reverse.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, COS_EPS};

/// Probabilities below this are clamped before taking logs in [`Tape::kl`].
pub const KL_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Row { src: NodeId, index: usize },
    MatVec { mat: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    WeightedSum(Vec<(NodeId, f64)>),
    Concat(Vec<NodeId>),
    SlotCosine { slots: NodeId, query: NodeId },
    Softmax { input: NodeId, scale: f64 },
    SlotSum { slots: NodeId, weights: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp { input: NodeId, scale: f64 },
    Dot(NodeId, NodeId),
    SqDist(NodeId, NodeId),
    Kl { p: NodeId, q: NodeId },
    Mix { alpha: NodeId, a: NodeId, b: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Row { .. } => "row",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::WeightedSum(..) => "weighted_sum",
            Op::Concat(..) => "concat",
            Op::SlotCosine { .. } => "slot_cosine",
            Op::Softmax { .. } => "softmax",
            Op::SlotSum { .. } => "slot_sum",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp { .. } => "exp",
            Op::Dot(..) => "dot",
            Op::SqDist(..) => "sq_dist",
            Op::Kl { .. } => "kl",
            Op::Mix { .. } => "mix",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape after one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> &[f64] {
        &self.adjoints[id.0]
    }

    pub fn take(&mut self, id: NodeId) -> Vec<f64> {
        std::mem::take(&mut self.adjoints[id.0])
    }
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node { op, rows, cols, value });
        Ok(NodeId(id))
    }

    fn vector(&mut self, op: Op, value: Vec<f64>) -> Result<NodeId> {
        let n = value.len();
        self.push(op, n, 1, value)
    }

    fn same_len(&self, a: NodeId, b: NodeId, what: &str) -> Result<usize> {
        let (la, lb) = (self.len_of(a), self.len_of(b));
        if la != lb {
            return Err(Error::dim(la, lb, what.to_string()));
        }
        Ok(la)
    }

    fn scalar_check(&self, a: NodeId, what: &str) -> Result<()> {
        if self.len_of(a) != 1 {
            return Err(Error::dim(1, self.len_of(a), what.to_string()));
        }
        Ok(())
    }

    /// Leaf holding a matrix (parameters and constants alike).
    pub fn matrix(&mut self, m: &Matrix) -> Result<NodeId> {
        self.push(Op::Leaf, m.rows, m.cols, m.data.clone())
    }

    /// Leaf holding a column vector.
    pub fn leaf(&mut self, v: &[f64]) -> Result<NodeId> {
        self.vector(Op::Leaf, v.to_vec())
    }

    pub fn row(&mut self, src: NodeId, index: usize) -> Result<NodeId> {
        let n = &self.nodes[src.0];
        if index >= n.rows {
            return Err(Error::InvalidArgument(format!(
                "row {index} out of range for {} rows",
                n.rows
            )));
        }
        let v = n.value[index * n.cols..(index + 1) * n.cols].to_vec();
        self.vector(Op::Row { src, index }, v)
    }

    pub fn matvec(&mut self, mat: NodeId, x: NodeId) -> Result<NodeId> {
        let m = &self.nodes[mat.0];
        if m.cols != self.len_of(x) {
            return Err(Error::dim(m.cols, self.len_of(x), "matvec input"));
        }
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = m.value.chunks_exact(m.cols).map(|row| linalg::dot(row, xv)).collect();
        self.vector(Op::MatVec { mat, x }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "add")?;
        let v = linalg::add(self.value(a), self.value(b));
        self.vector(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "sub")?;
        let v = linalg::sub(self.value(a), self.value(b));
        self.vector(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.vector(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = linalg::scale(c, self.value(a));
        self.vector(Op::Scale(a, c), v)
    }

    /// `Σ c_k · x_k` over same-length nodes, accumulated in the given order.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::InvalidArgument("empty weighted sum".into()));
        };
        let n = self.len_of(first);
        let mut out = vec![0.0; n];
        for &(id, c) in terms {
            if self.len_of(id) != n {
                return Err(Error::dim(n, self.len_of(id), "weighted sum term"));
            }
            linalg::axpy(c, self.value(id), &mut out);
        }
        self.vector(Op::WeightedSum(terms.to_vec()), out)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.vector(Op::Concat(parts.to_vec()), out)
    }

    /// Guarded cosine similarity of `query` against every row of `slots`.
    pub fn slot_cosine(&mut self, slots: NodeId, query: NodeId) -> Result<NodeId> {
        let m = &self.nodes[slots.0];
        if m.cols != self.len_of(query) {
            return Err(Error::dim(m.cols, self.len_of(query), "slot cosine query"));
        }
        let q = &self.nodes[query.0].value;
        let out: Vec<f64> = m.value.chunks_exact(m.cols).map(|k| linalg::cosine(q, k)).collect();
        self.vector(Op::SlotCosine { slots, query }, out)
    }

    /// `softmax(scale · input)`
    pub fn softmax(&mut self, input: NodeId, scale: f64) -> Result<NodeId> {
        let v = linalg::scaled_softmax(self.value(input), scale);
        self.vector(Op::Softmax { input, scale }, v)
    }

    /// `slotsᵀ · weights`
    pub fn slot_sum(&mut self, slots: NodeId, weights: NodeId) -> Result<NodeId> {
        let m = &self.nodes[slots.0];
        if m.rows != self.len_of(weights) {
            return Err(Error::dim(m.rows, self.len_of(weights), "slot weights"));
        }
        let w = &self.nodes[weights.0].value;
        let mut out = vec![0.0; m.cols];
        for (k, wi) in m.value.chunks_exact(m.cols).zip(w) {
            linalg::axpy(*wi, k, &mut out);
        }
        self.vector(Op::SlotSum { slots, weights }, out)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.vector(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).iter().map(|&x| linalg::sigmoid(x)).collect();
        self.vector(Op::Sigmoid(a), v)
    }

    /// `exp(scale · input)`
    pub fn exp(&mut self, input: NodeId, scale: f64) -> Result<NodeId> {
        let v = self.value(input).iter().map(|x| (scale * x).exp()).collect();
        self.vector(Op::Exp { input, scale }, v)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "dot")?;
        let v = linalg::dot(self.value(a), self.value(b));
        self.vector(Op::Dot(a, b), vec![v])
    }

    /// Squared Euclidean distance `‖a − b‖²` (no averaging over the dimension).
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "sq_dist")?;
        let v = linalg::sq_dist(self.value(a), self.value(b));
        self.vector(Op::SqDist(a, b), vec![v])
    }

    /// `KL(p ‖ q) = Σ p·(ln p − ln q)` with both arguments clamped at [`KL_CLAMP`].
    pub fn kl(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        self.same_len(p, q, "kl")?;
        let v = kl_value(self.value(p), self.value(q));
        self.vector(Op::Kl { p, q }, vec![v])
    }

    /// `alpha·a + (1 − alpha)·b` for a scalar node `alpha`.
    pub fn mix(&mut self, alpha: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.scalar_check(alpha, "mix coefficient")?;
        self.same_len(a, b, "mix")?;
        let al = self.scalar(alpha);
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| al * x + (1.0 - al) * y)
            .collect();
        self.vector(Op::Mix { alpha, a, b }, v)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.len_of(root) != 1 {
            return Err(Error::dim(1, self.len_of(root), "backward root"));
        }
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[root.0][0] = 1.0;
        for idx in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[idx]);
            if g.iter().all(|&x| x == 0.0) {
                adj[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut adj);
            adj[idx] = g;
        }
        if let Some(bad) = adj.iter().position(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                node: bad,
                op: "backward",
            });
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Vec<f64>]) {
        let val = |id: NodeId| self.nodes[id.0].value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::Row { src, index } => {
                let cols = self.nodes[src.0].cols;
                linalg::axpy(1.0, g, &mut adj[src.0][index * cols..(index + 1) * cols]);
            }
            Op::MatVec { mat, x } => {
                let (rows, cols) = (self.nodes[mat.0].rows, self.nodes[mat.0].cols);
                let (w, xv) = (val(*mat), val(*x));
                for i in 0..rows {
                    linalg::axpy(g[i], xv, &mut adj[mat.0][i * cols..(i + 1) * cols]);
                }
                let gx = &mut adj[x.0];
                for i in 0..rows {
                    linalg::axpy(g[i], &w[i * cols..(i + 1) * cols], gx);
                }
            }
            Op::Add(a, b) => {
                linalg::axpy(1.0, g, &mut adj[a.0]);
                linalg::axpy(1.0, g, &mut adj[b.0]);
            }
            Op::Sub(a, b) => {
                linalg::axpy(1.0, g, &mut adj[a.0]);
                linalg::axpy(-1.0, g, &mut adj[b.0]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                for i in 0..g.len() {
                    adj[a.0][i] += g[i] * bv[i];
                    adj[b.0][i] += g[i] * av[i];
                }
            }
            Op::Scale(a, c) => linalg::axpy(*c, g, &mut adj[a.0]),
            Op::WeightedSum(terms) => {
                for (id, c) in terms {
                    linalg::axpy(*c, g, &mut adj[id.0]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    linalg::axpy(1.0, &g[off..off + n], &mut adj[p.0]);
                    off += n;
                }
            }
            Op::SlotCosine { slots, query } => {
                let cols = self.nodes[slots.0].cols;
                let (k_all, q) = (val(*slots), val(*query));
                let nq = linalg::norm(q);
                let a = nq + COS_EPS;
                let mut gq = vec![0.0; cols];
                for (i, gi) in g.iter().enumerate() {
                    if *gi == 0.0 {
                        continue;
                    }
                    let k = &k_all[i * cols..(i + 1) * cols];
                    let nk = linalg::norm(k);
                    let b = nk + COS_EPS;
                    let p = linalg::dot(k, q);
                    // d/dq: k/(ab) − p/(a²b)·q/‖q‖ ; d/dk symmetric.
                    let cq = if nq > 0.0 { p / (a * a * b * nq) } else { 0.0 };
                    let ck = if nk > 0.0 { p / (a * b * b * nk) } else { 0.0 };
                    let inv = 1.0 / (a * b);
                    let gk = &mut adj[slots.0][i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        gq[j] += gi * (k[j] * inv - cq * q[j]);
                        gk[j] += gi * (q[j] * inv - ck * k[j]);
                    }
                }
                linalg::axpy(1.0, &gq, &mut adj[query.0]);
            }
            Op::Softmax { input, scale } => {
                let y = &node.value;
                let gy = linalg::dot(g, y);
                for i in 0..y.len() {
                    adj[input.0][i] += scale * y[i] * (g[i] - gy);
                }
            }
            Op::SlotSum { slots, weights } => {
                let cols = self.nodes[slots.0].cols;
                let (k_all, w) = (val(*slots), val(*weights));
                for i in 0..w.len() {
                    let k = &k_all[i * cols..(i + 1) * cols];
                    adj[weights.0][i] += linalg::dot(k, g);
                    linalg::axpy(w[i], g, &mut adj[slots.0][i * cols..(i + 1) * cols]);
                }
            }
            Op::Relu(a) => {
                for (i, x) in val(*a).iter().enumerate() {
                    // Subgradient at 0 is 0.
                    if *x > 0.0 {
                        adj[a.0][i] += g[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                for (i, y) in node.value.iter().enumerate() {
                    adj[a.0][i] += g[i] * y * (1.0 - y);
                }
            }
            Op::Exp { input, scale } => {
                for (i, y) in node.value.iter().enumerate() {
                    adj[input.0][i] += g[i] * scale * y;
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                linalg::axpy(g[0], &bv, &mut adj[a.0]);
                linalg::axpy(g[0], &av, &mut adj[b.0]);
            }
            Op::SqDist(a, b) => {
                let d = linalg::sub(val(*a), val(*b));
                linalg::axpy(2.0 * g[0], &d, &mut adj[a.0]);
                linalg::axpy(-2.0 * g[0], &d, &mut adj[b.0]);
            }
            Op::Kl { p, q } => {
                let (pv, qv) = (val(*p).to_vec(), val(*q).to_vec());
                for i in 0..pv.len() {
                    let (pc, qc) = (pv[i].max(KL_CLAMP), qv[i].max(KL_CLAMP));
                    let dp = pc.ln() - qc.ln() + if pv[i] > KL_CLAMP { 1.0 } else { 0.0 };
                    let dq = if qv[i] > KL_CLAMP { -pv[i] / qv[i] } else { 0.0 };
                    adj[p.0][i] += g[0] * dp;
                    adj[q.0][i] += g[0] * dq;
                }
            }
            Op::Mix { alpha, a, b } => {
                let al = self.nodes[alpha.0].value[0];
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let mut ga = 0.0;
                for i in 0..g.len() {
                    ga += g[i] * (av[i] - bv[i]);
                    adj[a.0][i] += al * g[i];
                    adj[b.0][i] += (1.0 - al) * g[i];
                }
                adj[alpha.0][0] += ga;
            }
        }
    }
}

/// Clamped KL divergence, shared by the tape and the plain loss functions.
pub fn kl_value(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (pi.max(KL_CLAMP).ln() - qi.max(KL_CLAMP).ln()))
        .sum()
}
