//! Reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one loss evaluation. Leaves are
//! either tracked (parameters we want gradients for) or constant. [`Tape::detach`]
//! copies a value into a fresh constant leaf, which is how gradient routing
//! and frozen teachers are expressed: nothing upstream of a detached node can
//! receive gradient through it.

use crate::tensor::{dot, log_sum_exp, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    ScaleBy(NodeId, NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNormRows { input: NodeId, normalized: Mat, inv_std: Vec<f64> },
    NormalizeRows { input: NodeId, norms: Vec<f64>, eps: f64 },
    MeanRows(NodeId),
    SumAll(NodeId),
    SliceCols { input: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Pick { input: NodeId, index: Vec<usize> },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `id`; `None` when no path carries gradient there.
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn param(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.value(id).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_nt(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMulNt(a, b), g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Mul(a, b), g)
    }

    /// Adds the 1×n row `r` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, r: NodeId) -> NodeId {
        let row = self.value(r);
        assert_eq!(row.rows(), 1, "add_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), row.cols(), "add_row width mismatch");
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(row.as_slice()) {
                *x += b;
            }
        }
        let g = self.any_grad(&[a, r]);
        self.push(v, Op::AddRow(a, r), g)
    }

    /// Multiplies every row of `a` element-wise by the 1×n row `r`.
    pub fn mul_row(&mut self, a: NodeId, r: NodeId) -> NodeId {
        let row = self.value(r);
        assert_eq!(row.rows(), 1, "mul_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), row.cols(), "mul_row width mismatch");
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(row.as_slice()) {
                *x *= b;
            }
        }
        let g = self.any_grad(&[a, r]);
        self.push(v, Op::MulRow(a, r), g)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        let g = self.any_grad(&[a]);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let g = self.any_grad(&[a]);
        self.push(v, Op::Exp(a), g)
    }

    /// Multiplies `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let c = self.value(s).item();
        let v = self.value(a).scale(c);
        let g = self.any_grad(&[a, s]);
        self.push(v, Op::ScaleBy(a, s), g)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        let g = self.any_grad(&[a]);
        self.push(v, Op::SoftmaxRows(a), g)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax_rows(self.value(a));
        let g = self.any_grad(&[a]);
        self.push(v, Op::LogSoftmaxRows(a), g)
    }

    /// Per-row standardisation without affine terms.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut normalized = Mat::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for (o, &v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.any_grad(&[a]);
        self.push(normalized.clone(), Op::LayerNormRows { input: a, normalized, inv_std }, g)
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn normalize_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = dot(x.row(r), x.row(r)).sqrt();
            let d = n.max(eps);
            v.row_mut(r).iter_mut().for_each(|e| *e /= d);
            norms.push(n);
        }
        let g = self.any_grad(&[a]);
        self.push(v, Op::NormalizeRows { input: a, norms, eps }, g)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        let g = self.any_grad(&[a]);
        self.push(v, Op::MeanRows(a), g)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Mat::scalar(self.value(a).sum());
        let g = self.any_grad(&[a]);
        self.push(v, Op::SumAll(a), g)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_cols(start, len);
        let g = self.any_grad(&[a]);
        self.push(v, Op::SliceCols { input: a, start }, g)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        let g = self.any_grad(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Mat::vstack(&mats);
        let g = self.any_grad(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Selects `a[i, index[i]]` for each row, giving a rows×1 column.
    pub fn pick(&mut self, a: NodeId, index: &[usize]) -> NodeId {
        let m = self.value(a);
        assert_eq!(m.rows(), index.len(), "pick index length mismatch");
        let v = Mat::from_vec(index.len(), 1, index.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect());
        let g = self.any_grad(&[a]);
        self.push(v, Op::Pick { input: a, index: index.to_vec() }, g)
    }

    /// Mean of all entries as a 1×1 node.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of several 1×1 nodes.
    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let mut it = parts.iter();
        let first = *it.next().expect("sum_scalars of nothing");
        it.fold(first, |acc, &p| self.add(acc, p))
    }

    /// Mean cross-entropy of row-wise logits against integer labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let lp = self.log_softmax_rows(logits);
        let picked = self.pick(lp, labels);
        let m = self.mean_all(picked);
        self.scale(m, -1.0)
    }

    /// Reverse sweep from a 1×1 root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(Mat::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, gy: &Mat, grads: &mut [Option<Mat>]) {
        let nodes = &self.nodes;
        let mut acc = |id: NodeId, g: Mat| {
            if !nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].requires_grad {
                    acc(*a, gy.matmul_nt(&nodes[b.0].value));
                }
                if nodes[b.0].requires_grad {
                    acc(*b, nodes[a.0].value.matmul_tn(gy));
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ ⇒ da = gy b, db = gyᵀ a
                if nodes[a.0].requires_grad {
                    acc(*a, gy.matmul(&nodes[b.0].value));
                }
                if nodes[b.0].requires_grad {
                    acc(*b, gy.matmul_tn(&nodes[a.0].value));
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if nodes[a.0].requires_grad {
                    acc(*a, gy.zip_map(&nodes[b.0].value, |g, v| g * v));
                }
                if nodes[b.0].requires_grad {
                    acc(*b, gy.zip_map(&nodes[a.0].value, |g, v| g * v));
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, gy.clone());
                if nodes[r.0].requires_grad {
                    acc(*r, gy.sum_rows());
                }
            }
            Op::MulRow(a, r) => {
                let row = &nodes[r.0].value;
                if nodes[a.0].requires_grad {
                    let mut ga = gy.clone();
                    for i in 0..ga.rows() {
                        for (x, &b) in ga.row_mut(i).iter_mut().zip(row.as_slice()) {
                            *x *= b;
                        }
                    }
                    acc(*a, ga);
                }
                if nodes[r.0].requires_grad {
                    acc(*r, gy.zip_map(&nodes[a.0].value, |g, v| g * v).sum_rows());
                }
            }
            Op::Scale(a, c) => acc(*a, gy.scale(*c)),
            Op::Exp(a) => acc(*a, gy.zip_map(&node.value, |g, y| g * y)),
            Op::ScaleBy(a, s) => {
                let c = nodes[s.0].value.item();
                if nodes[a.0].requires_grad {
                    acc(*a, gy.scale(c));
                }
                if nodes[s.0].requires_grad {
                    acc(*s, Mat::scalar(dot(gy.as_slice(), nodes[a.0].value.as_slice())));
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s = dot(gy.row(r), y.row(r));
                    for ((o, &g), &p) in ga.row_mut(r).iter_mut().zip(gy.row(r)).zip(y.row(r)) {
                        *o = p * (g - s);
                    }
                }
                acc(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s: f64 = gy.row(r).iter().sum();
                    for ((o, &g), &l) in ga.row_mut(r).iter_mut().zip(gy.row(r)).zip(y.row(r)) {
                        *o = g - l.exp() * s;
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNormRows { input, normalized, inv_std } => {
                let n = normalized.cols() as f64;
                let mut ga = Mat::zeros(normalized.rows(), normalized.cols());
                for (r, &is) in inv_std.iter().enumerate() {
                    let g = gy.row(r);
                    let xh = normalized.row(r);
                    let mean_g = g.iter().sum::<f64>() / n;
                    let mean_gx = dot(g, xh) / n;
                    for ((o, &gi), &xi) in ga.row_mut(r).iter_mut().zip(g).zip(xh) {
                        *o = is * (gi - mean_g - xi * mean_gx);
                    }
                }
                acc(*input, ga);
            }
            Op::NormalizeRows { input, norms, eps } => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let g = gy.row(r);
                    if n > *eps {
                        let s = dot(g, y.row(r));
                        for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(g).zip(y.row(r)) {
                            *o = (gi - yi * s) / n;
                        }
                    } else {
                        for (o, &gi) in ga.row_mut(r).iter_mut().zip(g) {
                            *o = gi / eps;
                        }
                    }
                }
                acc(*input, ga);
            }
            Op::MeanRows(a) => {
                let rows = nodes[a.0].value.rows();
                let mut ga = Mat::zeros(rows, gy.cols());
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for (o, &g) in ga.row_mut(r).iter_mut().zip(gy.as_slice()) {
                        *o = g * inv;
                    }
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, Mat::filled(r, c, gy.item()));
            }
            Op::SliceCols { input, start } => {
                let (r, c) = nodes[input.0].value.shape();
                let mut ga = Mat::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i)[*start..*start + gy.cols()].copy_from_slice(gy.row(i));
                }
                acc(*input, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if nodes[p.0].requires_grad {
                        acc(p, gy.slice_cols(offset, w));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = nodes[p.0].value.rows();
                    if nodes[p.0].requires_grad {
                        let idx: Vec<usize> = (offset..offset + h).collect();
                        acc(p, gy.select_rows(&idx));
                    }
                    offset += h;
                }
            }
            Op::Pick { input, index } => {
                let (r, c) = nodes[input.0].value.shape();
                let mut ga = Mat::zeros(r, c);
                for (row, &col) in index.iter().enumerate() {
                    ga.set(row, col, gy.get(row, 0));
                }
                acc(*input, ga);
            }
        }
    }
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let lse = log_sum_exp(x.row(r));
        out.row_mut(r).iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    out
}

pub fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let lse = log_sum_exp(x.row(r));
        out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
    }
    out
}
