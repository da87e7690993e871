//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! the op kind, parent ids and the forward value. Nodes only ever reference
//! earlier nodes, so insertion order is a topological order and
//! [`Graph::backward`] is a single reverse sweep that visits each node once.

use super::tensor::Tensor;
use super::AdError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input leaf; `param` is the index in the bound parameter list.
    Leaf { param: Option<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    /// a * x + b elementwise with constants; only the slope matters backward.
    Affine { x: NodeId, a: f64 },
    /// (B,n) + (1,n) with the row broadcast over the batch.
    AddRow { x: NodeId, row: NodeId },
    /// Concatenation along columns.
    Concat { parts: Vec<NodeId> },
    SliceCols { x: NodeId, start: usize, end: usize },
    Reshape { x: NodeId },
    /// Elementwise max(x, c); subgradient 0 on the boundary.
    MaxConst { x: NodeId, c: f64 },
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Row-wise softmax with max-subtraction stabilization.
    Softmax(NodeId),
    Log(NodeId),
    Sin(NodeId),
    /// Sum of |x| over all elements; subgradient 0 at x = 0.
    AbsSum(NodeId),
    /// Sum of x^2 over all elements.
    SqNorm(NodeId),
    Sum(NodeId),
    /// Mean over all elements.
    Mean(NodeId),
    /// Row-wise Euclidean norm, (B,k) -> (B,1).
    L2NormRows(NodeId),
    /// Mean over rows of the softmax cross-entropy against one-hot targets.
    CrossEntropyRows { logits: NodeId, target: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node; zeros if unreachable.
    pub fn get(&self, graph: &Graph, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = graph.nodes[id.0].value.dims2().unwrap_or((1, 1));
                Tensor::zeros(r, c)
            }
        }
    }
}

/// One forward pass worth of recorded computation.
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
    /// Minimum distance of any hinge/abs input from its kink over this pass.
    kink_margin: f64,
    /// Running hash of every hinge/abs branch decision in this pass.
    kink_sig: u64,
    /// Self-test switch: deliberately corrupts the tanh backward rule so the
    /// finite-difference checker can demonstrate it catches bad gradients.
    mutate_backward: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
            kink_margin: f64::INFINITY,
            kink_sig: 0xcbf2_9ce4_8422_2325,
            mutate_backward: false,
        }
    }

    /// Disables NaN/Inf screening of op outputs.
    pub fn unchecked(mut self) -> Self {
        self.checked = false;
        self
    }

    pub fn set_backward_mutation(&mut self, enabled: bool) {
        self.mutate_backward = enabled;
    }

    /// Smallest |input - kink| seen by any hinge or abs op in this pass.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Hash of all hinge/abs branch decisions taken in this pass. Two passes
    /// with equal signatures evaluated the same piecewise-linear branch.
    pub fn kink_signature(&self) -> u64 {
        self.kink_sig
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64, AdError> {
        self.nodes[id.0].value.scalar_value()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId, AdError> {
        if self.checked && !value.all_finite() {
            return Err(AdError::NonFinite {
                op: op_name(&op),
                detail: format!("produced non-finite output of shape {:?}", value.shape()),
            });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(id)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant leaf: participates in the forward pass, receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, AdError> {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Parameter leaf tagged with its index in the caller's parameter order.
    pub fn param(&mut self, index: usize, value: Tensor) -> Result<NodeId, AdError> {
        self.push(value, Op::Leaf { param: Some(index) }, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.elementwise_zip("add", a, b, |x, y| x + y)?;
        self.push(v, Op::Add(a, b), self.rg(a) || self.rg(b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.elementwise_zip("sub", a, b, |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), self.rg(a) || self.rg(b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.elementwise_zip("mul", a, b, |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), self.rg(a) || self.rg(b))
    }

    /// a * x + b with scalar constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId, AdError> {
        let v = self.map(x, |t| a * t + b);
        self.push(v, Op::Affine { x, a }, self.rg(x))
    }

    pub fn scale(&mut self, x: NodeId, a: f64) -> Result<NodeId, AdError> {
        self.affine(x, a, 0.0)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        if ac != br {
            return Err(AdError::Shape {
                op: "matmul",
                detail: format!("[{ar}x{ac}] x [{br}x{bc}]"),
            });
        }
        let mut out = vec![0.0; ar * bc];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..ar {
            for k in 0..ac {
                let aik = ad[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[k * bc..(k + 1) * bc];
                let orow = &mut out[i * bc..(i + 1) * bc];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let v = Tensor::new(vec![ar, bc], out)?;
        self.push(v, Op::Matmul(a, b), self.rg(a) || self.rg(b))
    }

    /// Adds a (1,n) row to every row of a (B,n) matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, AdError> {
        let (b, n) = self.value(x).dims2()?;
        let (rr, rc) = self.value(row).dims2()?;
        if rr != 1 || rc != n {
            return Err(AdError::Shape {
                op: "add_row",
                detail: format!("[{b}x{n}] + [{rr}x{rc}]"),
            });
        }
        let xd = self.value(x).data();
        let rd = self.value(row).data();
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            for j in 0..n {
                out.push(xd[i * n + j] + rd[j]);
            }
        }
        let v = Tensor::new(vec![b, n], out)?;
        self.push(v, Op::AddRow { x, row }, self.rg(x) || self.rg(row))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AdError> {
        if parts.is_empty() {
            return Err(AdError::Shape {
                op: "concat",
                detail: "no parts".into(),
            });
        }
        let (rows, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if r != rows {
                return Err(AdError::Shape {
                    op: "concat",
                    detail: format!("row mismatch: {rows} vs {r}"),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                let d = self.value(*p).data();
                out.extend_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(vec![rows, total], out)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    /// Column range `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        if start >= end || end > cols {
            return Err(AdError::Shape {
                op: "slice_cols",
                detail: format!("range {start}..{end} of [{rows}x{cols}]"),
            });
        }
        let d = self.value(x).data();
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for i in 0..rows {
            out.extend_from_slice(&d[i * cols + start..i * cols + end]);
        }
        let v = Tensor::new(vec![rows, w], out)?;
        self.push(v, Op::SliceCols { x, start, end }, self.rg(x))
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, AdError> {
        let n = self.value(x).len();
        if rows * cols != n {
            return Err(AdError::Shape {
                op: "reshape",
                detail: format!("{n} elements into [{rows}x{cols}]"),
            });
        }
        let v = Tensor::new(vec![rows, cols], self.value(x).data().to_vec())?;
        self.push(v, Op::Reshape { x }, self.rg(x))
    }

    /// Elementwise max(x, c). `relu` is `max_const(x, 0)`.
    pub fn max_const(&mut self, x: NodeId, c: f64) -> Result<NodeId, AdError> {
        let mut margin = self.kink_margin;
        let mut sig = self.kink_sig;
        for v in self.value(x).data() {
            margin = margin.min((v - c).abs());
            sig ^= u64::from(*v > c).wrapping_add(0x9e37_79b9);
            sig = sig.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.kink_margin = margin;
        self.kink_sig = sig;
        let v = self.map(x, |t| t.max(c));
        self.push(v, Op::MaxConst { x, c }, self.rg(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        self.max_const(x, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let v = self.map(x, f64::tanh);
        self.push(v, Op::Tanh(x), self.rg(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let v = self.map(x, stable_sigmoid);
        self.push(v, Op::Sigmoid(x), self.rg(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        let d = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            softmax_row(&d[i * cols..(i + 1) * cols], &mut out[i * cols..(i + 1) * cols]);
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        self.push(v, Op::Softmax(x), self.rg(x))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let v = self.map(x, f64::ln);
        self.push(v, Op::Log(x), self.rg(x))
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let v = self.map(x, f64::sin);
        self.push(v, Op::Sin(x), self.rg(x))
    }

    /// L1 mass: sum of |x| over all elements, as a scalar node.
    pub fn abs_sum(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let mut margin = self.kink_margin;
        let mut sig = self.kink_sig;
        let mut s = 0.0;
        for v in self.value(x).data() {
            margin = margin.min(v.abs());
            sig ^= u64::from(*v > 0.0).wrapping_add(0x9e37_79b9);
            sig = sig.wrapping_mul(0x0000_0100_0000_01b3);
            s += v.abs();
        }
        self.kink_margin = margin;
        self.kink_sig = sig;
        self.push(Tensor::scalar(s), Op::AbsSum(x), self.rg(x))
    }

    /// Squared L2 norm: sum of x^2 over all elements, as a scalar node.
    pub fn sq_norm(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SqNorm(x), self.rg(x))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), self.rg(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x), self.rg(x))
    }

    /// Row-wise Euclidean norm, (B,k) -> (B,1). Zero rows get subgradient 0.
    pub fn l2_norm_rows(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let (rows, cols) = self.value(x).dims2()?;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let s: f64 = d[i * cols..(i + 1) * cols].iter().map(|v| v * v).sum();
            out.push(s.sqrt());
        }
        let v = Tensor::new(vec![rows, 1], out)?;
        self.push(v, Op::L2NormRows(x), self.rg(x))
    }

    /// Mean over rows of softmax cross-entropy against one-hot targets.
    ///
    /// Uses log-sum-exp with max subtraction; for a one-hot row y the loss is
    /// `logsumexp(z) - z[target]`.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId, AdError> {
        let (rows, cols) = self.value(logits).dims2()?;
        let (tr, tc) = self.value(target).dims2()?;
        if (tr, tc) != (rows, cols) {
            return Err(AdError::Shape {
                op: "cross_entropy_rows",
                detail: format!("logits [{rows}x{cols}] vs target [{tr}x{tc}]"),
            });
        }
        let zd = self.value(logits).data();
        let yd = self.value(target).data();
        let mut total = 0.0;
        for i in 0..rows {
            let z = &zd[i * cols..(i + 1) * cols];
            let y = &yd[i * cols..(i + 1) * cols];
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let dot: f64 = z.iter().zip(y).map(|(zv, yv)| zv * yv).sum();
            total += lse - dot;
        }
        let v = Tensor::scalar(total / rows as f64);
        self.push(v, Op::CrossEntropyRows { logits, target }, self.rg(logits))
    }

    /// Backpropagates from a scalar root, accumulating dRoot/dNode for every
    /// node on a gradient path. Each node is visited exactly once in reverse
    /// insertion order (a valid reverse topological order by construction).
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AdError> {
        let root_val = &self.nodes[root.0].value;
        if root_val.len() != 1 {
            return Err(AdError::NotScalar {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let go = grads[id].take().unwrap();
            let op = self.nodes[id].op.clone();
            self.propagate(&op, &go, &mut grads)?;
            grads[id] = Some(go);
        }
        Ok(Gradients { grads })
    }

    /// Collects per-parameter gradients in the caller's parameter order.
    /// Parameters never touched by the graph get zero tensors of their shape.
    pub fn param_grads(
        &self,
        grads: &Gradients,
        shapes: &[(usize, usize)],
    ) -> Result<Vec<Tensor>, AdError> {
        let mut out: Vec<Tensor> = shapes.iter().map(|(r, c)| Tensor::zeros(*r, *c)).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = &grads.grads[i] {
                    let dst = &mut out[p];
                    if dst.shape() != g.shape() {
                        return Err(AdError::Shape {
                            op: "param_grads",
                            detail: format!(
                                "param {p}: bound shape {:?} vs grad {:?}",
                                dst.shape(),
                                g.shape()
                            ),
                        });
                    }
                    for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        op: &Op,
        go: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), AdError> {
        match op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, go.data().iter().cloned());
                self.accumulate(grads, *b, go.data().iter().cloned());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, go.data().iter().cloned());
                self.accumulate(grads, *b, go.data().iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let bd = self.nodes[b.0].value.data();
                let ad = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, go.data().iter().zip(bd).map(|(g, v)| g * v));
                self.accumulate(grads, *b, go.data().iter().zip(ad).map(|(g, v)| g * v));
            }
            Op::Matmul(a, b) => {
                let (ar, ac) = self.nodes[a.0].value.dims2()?;
                let (_, bc) = self.nodes[b.0].value.dims2()?;
                let ad = self.nodes[a.0].value.data();
                let bd = self.nodes[b.0].value.data();
                let gd = go.data();
                if self.nodes[a.0].requires_grad {
                    // dA = gO . B^T
                    let mut da = vec![0.0; ar * ac];
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut s = 0.0;
                            for j in 0..bc {
                                s += gd[i * bc + j] * bd[k * bc + j];
                            }
                            da[i * ac + k] = s;
                        }
                    }
                    self.accumulate(grads, *a, da.into_iter());
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . gO
                    let mut db = vec![0.0; ac * bc];
                    for i in 0..ar {
                        for k in 0..ac {
                            let aik = ad[i * ac + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..bc {
                                db[k * bc + j] += aik * gd[i * bc + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, db.into_iter());
                }
            }
            Op::Affine { x, a } => {
                self.accumulate(grads, *x, go.data().iter().map(|g| a * g));
            }
            Op::AddRow { x, row } => {
                self.accumulate(grads, *x, go.data().iter().cloned());
                if self.nodes[row.0].requires_grad {
                    let (b, n) = self.nodes[x.0].value.dims2()?;
                    let gd = go.data();
                    let mut dr = vec![0.0; n];
                    for i in 0..b {
                        for j in 0..n {
                            dr[j] += gd[i * n + j];
                        }
                    }
                    self.accumulate(grads, *row, dr.into_iter());
                }
            }
            Op::Concat { parts } => {
                let (rows, total) = go.dims2()?;
                let gd = go.data();
                let mut col = 0usize;
                for p in parts {
                    let (_, w) = self.nodes[p.0].value.dims2()?;
                    if self.nodes[p.0].requires_grad {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&gd[i * total + col..i * total + col + w]);
                        }
                        self.accumulate(grads, *p, dp.into_iter());
                    }
                    col += w;
                }
            }
            Op::SliceCols { x, start, end } => {
                let (rows, cols) = self.nodes[x.0].value.dims2()?;
                let w = end - start;
                let gd = go.data();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..w {
                        dx[i * cols + start + j] = gd[i * w + j];
                    }
                }
                self.accumulate(grads, *x, dx.into_iter());
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, go.data().iter().cloned());
            }
            Op::MaxConst { x, c } => {
                let xd = self.nodes[x.0].value.data();
                self.accumulate(
                    grads,
                    *x,
                    go.data()
                        .iter()
                        .zip(xd)
                        .map(|(g, v)| if *v > *c { *g } else { 0.0 }),
                );
            }
            Op::Tanh(x) => {
                let xd = self.nodes[x.0].value.data();
                let bend = if self.mutate_backward { 0.9 } else { 1.0 };
                self.accumulate(
                    grads,
                    *x,
                    go.data().iter().zip(xd).map(move |(g, v)| {
                        let t = v.tanh();
                        g * (1.0 - bend * t * t)
                    }),
                );
            }
            Op::Sigmoid(x) => {
                let xd = self.nodes[x.0].value.data();
                self.accumulate(
                    grads,
                    *x,
                    go.data().iter().zip(xd).map(|(g, v)| {
                        let s = stable_sigmoid(*v);
                        g * s * (1.0 - s)
                    }),
                );
            }
            Op::Softmax(x) => {
                let (rows, cols) = self.nodes[x.0].value.dims2()?;
                let xd = self.nodes[x.0].value.data();
                let gd = go.data();
                let mut dx = vec![0.0; rows * cols];
                let mut s = vec![0.0; cols];
                for i in 0..rows {
                    softmax_row(&xd[i * cols..(i + 1) * cols], &mut s);
                    let g = &gd[i * cols..(i + 1) * cols];
                    let dot: f64 = g.iter().zip(&s).map(|(gv, sv)| gv * sv).sum();
                    for j in 0..cols {
                        dx[i * cols + j] = s[j] * (g[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx.into_iter());
            }
            Op::Log(x) => {
                let xd = self.nodes[x.0].value.data();
                self.accumulate(grads, *x, go.data().iter().zip(xd).map(|(g, v)| g / v));
            }
            Op::Sin(x) => {
                let xd = self.nodes[x.0].value.data();
                self.accumulate(grads, *x, go.data().iter().zip(xd).map(|(g, v)| g * v.cos()));
            }
            Op::AbsSum(x) => {
                let g = go.scalar_value()?;
                let xd = self.nodes[x.0].value.data();
                self.accumulate(
                    grads,
                    *x,
                    xd.iter().map(move |v| {
                        if *v > 0.0 {
                            g
                        } else if *v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::SqNorm(x) => {
                let g = go.scalar_value()?;
                let xd = self.nodes[x.0].value.data();
                self.accumulate(grads, *x, xd.iter().map(move |v| 2.0 * v * g));
            }
            Op::Sum(x) => {
                let g = go.scalar_value()?;
                let n = self.nodes[x.0].value.len();
                self.accumulate(grads, *x, (0..n).map(move |_| g));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                let g = go.scalar_value()? / n as f64;
                self.accumulate(grads, *x, (0..n).map(move |_| g));
            }
            Op::L2NormRows(x) => {
                let (rows, cols) = self.nodes[x.0].value.dims2()?;
                let xd = self.nodes[x.0].value.data();
                let gd = go.data();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let row = &xd[i * cols..(i + 1) * cols];
                    let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 1e-12 {
                        for j in 0..cols {
                            dx[i * cols + j] = gd[i] * row[j] / n;
                        }
                    }
                }
                self.accumulate(grads, *x, dx.into_iter());
            }
            Op::CrossEntropyRows { logits, target } => {
                let g = go.scalar_value()?;
                let (rows, cols) = self.nodes[logits.0].value.dims2()?;
                let zd = self.nodes[logits.0].value.data();
                let yd = self.nodes[target.0].value.data();
                let mut dz = vec![0.0; rows * cols];
                let mut s = vec![0.0; cols];
                let scale = g / rows as f64;
                for i in 0..rows {
                    softmax_row(&zd[i * cols..(i + 1) * cols], &mut s);
                    for j in 0..cols {
                        dz[i * cols + j] = scale * (s[j] - yd[i * cols + j]);
                    }
                }
                self.accumulate(grads, *logits, dz.into_iter());
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: NodeId,
        contrib: impl Iterator<Item = f64>,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let slot = &mut grads[target.0];
        match slot {
            Some(t) => {
                for (d, c) in t.data_mut().iter_mut().zip(contrib) {
                    *d += c;
                }
            }
            None => {
                let shape = self.nodes[target.0].value.shape().to_vec();
                let data: Vec<f64> = contrib.collect();
                *slot = Some(Tensor::new(shape, data).expect("gradient shape"));
            }
        }
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = &self.nodes[x.0].value;
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|t| f(*t)).collect())
            .expect("map preserves shape")
    }

    fn elementwise_zip(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AdError> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        if va.shape() != vb.shape() {
            return Err(AdError::Shape {
                op,
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        Tensor::new(
            va.shape().to_vec(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        )
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Matmul(..) => "matmul",
        Op::Affine { .. } => "affine",
        Op::AddRow { .. } => "add_row",
        Op::Concat { .. } => "concat",
        Op::SliceCols { .. } => "slice_cols",
        Op::Reshape { .. } => "reshape",
        Op::MaxConst { .. } => "max_const",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softmax(..) => "softmax",
        Op::Log(..) => "log",
        Op::Sin(..) => "sin",
        Op::AbsSum(..) => "abs_sum",
        Op::SqNorm(..) => "sq_norm",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::L2NormRows(..) => "l2_norm_rows",
        Op::CrossEntropyRows { .. } => "cross_entropy_rows",
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        let e = (v - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(g: &mut Graph, t: Tensor) -> NodeId {
        g.constant(t).unwrap()
    }

    fn p(g: &mut Graph, idx: usize, t: Tensor) -> NodeId {
        g.param(idx, t).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = c(&mut g, Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = c(&mut g, Tensor::row(&[0.0; 4]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        // Independent oracle: naive i-j-k triple loop.
        let a_data: Vec<f64> = (0..6).map(|i| (i as f64) * 0.7 - 1.3).collect();
        let b_data: Vec<f64> = (0..12).map(|i| (i as f64) * -0.31 + 0.9).collect();
        let mut expect = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a_data[i * 3 + k] * b_data[k * 4 + j];
                }
                expect[i * 4 + j] = s;
            }
        }
        let mut g = Graph::new();
        let a = c(&mut g, Tensor::matrix(2, 3, a_data).unwrap());
        let b = c(&mut g, Tensor::matrix(3, 4, b_data).unwrap());
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4]);
        for (got, want) in g.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_structured() {
        let mut g = Graph::new();
        let a = c(&mut g, Tensor::zeros(2, 3));
        let b = c(&mut g, Tensor::zeros(4, 2));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = p(&mut g, 0, Tensor::row(&[1.0, -2.0, 3.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(&g, x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sq_norm_is_2x() {
        let mut g = Graph::new();
        let x = p(&mut g, 0, Tensor::row(&[1.0, -2.0, 3.0]));
        let s = g.sq_norm(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(&g, x).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = p(&mut g, 0, Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(AdError::NotScalar { .. })));
    }

    #[test]
    fn unreachable_param_grad_is_zero() {
        let mut g = Graph::new();
        let x = p(&mut g, 0, Tensor::row(&[1.0, 2.0]));
        let y = p(&mut g, 1, Tensor::row(&[5.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        let got = g.param_grads(&grads, &[(1, 2), (1, 1)]).unwrap();
        assert_eq!(got[1].data(), &[0.0]);
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn sibling_order_does_not_change_gradients() {
        // loss = sum(a*b) + sum(b*a) built in both orders.
        let run = |swap: bool| {
            let mut g = Graph::new();
            let a = p(&mut g, 0, Tensor::row(&[0.3, -1.7, 2.2]));
            let b = c(&mut g, Tensor::row(&[1.1, 0.4, -0.6]));
            let (l, r) = if swap { (b, a) } else { (a, b) };
            let m1 = g.mul(l, r).unwrap();
            let m2 = g.mul(r, l).unwrap();
            let s1 = g.sum(m1).unwrap();
            let s2 = g.sum(m2).unwrap();
            let tot = g.add(s1, s2).unwrap();
            let grads = g.backward(tot).unwrap();
            grads.get(&g, a).data().to_vec()
        };
        let g1 = run(false);
        let g2 = run(true);
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_and_ce_are_stable_on_extreme_logits() {
        let mut g = Graph::new();
        let z = c(&mut g, Tensor::row(&[1e4, -1e4, 500.0, 0.0]));
        let s = g.softmax(z).unwrap();
        assert!(g.value(s).all_finite());
        let y = c(&mut g, Tensor::row(&[1.0, 0.0, 0.0, 0.0]));
        let z2 = p(&mut g, 0, Tensor::row(&[1e4, -1e4, 500.0, 0.0]));
        let ce = g.cross_entropy_rows(z2, y).unwrap();
        assert!(g.scalar(ce).unwrap().is_finite());
        let grads = g.backward(ce).unwrap();
        assert!(grads.get(&g, z2).all_finite());
    }

    #[test]
    fn checked_mode_rejects_nan_outputs() {
        let mut g = Graph::new();
        let x = c(&mut g, Tensor::row(&[-1.0]));
        let err = g.log(x).unwrap_err();
        assert!(matches!(err, AdError::NonFinite { .. }));
    }

    #[test]
    fn slice_concat_roundtrip_gradients() {
        let mut g = Graph::new();
        let x = p(&mut g, 0, Tensor::matrix(2, 4, (0..8).map(|v| v as f64).collect()).unwrap());
        let left = g.slice_cols(x, 0, 2).unwrap();
        let right = g.slice_cols(x, 2, 4).unwrap();
        let back = g.concat(&[right, left]).unwrap();
        let s = g.sq_norm(back).unwrap();
        let grads = g.backward(s).unwrap();
        let want: Vec<f64> = (0..8).map(|v| 2.0 * v as f64).collect();
        assert_eq!(grads.get(&g, x).data(), &want[..]);
    }

    /// Central finite differences through a scalar-output graph builder.
    fn fd_check(build: impl Fn(&mut Graph, NodeId) -> NodeId, x0: Vec<f64>, tol: f64) {
        let n = x0.len();
        let eval = |xs: &[f64]| -> f64 {
            let mut g = Graph::new();
            let x = g.param(0, Tensor::row(xs)).unwrap();
            let root = build(&mut g, x);
            g.scalar(root).unwrap()
        };
        let mut g = Graph::new();
        let x = g.param(0, Tensor::row(&x0)).unwrap();
        let root = build(&mut g, x);
        let grads = g.backward(root).unwrap();
        let analytic = grads.get(&g, x).data().to_vec();
        let eps = 1e-5;
        for i in 0..n {
            let mut plus = x0.clone();
            plus[i] += eps;
            let mut minus = x0.clone();
            minus[i] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-6);
            assert!(rel < tol, "coord {i}: analytic {} vs fd {}", analytic[i], fd);
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let x0 = vec![0.37, -0.81, 1.9, -2.3];
        fd_check(|g, x| g.tanh(x).and_then(|y| g.sum(y)).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.sigmoid(x).and_then(|y| g.sum(y)).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.sin(x).and_then(|y| g.sum(y)).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.abs_sum(x).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.sq_norm(x).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.mean(x).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.l2_norm_rows(x).and_then(|y| g.sum(y)).unwrap(), x0.clone(), 1e-3);
        fd_check(|g, x| g.max_const(x, 0.1).and_then(|y| g.sum(y)).unwrap(), x0.clone(), 1e-3);
        fd_check(
            |g, x| {
                let s = g.softmax(x).unwrap();
                let l = g.log(s).unwrap();
                g.sq_norm(l).unwrap()
            },
            x0.clone(),
            1e-3,
        );
        fd_check(
            |g, x| {
                let y = g.constant(Tensor::row(&[0.0, 1.0, 0.0, 0.0])).unwrap();
                g.cross_entropy_rows(x, y).unwrap()
            },
            x0.clone(),
            1e-3,
        );
        fd_check(
            |g, x| {
                let w = g
                    .constant(Tensor::matrix(4, 2, vec![0.3, -0.2, 0.8, 0.5, -0.4, 0.1, 0.9, -0.7]).unwrap())
                    .unwrap();
                let h = g.matmul(x, w).unwrap();
                let t = g.tanh(h).unwrap();
                g.sq_norm(t).unwrap()
            },
            x0,
            1e-3,
        );
    }
}
