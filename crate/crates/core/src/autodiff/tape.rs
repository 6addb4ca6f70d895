use super::{AutodiffError, ParamId, ParamSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Relu,
    Abs,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Softplus,
    Square,
    Sqrt,
    Sin,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    SumAxis(Var, usize),
    Map(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softmax(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<usize>,
}

/// Dynamic reverse-mode tape. Every op appends a node holding its forward
/// value; [`Tape::backward`] walks the nodes once in reverse and consumes the
/// tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_axis(axis: usize) -> Result<(), AutodiffError> {
    if axis > 1 {
        Err(AutodiffError::Shape(format!("axis {axis} out of range for a matrix")))
    } else {
        Ok(())
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn bidx(t: &Tensor, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name.to_string()));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Binary(_, a, b) | Op::MatMul(a, b) => self.needs(*a) || self.needs(*b),
            Op::Concat(parts, _) => parts.iter().any(|p| self.needs(*p)),
            Op::Transpose(a)
            | Op::Slice { src: a, .. }
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::Map(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Softmax(a, _) => self.needs(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives a gradient, readable via [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter; its gradient can be folded back with
    /// [`Gradients::accumulate_into`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let v = self.leaf(params.value(id).clone());
        self.nodes[v.0].param = Some(id.index());
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (Some(rows), Some(cols)) = (
            broadcast_dim(ta.rows(), tb.rows()),
            broadcast_dim(ta.cols(), tb.cols()),
        ) else {
            return Err(AutodiffError::Shape(format!(
                "{kind:?}: cannot broadcast {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        let out = Tensor::from_fn(rows, cols, |r, c| {
            let x = ta.data()[bidx(ta, r, c)];
            let y = tb.data()[bidx(tb, r, c)];
            match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            }
        });
        self.push(out, Op::Binary(kind, a, b), &format!("{kind:?}"))
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(AutodiffError::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul(ta, tb);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Stacks along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        check_axis(axis)?;
        let first = self.value(*parts.first().ok_or_else(|| {
            AutodiffError::Shape("concat of nothing".into())
        })?);
        let (fixed, mut total) = if axis == 0 {
            (first.cols(), 0)
        } else {
            (first.rows(), 0)
        };
        for p in parts {
            let t = self.value(*p);
            let (f, n) = if axis == 0 { (t.cols(), t.rows()) } else { (t.rows(), t.cols()) };
            if f != fixed {
                return Err(AutodiffError::Shape(format!("concat axis {axis}: mismatched {:?}", t.shape())));
            }
            total += n;
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(total * fixed);
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::new(total, fixed, data)?
        } else {
            let mut data = Vec::with_capacity(total * fixed);
            for r in 0..fixed {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row_slice(r));
                }
            }
            Tensor::new(fixed, total, data)?
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), "concat")
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) `start..start + len`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        check_axis(axis)?;
        let t = self.value(a);
        let extent = if axis == 0 { t.rows() } else { t.cols() };
        if len == 0 || start + len > extent {
            return Err(AutodiffError::Shape(format!(
                "slice {start}..{} of axis {axis} with extent {extent}",
                start + len
            )));
        }
        let out = if axis == 0 {
            Tensor::from_fn(len, t.cols(), |r, c| t.get(start + r, c))
        } else {
            Tensor::from_fn(t.rows(), len, |r, c| t.get(r, start + c))
        };
        self.push(out, Op::Slice { src: a, axis, start }, "slice")
    }

    /// Sum of all elements, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        check_axis(axis)?;
        let t = self.value(a);
        let out = if axis == 0 {
            Tensor::from_fn(1, t.cols(), |_, c| (0..t.rows()).map(|r| t.get(r, c)).sum())
        } else {
            Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum())
        };
        self.push(out, Op::SumAxis(a, axis), "sum_axis")
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        check_axis(axis)?;
        let t = self.value(a);
        let n = if axis == 0 { t.rows() } else { t.cols() } as f64;
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n)
    }

    fn map(&mut self, kind: Unary, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| match kind {
                Unary::Relu => x.max(0.0),
                Unary::Abs => x.abs(),
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Sigmoid => sigmoid(x),
                Unary::Tanh => x.tanh(),
                Unary::Softplus => softplus(x),
                Unary::Square => x * x,
                Unary::Sqrt => x.sqrt(),
                Unary::Sin => x.sin(),
                Unary::Neg => -x,
            })
            .collect();
        let out = Tensor::new(t.rows(), t.cols(), data)?;
        self.push(out, Op::Map(kind, a), &format!("{kind:?}"))
    }

    /// `max(x, 0)` elementwise.
    pub fn max_with_zero(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Relu, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Abs, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Tanh, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Sqrt, a)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Sin, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map(Unary::Neg, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let out = Tensor::new(t.rows(), t.cols(), t.data().iter().map(|x| x * factor).collect())?;
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let out = Tensor::new(t.rows(), t.cols(), t.data().iter().map(|x| x + offset).collect())?;
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    /// Softmax normalising along `axis` (1: each row sums to one).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        check_axis(axis)?;
        let t = self.value(a);
        let mut out = t.clone();
        let (rows, cols) = (t.rows(), t.cols());
        let (outer, inner) = if axis == 1 { (rows, cols) } else { (cols, rows) };
        let at = |o: usize, i: usize| if axis == 1 { o * cols + i } else { i * cols + o };
        let data = out.data_mut();
        for o in 0..outer {
            let max = (0..inner).map(|i| data[at(o, i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..inner {
                let e = (data[at(o, i)] - max).exp();
                data[at(o, i)] = e;
                total += e;
            }
            for i in 0..inner {
                data[at(o, i)] /= total;
            }
        }
        self.push(out, Op::Softmax(a, axis), "softmax")
    }

    /// Reverse sweep from a `1 x 1` `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Binary(kind, a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (need_a, need_b) = (nodes[a.0].needs_grad, nodes[b.0].needs_grad);
                    let mut ga = need_a.then(|| vec![0.0; ta.len()]);
                    let mut gb = need_b.then(|| vec![0.0; tb.len()]);
                    for r in 0..y.rows() {
                        for c in 0..y.cols() {
                            let go = g[r * y.cols() + c];
                            let (ia, ib) = (bidx(ta, r, c), bidx(tb, r, c));
                            let (x, z) = (ta.data()[ia], tb.data()[ib]);
                            let (da, db) = match kind {
                                Binary::Add => (1.0, 1.0),
                                Binary::Sub => (1.0, -1.0),
                                Binary::Mul => (z, x),
                                Binary::Div => (1.0 / z, -x / (z * z)),
                            };
                            if let Some(ga) = ga.as_mut() {
                                ga[ia] += go * da;
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[ib] += go * db;
                            }
                        }
                    }
                    if let Some(ga) = ga {
                        add_into(acc(&mut grads, &nodes, *a), &ga);
                    }
                    if let Some(gb) = gb {
                        add_into(acc(&mut grads, &nodes, *b), &gb);
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let gt = Tensor::new(y.rows(), y.cols(), g).expect("grad shape");
                    if nodes[a.0].needs_grad {
                        // dA = G B^T
                        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                        let ga = acc(&mut grads, &nodes, *a);
                        for r in 0..n {
                            for c in 0..k {
                                let mut s = 0.0;
                                for j in 0..m {
                                    s += gt.get(r, j) * tb.get(c, j);
                                }
                                ga[r * k + c] += s;
                            }
                        }
                    }
                    if nodes[b.0].needs_grad {
                        // dB = A^T G
                        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                        let gb = acc(&mut grads, &nodes, *b);
                        for r in 0..n {
                            for c in 0..k {
                                let av = ta.get(r, c);
                                if av == 0.0 {
                                    continue;
                                }
                                let grow = gt.row_slice(r);
                                let dst = &mut gb[c * m..(c + 1) * m];
                                for j in 0..m {
                                    dst[j] += av * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let ga = acc(&mut grads, &nodes, *a);
                    let (rows, cols) = (y.rows(), y.cols());
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[c * rows + r] += g[r * cols + c];
                        }
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let tp = &nodes[p.0].value;
                        let extent = if *axis == 0 { tp.rows() } else { tp.cols() };
                        if nodes[p.0].needs_grad {
                            let (pr, pc) = (tp.rows(), tp.cols());
                            let gp = acc(&mut grads, &nodes, *p);
                            for r in 0..pr {
                                for c in 0..pc {
                                    let (yr, yc) = if *axis == 0 { (offset + r, c) } else { (r, offset + c) };
                                    gp[r * pc + c] += g[yr * y.cols() + yc];
                                }
                            }
                        }
                        offset += extent;
                    }
                }
                Op::Slice { src, axis, start } => {
                    let cols = nodes[src.0].value.cols();
                    let gs = acc(&mut grads, &nodes, *src);
                    for r in 0..y.rows() {
                        for c in 0..y.cols() {
                            let (sr, sc) = if *axis == 0 { (start + r, c) } else { (r, start + c) };
                            gs[sr * cols + sc] += g[r * y.cols() + c];
                        }
                    }
                }
                Op::Sum(a) => {
                    let ga = acc(&mut grads, &nodes, *a);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::SumAxis(a, axis) => {
                    let cols = nodes[a.0].value.cols();
                    let rows = nodes[a.0].value.rows();
                    let ga = acc(&mut grads, &nodes, *a);
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += if *axis == 0 { g[c] } else { g[r] };
                        }
                    }
                }
                Op::Map(kind, a) => {
                    let x = &nodes[a.0].value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for (j, gj) in ga.iter_mut().enumerate() {
                        let (xv, yv) = (x.data()[j], y.data()[j]);
                        let d = match kind {
                            Unary::Relu => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Abs => {
                                if xv > 0.0 {
                                    1.0
                                } else if xv < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => yv,
                            Unary::Log => 1.0 / xv,
                            Unary::Sigmoid => yv * (1.0 - yv),
                            Unary::Tanh => 1.0 - yv * yv,
                            Unary::Softplus => sigmoid(xv),
                            Unary::Square => 2.0 * xv,
                            Unary::Sqrt => 0.5 / yv,
                            Unary::Sin => xv.cos(),
                            Unary::Neg => -1.0,
                        };
                        *gj += g[j] * d;
                    }
                }
                Op::Scale(a, f) => {
                    let ga = acc(&mut grads, &nodes, *a);
                    for (dst, gv) in ga.iter_mut().zip(&g) {
                        *dst += gv * f;
                    }
                }
                Op::AddScalar(a) => {
                    add_into(acc(&mut grads, &nodes, *a), &g);
                }
                Op::Softmax(a, axis) => {
                    let (rows, cols) = (y.rows(), y.cols());
                    let (outer, inner) = if *axis == 1 { (rows, cols) } else { (cols, rows) };
                    let at = |o: usize, i: usize| if *axis == 1 { o * cols + i } else { i * cols + o };
                    let ga = acc(&mut grads, &nodes, *a);
                    for o in 0..outer {
                        let dot: f64 = (0..inner).map(|i| g[at(o, i)] * y.data()[at(o, i)]).sum();
                        for i in 0..inner {
                            let k = at(o, i);
                            ga[k] += y.data()[k] * (g[k] - dot);
                        }
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(nodes.len());
        let mut params = Vec::new();
        for (i, (node, g)) in nodes.iter().zip(grads).enumerate() {
            let g = match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.needs_grad => {
                    if g.iter().any(|x| !x.is_finite()) {
                        return Err(AutodiffError::NonFinite("gradient".into()));
                    }
                    if let Some(p) = node.param {
                        params.push((i, p));
                    }
                    Some(Tensor::new(node.value.rows(), node.value.cols(), g)?)
                }
                _ => None,
            };
            out.push(g);
        }
        Ok(Gradients { grads: out, params })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let dst = &mut out[r * m..(r + 1) * m];
        for c in 0..k {
            let av = a.get(r, c);
            if av == 0.0 {
                continue;
            }
            let brow = b.row_slice(c);
            for j in 0..m {
                dst[j] += av * brow[j];
            }
        }
    }
    Tensor::new(n, m, out).expect("matmul shape")
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf recorded with
    /// [`Tape::leaf`] or [`Tape::param`]; `None` if it did not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into the set's accumulators.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<(), AutodiffError> {
        for &(node, p) in &self.params {
            if let Some(g) = &self.grads[node] {
                params.accumulate_grad(p, g)?;
            }
        }
        Ok(())
    }
}
