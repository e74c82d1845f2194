//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built node by node (inputs must already exist, so the node
//! list is a topological order), evaluated with [`Graph::forward`], and
//! differentiated with [`Graph::backward`], which walks the list once in
//! reverse and accumulates parameter gradients into the [`ParamStore`].
//! Graphs are rebuilt for every batch.

use super::matrix::{axpy, dot, matmul_acc, t_matmul_acc, Matrix};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms in [`Graph::bce`].
pub const PROB_CLAMP: f64 = 1e-12;

/// Added to L2 norms in [`Graph::l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(Matrix),
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Concat(Vec<Var>),
    Hadamard(Var, Var),
    RowDot(Var, Var),
    Bilinear { x: Var, m: Var, g: Var },
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Sum(Var),
    Max0(Var),
    L2Normalize(Var),
    BroadcastCols { x: Var, cols: usize },
    SoftmaxXent { logits: Var, labels: Vec<usize> },
    Bce { probs: Var, labels: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Gather { .. } => "gather",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Concat(_) => "concat",
            Op::Hadamard(..) => "hadamard",
            Op::RowDot(..) => "dot",
            Op::Bilinear { .. } => "bilinear",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::Log(_) => "log",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sum(_) => "sum",
            Op::Max0(_) => "max0",
            Op::L2Normalize(_) => "l2_normalize",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Bce { .. } => "neg_sample_bce",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Matrix>,
    // Forward intermediates reused by backward (softmax probabilities, row
    // norms, bilinear products).
    cache: Option<Matrix>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    forwarded: bool,
}

#[cfg(test)]
thread_local! {
    /// Mutation switch for the gradient-check negative test.
    pub(crate) static CORRUPT_HADAMARD_BACKWARD: std::cell::Cell<bool> =
        const { std::cell::Cell::new(false) };
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

    fn push(&mut self, op: Op) -> Var {
        self.forwarded = false;
        self.nodes.push(Node {
            op,
            value: None,
            cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    // ----- builders -------------------------------------------------------

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input(value))
    }

    /// The full parameter tensor as a leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id))
    }

    /// Rows of a parameter; backward scatters into those rows only.
    pub fn gather(&mut self, id: ParamId, rows: Vec<usize>) -> Var {
        self.push(Op::Gather { param: id, rows })
    }

    /// `x · w + b` with `x: B×in`, `w: in×out`, `b: 1×out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.push(Op::Affine { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMulT(a, b))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        self.push(Op::Concat(parts))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Hadamard(a, b))
    }

    /// Row-wise inner product, `B×1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::RowDot(a, b))
    }

    /// Row-wise `x_bᵀ M g_b` with `x: B×d`, `m: d×dg`, `g: B×dg`.
    pub fn bilinear(&mut self, x: Var, m: Var, g: Var) -> Var {
        self.push(Op::Bilinear { x, m, g })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.push(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.push(Op::Relu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.push(Op::Softmax(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.push(Op::Log(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.push(Op::Scale(x, factor))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, constant: f64) -> Var {
        self.push(Op::Offset(x, constant))
    }

    /// Sum of all elements, `1×1`.
    pub fn sum(&mut self, x: Var) -> Var {
        self.push(Op::Sum(x))
    }

    /// Hinge clamp `max(0, x)`. Same forward as [`Graph::relu`], kept separate
    /// so loss graphs read as written.
    pub fn max0(&mut self, x: Var) -> Var {
        self.push(Op::Max0(x))
    }

    /// Row-wise `x / (‖x‖ + 1e-12)`.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        self.push(Op::L2Normalize(x))
    }

    /// Repeats a `B×1` column into `B×cols`.
    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Var {
        self.push(Op::BroadcastCols { x, cols })
    }

    /// Per-row `-log softmax(logits)[label]`, `B×1`.
    pub fn softmax_xent(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        self.push(Op::SoftmaxXent { logits, labels })
    }

    /// Summed binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce(&mut self, probs: Var, labels: Vec<f64>) -> Var {
        self.push(Op::Bce { probs, labels })
    }

    // ----- evaluation -----------------------------------------------------

    pub fn is_forwarded(&self) -> bool {
        self.forwarded
    }

    pub fn value(&self, var: Var) -> Result<&Matrix> {
        self.nodes
            .get(var.0)
            .and_then(|n| n.value.as_ref())
            .ok_or_else(|| Error::Usage(format!("node {} has not been evaluated", var.0)))
    }

    pub fn scalar(&self, var: Var) -> Result<f64> {
        let v = self.value(var)?;
        if v.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "node {} is {:?}, not a scalar",
                var.0,
                v.shape()
            )));
        }
        Ok(v.get(0, 0))
    }

    /// Evaluates every node in insertion order.
    pub fn forward(&mut self, params: &ParamStore) -> Result<()> {
        for i in 0..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let (value, cache) = eval_node(i, &node.op, done, params)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("node {i} ({})", node.op.name())));
            }
            node.value = Some(value);
            node.cache = cache;
        }
        self.forwarded = true;
        Ok(())
    }

    /// Accumulates `∂root/∂θ` into the gradient buffers of every parameter
    /// reachable from `root`.
    pub fn backward(&self, root: Var, params: &mut ParamStore) -> Result<()> {
        if !self.forwarded {
            return Err(Error::Usage("backward called before forward".into()));
        }
        let root_value = self.value(root)?;
        if root_value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward root must be scalar, node {} is {:?}",
                root.0,
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = node.value.as_ref().expect("forwarded");
            match &node.op {
                Op::Input(_) => {}
                Op::Param(id) => {
                    let t = params.get_mut(*id);
                    t.grad.add_assign(&g);
                }
                Op::Gather { param, rows } => {
                    let t = params.get_mut(*param);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(1.0, g.row(k), t.grad.row_mut(r));
                    }
                }
                Op::Affine { x, w, b } => {
                    let xv = self.val(*x);
                    let wv = self.val(*w);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    matmul_acc(&g, &wv.transpose(), &mut gx);
                    accumulate(&mut grads, *x, gx);
                    let mut gw = Matrix::zeros(wv.rows(), wv.cols());
                    t_matmul_acc(xv, &g, &mut gw);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, column_sums(&g));
                }
                Op::MatMul(a, b) => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    accumulate(&mut grads, *a, g.matmul(&bv.transpose()));
                    accumulate(&mut grads, *b, av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    accumulate(&mut grads, *a, g.matmul(bv));
                    accumulate(&mut grads, *b, g.t_matmul(av));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.val(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Hadamard(a, b) => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    let ga = zip_map(&g, bv, |g, b| g * b);
                    #[allow(unused_mut)]
                    let mut gb = zip_map(&g, av, |g, a| g * a);
                    #[cfg(test)]
                    if CORRUPT_HADAMARD_BACKWARD.with(|c| c.get()) {
                        gb = gb.map(|x| 0.5 * x);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::RowDot(a, b) => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    accumulate(&mut grads, *a, scale_rows(bv, &g));
                    accumulate(&mut grads, *b, scale_rows(av, &g));
                }
                Op::Bilinear { x, m, g: gv } => {
                    let xv = self.val(*x);
                    let mv = self.val(*m);
                    let gvv = self.val(*gv);
                    let mg = node.cache.as_ref().expect("bilinear cache");
                    // d/dx = go · M g ; d/dg = go · Mᵀ x ; d/dM = Σ go · x gᵀ
                    accumulate(&mut grads, *x, scale_rows(mg, &g));
                    let xm = xv.matmul(mv);
                    accumulate(&mut grads, *gv, scale_rows(&xm, &g));
                    let scaled_x = scale_rows(xv, &g);
                    accumulate(&mut grads, *m, scaled_x.t_matmul(gvv));
                }
                Op::Sigmoid(x) => {
                    accumulate(&mut grads, *x, zip_map(&g, out, |g, s| g * s * (1.0 - s)));
                }
                Op::Relu(x) | Op::Max0(x) => {
                    let xv = self.val(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        zip_map(&g, xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                    );
                }
                Op::Softmax(x) => {
                    let mut gx = Matrix::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let s = out.row(r);
                        let gr = g.row(r);
                        let inner = dot(gr, s);
                        for (c, dst) in gx.row_mut(r).iter_mut().enumerate() {
                            *dst = s[c] * (gr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let xv = self.val(*x);
                    accumulate(&mut grads, *x, zip_map(&g, xv, |g, x| g / x));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Offset(x, _) => accumulate(&mut grads, *x, g),
                Op::Sum(x) => {
                    let xv = self.val(*x);
                    let s = g.get(0, 0);
                    accumulate(&mut grads, *x, Matrix::filled(xv.rows(), xv.cols(), s));
                }
                Op::L2Normalize(x) => {
                    let xv = self.val(*x);
                    let norms = node.cache.as_ref().expect("norm cache");
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        // y = x / (n + eps), n = ‖x‖
                        // dx = g / (n+eps) - x (g·x) / (n (n+eps)^2)
                        let n = norms.get(r, 0);
                        let denom = n + NORM_EPS;
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let gx_dot = dot(gr, xr);
                        let coeff = if n > 0.0 { gx_dot / (n * denom * denom) } else { 0.0 };
                        for (c, dst) in gx.row_mut(r).iter_mut().enumerate() {
                            *dst = gr[c] / denom - xr[c] * coeff;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BroadcastCols { x, .. } => {
                    let mut gx = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        gx.set(r, 0, g.row(r).iter().sum());
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let probs = node.cache.as_ref().expect("softmax cache");
                    let mut gx = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, &label) in labels.iter().enumerate() {
                        let gr = g.get(r, 0);
                        for (c, dst) in gx.row_mut(r).iter_mut().enumerate() {
                            let target = if c == label { 1.0 } else { 0.0 };
                            *dst = gr * (probs.get(r, c) - target);
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
                Op::Bce { probs, labels } => {
                    let pv = self.val(*probs);
                    let s = g.get(0, 0);
                    let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                    for (k, dst) in gp.as_mut_slice().iter_mut().enumerate() {
                        let p = pv.as_slice()[k];
                        let y = labels[k];
                        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                            *dst = s * (-(y / p) + (1.0 - y) / (1.0 - p));
                        }
                    }
                    accumulate(&mut grads, *probs, gp);
                }
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.as_ref().expect("forwarded")
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Multiplies row `r` of `m` by `col[r, 0]`.
fn scale_rows(m: &Matrix, col: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let s = col.get(r, 0);
        out.row_mut(r).iter_mut().for_each(|x| *x *= s);
    }
    out
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        axpy(1.0, g.row(r), out.as_mut_slice());
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

type Evaluated = (Matrix, Option<Matrix>);

fn eval_node(index: usize, op: &Op, done: &[Node], params: &ParamStore) -> Result<Evaluated> {
    let val = |v: &Var| -> Result<&Matrix> {
        done.get(v.0)
            .and_then(|n| n.value.as_ref())
            .ok_or_else(|| Error::Internal(format!("node {index} reads unevaluated node {}", v.0)))
    };
    let shape_err = |detail: String| Error::Shape {
        node: index,
        op: op.name(),
        detail,
    };
    let same_shape = |a: &Matrix, b: &Matrix| -> Result<()> {
        if a.shape() != b.shape() {
            Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())))
        } else {
            Ok(())
        }
    };

    let out = match op {
        Op::Input(m) => m.clone(),
        Op::Param(id) => params.values(*id).clone(),
        Op::Gather { param, rows } => {
            let table = params.values(*param);
            if let Some(&bad) = rows.iter().find(|&&r| r >= table.rows()) {
                return Err(shape_err(format!(
                    "row {bad} out of range for {} rows of {}",
                    table.rows(),
                    params.get(*param).name
                )));
            }
            table.gather_rows(rows)
        }
        Op::Affine { x, w, b } => {
            let (xv, wv, bv) = (val(x)?, val(w)?, val(b)?);
            if xv.cols() != wv.rows() || bv.shape() != (1, wv.cols()) {
                return Err(shape_err(format!(
                    "x {:?}, w {:?}, b {:?}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                )));
            }
            let mut out = Matrix::zeros(xv.rows(), wv.cols());
            for r in 0..xv.rows() {
                out.row_mut(r).copy_from_slice(bv.as_slice());
            }
            matmul_acc(xv, wv, &mut out);
            out
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            if av.cols() != bv.rows() {
                return Err(shape_err(format!("{:?} · {:?}", av.shape(), bv.shape())));
            }
            av.matmul(bv)
        }
        Op::MatMulT(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            if av.cols() != bv.cols() {
                return Err(shape_err(format!("{:?} · {:?}ᵀ", av.shape(), bv.shape())));
            }
            av.matmul_t(bv)
        }
        Op::Concat(parts) => {
            let values = parts.iter().map(&val).collect::<Result<Vec<_>>>()?;
            let Some(first) = values.first() else {
                return Err(shape_err("no inputs".into()));
            };
            let rows = first.rows();
            if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
                return Err(shape_err(format!("row count {} vs {rows}", bad.rows())));
            }
            let cols: usize = values.iter().map(|v| v.cols()).sum();
            let mut out = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let dst = out.row_mut(r);
                let mut offset = 0;
                for v in &values {
                    dst[offset..offset + v.cols()].copy_from_slice(v.row(r));
                    offset += v.cols();
                }
            }
            out
        }
        Op::Hadamard(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            same_shape(av, bv)?;
            zip_map(av, bv, |x, y| x * y)
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            same_shape(av, bv)?;
            Matrix::column((0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect())
        }
        Op::Bilinear { x, m, g } => {
            let (xv, mv, gv) = (val(x)?, val(m)?, val(g)?);
            if xv.cols() != mv.rows() || gv.cols() != mv.cols() || xv.rows() != gv.rows() {
                return Err(shape_err(format!(
                    "x {:?}, M {:?}, g {:?}",
                    xv.shape(),
                    mv.shape(),
                    gv.shape()
                )));
            }
            let mg = gv.matmul_t(mv);
            let out = Matrix::column((0..xv.rows()).map(|r| dot(xv.row(r), mg.row(r))).collect());
            return Ok((out, Some(mg)));
        }
        Op::Sigmoid(x) => val(x)?.map(sigmoid),
        Op::Relu(x) | Op::Max0(x) => val(x)?.map(|v| v.max(0.0)),
        Op::Softmax(x) => {
            let xv = val(x)?;
            let mut out = Matrix::zeros(xv.rows(), xv.cols());
            for r in 0..xv.rows() {
                softmax_row(xv.row(r), out.row_mut(r));
            }
            out
        }
        Op::Log(x) => val(x)?.map(f64::ln),
        Op::Add(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            same_shape(av, bv)?;
            zip_map(av, bv, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            let (av, bv) = (val(a)?, val(b)?);
            same_shape(av, bv)?;
            zip_map(av, bv, |x, y| x - y)
        }
        Op::Scale(x, f) => {
            let f = *f;
            val(x)?.map(|v| v * f)
        }
        Op::Offset(x, c) => {
            let c = *c;
            val(x)?.map(|v| v + c)
        }
        Op::Sum(x) => {
            let mut acc = 0.0;
            for &v in val(x)?.as_slice() {
                acc += v;
            }
            Matrix::scalar(acc)
        }
        Op::L2Normalize(x) => {
            let xv = val(x)?;
            let mut out = xv.clone();
            let mut norms = Matrix::zeros(xv.rows(), 1);
            for r in 0..xv.rows() {
                let n = dot(xv.row(r), xv.row(r)).sqrt();
                norms.set(r, 0, n);
                let denom = n + NORM_EPS;
                out.row_mut(r).iter_mut().for_each(|v| *v /= denom);
            }
            return Ok((out, Some(norms)));
        }
        Op::BroadcastCols { x, cols } => {
            let xv = val(x)?;
            if xv.cols() != 1 {
                return Err(shape_err(format!("expected a column, got {:?}", xv.shape())));
            }
            let mut out = Matrix::zeros(xv.rows(), *cols);
            for r in 0..xv.rows() {
                out.row_mut(r).fill(xv.get(r, 0));
            }
            out
        }
        Op::SoftmaxXent { logits, labels } => {
            let lv = val(logits)?;
            if labels.len() != lv.rows() || labels.iter().any(|&l| l >= lv.cols()) {
                return Err(shape_err(format!(
                    "{} labels for logits {:?}",
                    labels.len(),
                    lv.shape()
                )));
            }
            let mut probs = Matrix::zeros(lv.rows(), lv.cols());
            let mut out = Matrix::zeros(lv.rows(), 1);
            for (r, &label) in labels.iter().enumerate() {
                let row = lv.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for &v in row {
                    total += (v - max).exp();
                }
                let log_z = max + total.ln();
                out.set(r, 0, log_z - row[label]);
                softmax_row(row, probs.row_mut(r));
            }
            return Ok((out, Some(probs)));
        }
        Op::Bce { probs, labels } => {
            let pv = val(probs)?;
            if labels.len() != pv.len() {
                return Err(shape_err(format!(
                    "{} labels for probabilities {:?}",
                    labels.len(),
                    pv.shape()
                )));
            }
            let mut acc = 0.0;
            for (&p, &y) in pv.as_slice().iter().zip(labels) {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            Matrix::scalar(acc)
        }
    };
    Ok((out, None))
}
