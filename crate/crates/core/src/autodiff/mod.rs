//! Dense reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every primitive in creation order, so parents always
//! precede children and [`Tape::backward`] is a single reverse sweep.
//! Handles are plain indices ([`Var`]); all arithmetic goes through the
//! tape's methods.

mod constant;
mod gradcheck;

pub use constant::{ConstMatrix, Segments, SparseRows};
pub use gradcheck::{finite_diff_check, FdReport, ParamReport};

use std::fmt;

use ndarray::{Array2, Axis, Zip};

use crate::{Error, Result};

/// Guard for logs and divisions.
pub const EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    ConstMatMul(Box<ConstMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Segments),
    SegmentMean(Var, Segments),
    SegmentSoftmax(Var, Segments),
    MeanRows(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    L2Normalize(Var, Vec<f64>),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    RowSum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::ConstMatMul(..) => "const_matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentMean(..) => "segment_mean",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::MeanRows(..) => "mean_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm_rows",
            Op::L2Normalize(..) => "l2_normalize_rows",
            Op::Log(..) => "log",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MulCol(a, b) => {
                vec![*a, *b]
            }
            Op::ConcatCols(parts) => parts.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConstMatMul(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentMean(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::MeanRows(a)
            | Op::SoftmaxRows(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::L2Normalize(a, _)
            | Op::Log(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::RowSum(a) => vec![*a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive applications for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    consumed: bool,
    diagnostics: Vec<String>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Gradient from the last [`Tape::backward`], if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Notes raised during the forward pass (zero rows met by
    /// normalization, and the like).
    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn push(&mut self, value: Array2<f64>, op: Op, leaf_grad: bool) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} output at tape position {}",
                op.name(),
                self.nodes.len()
            )));
        }
        let needs_grad = match op {
            Op::Leaf => leaf_grad,
            ref other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), false)
    }

    /// `lhs · w` for a constant left operand.
    pub fn const_matmul(&mut self, lhs: ConstMatrix, w: Var) -> Result<Var> {
        let sw = self.shape(w);
        if lhs.ncols() != sw.0 {
            return Err(shape_err(
                "const_matmul",
                format!("({}, {}) x {sw:?}", lhs.nrows(), lhs.ncols()),
            ));
        }
        let v = lhs.matmul(self.value(w).view());
        self.push(v, Op::ConstMatMul(Box::new(lhs), w), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Adds a `1×d` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sr != (1, sx.1) {
            return Err(shape_err("add_row", format!("{sx:?} + {sr:?}")));
        }
        let v = self.value(x) + self.value(row);
        self.push(v, Op::AddRow(x, row), false)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c), false)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x) + c;
        self.push(v, Op::AddScalar(x), false)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), false)
    }

    /// Scales row `i` of `x` by `col[i, 0]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (sx, sc) = (self.shape(x), self.shape(col));
        if sc != (sx.0, 1) {
            return Err(shape_err("mul_col", format!("{sx:?} * {sc:?}")));
        }
        let v = self.value(x) * self.value(col);
        self.push(v, Op::MulCol(x, col), false)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(shape_err(
                "concat_cols",
                format!("{} vs {} rows", rows, self.shape(bad).0),
            ));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(v, Op::ConcatCols(parts.to_vec()), false)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.shape(x).1;
        if start > end || end > cols {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {cols}")));
        }
        let v = self.value(x).slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(x, start), false)
    }

    /// Row `k` of the result is row `idx[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let rows = self.shape(x).0;
        if let Some(&i) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {i} of {rows}")));
        }
        let v = self.value(x).select(Axis(0), idx);
        self.push(v, Op::GatherRows(x, idx.to_vec()), false)
    }

    fn check_segments(&self, op: &str, x: Var, segs: &Segments) -> Result<()> {
        if segs.total() != self.shape(x).0 {
            return Err(shape_err(
                op,
                format!("segments cover {} rows, input has {}", segs.total(), self.shape(x).0),
            ));
        }
        Ok(())
    }

    /// Row `s` of the result sums the rows of segment `s`.
    pub fn segment_sum(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        self.check_segments("segment_sum", x, segs)?;
        let xv = self.value(x);
        let mut v = Array2::zeros((segs.len(), xv.ncols()));
        for (s, r) in segs.iter().enumerate() {
            v.row_mut(s).assign(&xv.slice(ndarray::s![r, ..]).sum_axis(Axis(0)));
        }
        self.push(v, Op::SegmentSum(x, segs.clone()), false)
    }

    /// Row `s` of the result averages the rows of segment `s` (zero for an
    /// empty segment).
    pub fn segment_mean(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        self.check_segments("segment_mean", x, segs)?;
        let xv = self.value(x);
        let mut v = Array2::zeros((segs.len(), xv.ncols()));
        for (s, r) in segs.iter().enumerate() {
            if !r.is_empty() {
                let n = r.len() as f64;
                v.row_mut(s)
                    .assign(&(xv.slice(ndarray::s![r, ..]).sum_axis(Axis(0)) / n));
            }
        }
        self.push(v, Op::SegmentMean(x, segs.clone()), false)
    }

    /// Softmax of a column vector within each segment.
    pub fn segment_softmax(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        self.check_segments("segment_softmax", x, segs)?;
        if self.shape(x).1 != 1 {
            return Err(shape_err("segment_softmax", format!("{:?} is not a column", self.shape(x))));
        }
        let xv = self.value(x);
        let mut v = Array2::zeros(xv.raw_dim());
        for r in segs.iter() {
            if r.is_empty() {
                continue;
            }
            let max = r.clone().map(|i| xv[[i, 0]]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in r.clone() {
                let e = (xv[[i, 0]] - max).exp();
                v[[i, 0]] = e;
                total += e;
            }
            for i in r {
                v[[i, 0]] /= total;
            }
        }
        self.push(v, Op::SegmentSoftmax(x, segs.clone()), false)
    }

    /// `1×d` mean over all rows.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() == 0 {
            return Err(shape_err("mean_rows", "no rows".into()));
        }
        let v = xv.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x), false)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let total = row.sum();
            row /= total;
        }
        self.push(v, Op::SoftmaxRows(x), false)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x), false)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mapv(|z| z.max(0.0));
        self.push(v, Op::Relu(x), false)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1×d` gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (sx, sg, sb) = (self.shape(x), self.shape(gain), self.shape(bias));
        if sx.1 == 0 || sg != (1, sx.1) || sb != (1, sx.1) {
            return Err(shape_err("layer_norm_rows", format!("{sx:?} with {sg:?}, {sb:?}")));
        }
        let xv = self.value(x);
        let d = sx.1 as f64;
        let mut xhat = Array2::zeros(sx);
        let mut inv_std = Vec::with_capacity(sx.0);
        for (xr, mut hr) in xv.rows().into_iter().zip(xhat.rows_mut()) {
            let mu = xr.sum() / d;
            let var = xr.iter().map(|z| (z - mu) * (z - mu)).sum::<f64>() / d;
            let is = 1.0 / (var + EPS).sqrt();
            Zip::from(&mut hr).and(&xr).for_each(|h, &z| *h = (z - mu) * is);
            inv_std.push(is);
        }
        let v = &xhat * self.value(gain) + self.value(bias);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            false,
        )
    }

    /// Divides each row by its Euclidean norm; rows with norm below
    /// [`EPS`] map to zero and are reported in the diagnostics.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        let mut zero_rows = 0;
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n < EPS {
                row.fill(0.0);
                zero_rows += 1;
                norms.push(0.0);
            } else {
                row /= n;
                norms.push(n);
            }
        }
        if zero_rows > 0 {
            self.diagnostics.push(format!(
                "l2_normalize_rows at tape position {}: {zero_rows} zero row(s)",
                self.nodes.len()
            ));
        }
        self.push(v, Op::L2Normalize(x, norms), false)
    }

    /// Natural log of `max(x, EPS)`.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mapv(|z| z.max(EPS).ln());
        self.push(v, Op::Log(x), false)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(x).mapv(|z| z.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), false)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::Sum(x), false)
    }

    /// Per-row sums, as an `n×1` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(x), false)
    }

    /// Fingerprint of which side of each relu/clamp kink every entry lies
    /// on. Two evaluations with equal fingerprints are on the same smooth
    /// piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bit: u8| {
            h ^= bit as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => self.nodes[x.0].value.iter().for_each(|&z| feed((z > 0.0) as u8)),
                Op::Clamp(x, lo, hi) => self.nodes[x.0]
                    .value
                    .iter()
                    .for_each(|&z| feed(if z < lo { 0 } else if z > hi { 2 } else { 1 })),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a 1×1 `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        if grads.iter().flatten().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    acc(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::ConstMatMul(lhs, w) => {
                if wants(*w) {
                    acc(grads, *w, lhs.t_matmul(g.view()));
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if wants(p) {
                        acc(grads, p, g.clone());
                    }
                }
            }
            Op::AddRow(x, row) => {
                if wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if wants(*row) {
                    acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    acc(grads, *x, g * *c);
                }
            }
            Op::AddScalar(x) => {
                if wants(*x) {
                    acc(grads, *x, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g * val(*b));
                }
                if wants(*b) {
                    acc(grads, *b, g * val(*a));
                }
            }
            Op::MulCol(x, col) => {
                if wants(*x) {
                    acc(grads, *x, g * val(*col));
                }
                if wants(*col) {
                    acc(grads, *col, (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if wants(p) {
                        acc(grads, p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let mut full = Array2::zeros(val(*x).raw_dim());
                    full.slice_mut(ndarray::s![.., *start..*start + g.ncols()]).assign(g);
                    acc(grads, *x, full);
                }
            }
            Op::GatherRows(x, idx) => {
                if wants(*x) {
                    let mut full = Array2::zeros(val(*x).raw_dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = full.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(grads, *x, full);
                }
            }
            Op::SegmentSum(x, segs) | Op::SegmentMean(x, segs) => {
                if wants(*x) {
                    let mean = matches!(node.op, Op::SegmentMean(..));
                    let mut full = Array2::zeros(val(*x).raw_dim());
                    for (s, r) in segs.iter().enumerate() {
                        let c = if mean { 1.0 / r.len().max(1) as f64 } else { 1.0 };
                        for i in r {
                            full.row_mut(i).scaled_add(c, &g.row(s));
                        }
                    }
                    acc(grads, *x, full);
                }
            }
            Op::SegmentSoftmax(x, segs) => {
                if wants(*x) {
                    let y = &node.value;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for r in segs.iter() {
                        let dot: f64 = r.clone().map(|i| g[[i, 0]] * y[[i, 0]]).sum();
                        for i in r {
                            dx[[i, 0]] = y[[i, 0]] * (g[[i, 0]] - dot);
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::MeanRows(x) => {
                if wants(*x) {
                    let n = val(*x).nrows() as f64;
                    let full = Array2::from_shape_fn(val(*x).raw_dim(), |(_, j)| g[[0, j]] / n);
                    acc(grads, *x, full);
                }
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let y = &node.value;
                    let mut dx = g * y;
                    for (mut dr, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = dr.sum();
                        Zip::from(&mut dr).and(&yr).for_each(|d, &p| *d -= p * dot);
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = &node.value;
                    acc(grads, *x, Zip::from(g).and(y).map_collect(|&gi, &yi| gi * yi * (1.0 - yi)));
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    acc(
                        grads,
                        *x,
                        Zip::from(g).and(val(*x)).map_collect(|&gi, &z| if z > 0.0 { gi } else { 0.0 }),
                    );
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if wants(*gain) {
                    acc(grads, *gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if wants(*bias) {
                    acc(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if wants(*x) {
                    let dxhat = g * val(*gain);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let h = xhat.row(i);
                        let mean_dh = dh.sum() / d;
                        let mean_dhh = dh.dot(&h) / d;
                        Zip::from(&mut row)
                            .and(&dh)
                            .and(&h)
                            .for_each(|o, &a, &b| *o = inv_std[i] * (a - mean_dh - b * mean_dhh));
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::L2Normalize(x, norms) => {
                if wants(*x) {
                    let y = &node.value;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        if norms[i] == 0.0 {
                            continue;
                        }
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.dot(&gr);
                        Zip::from(&mut row)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|o, &gi, &yi| *o = (gi - yi * dot) / norms[i]);
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    acc(
                        grads,
                        *x,
                        Zip::from(g)
                            .and(val(*x))
                            .map_collect(|&gi, &z| if z > EPS { gi / z } else { 0.0 }),
                    );
                }
            }
            Op::Clamp(x, lo, hi) => {
                if wants(*x) {
                    acc(
                        grads,
                        *x,
                        Zip::from(g)
                            .and(val(*x))
                            .map_collect(|&gi, &z| if z >= *lo && z <= *hi { gi } else { 0.0 }),
                    );
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    acc(grads, *x, Array2::from_elem(val(*x).raw_dim(), g[[0, 0]]));
                }
            }
            Op::RowSum(x) => {
                if wants(*x) {
                    let full = Array2::from_shape_fn(val(*x).raw_dim(), |(i, _)| g[[i, 0]]);
                    acc(grads, *x, full);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl fmt::Display for Tape {
    /// One line per node: position, primitive, shape and parents.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, node) in self.nodes.iter().enumerate() {
            let parents: Vec<String> = node.op.parents().iter().map(|p| p.0.to_string()).collect();
            writeln!(
                f,
                "{i:>5} {:<18} {:>5}x{:<5} [{}]{}",
                node.op.name(),
                node.value.nrows(),
                node.value.ncols(),
                parents.join(","),
                if node.needs_grad { " *" } else { "" }
            )?;
        }
        Ok(())
    }
}
