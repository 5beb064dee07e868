//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every forward operation appends a node holding its value and the
//! information needed to propagate gradients. [`Tape::backward`] walks
//! the nodes in reverse order and returns gradients for every parameter
//! leaf. Vectors are represented as `1 x n` matrices.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{NnError, Result};
use crate::param::{Gradients, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BCE_EPS: f64 = 1e-7;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>, Vec<usize>),
    AddScaledRow(Var, Var, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    MeanRows(Var),
    SumAll(Var),
    Dropout(Var, Array2<f64>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Array2<f64>,
        rstd: Vec<f64>,
    },
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records forward computations for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape(a: &Array2<f64>) -> Vec<usize> {
    a.shape().to_vec()
}

fn mismatch(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: shape(a),
        rhs: shape(b),
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.consumed = false;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", va, vb));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(mismatch("matmul_t", va, vb));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("add", va, vb));
        }
        let out = va + vb;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || va.ncols() != vr.ncols() {
            return Err(mismatch("add_row", va, vr));
        }
        let out = va + vr;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("sub", va, vb));
        }
        let out = va - vb;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("mul", va, vb));
        }
        let out = va * vb;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_masked(a, None)
    }

    /// Row-wise softmax where columns with `keep[j] == false` receive
    /// exactly zero weight. Every row must keep at least one column.
    pub fn softmax_rows_masked(&mut self, a: Var, keep: Option<&[bool]>) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros(va.raw_dim());
        for (src, mut dst) in va.outer_iter().zip(out.outer_iter_mut()) {
            let kept = |j: usize| keep.map_or(true, |k| k[j]);
            let max = src
                .iter()
                .enumerate()
                .filter(|(j, _)| kept(*j))
                .map(|(_, x)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, (s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
                if kept(j) {
                    *d = (s - max).exp();
                    total += *d;
                }
            }
            dst.mapv_inplace(|x| x / total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        for p in parts {
            if self.value(*p).nrows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(*p)));
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).ncols();
        for p in parts {
            if self.value(*p).ncols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), self.value(*p)));
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.ncols() {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                lhs: shape(va),
                rhs: vec![start, end],
            });
        }
        let out = va.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, end)))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "slice_rows",
                lhs: shape(va),
                rhs: vec![start, end],
            });
        }
        let out = va.slice(s![start..end, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start, end)))
    }

    /// Embedding lookup: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let mut out = Array2::zeros((index.len(), va.ncols()));
        for (i, &r) in index.iter().enumerate() {
            if r >= va.nrows() {
                return Err(NnError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: va.nrows(),
                });
            }
            out.row_mut(i).assign(&va.row(r));
        }
        Ok(self.push(out, Op::GatherRows(a, index.to_vec())))
    }

    /// `out[target[i]] += a[i]` into a zero matrix with `rows` rows.
    /// Rows are accumulated in input order.
    pub fn scatter_add_rows(&mut self, a: Var, target: &[usize], rows: usize) -> Result<Var> {
        let va = self.value(a);
        if target.len() != va.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: shape(va),
                rhs: vec![target.len()],
            });
        }
        let mut out = Array2::zeros((rows, va.ncols()));
        for (i, &t) in target.iter().enumerate() {
            if t >= rows {
                return Err(NnError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: t,
                    len: rows,
                });
            }
            let mut dst = out.row_mut(t);
            dst += &va.row(i);
        }
        Ok(self.push(out, Op::ScatterAddRows(a, target.to_vec())))
    }

    /// `out[dst[i]] += a[src[i]]` into a zero matrix with `rows` rows,
    /// accumulated in input order. Equivalent to a gather followed by a
    /// scatter-add without the intermediate.
    pub fn segment_sum(&mut self, a: Var, src: &[usize], dst: &[usize], rows: usize) -> Result<Var> {
        let va = self.value(a);
        if src.len() != dst.len() {
            return Err(NnError::ShapeMismatch {
                op: "segment_sum",
                lhs: vec![src.len()],
                rhs: vec![dst.len()],
            });
        }
        let mut out = Array2::zeros((rows, va.ncols()));
        for (&s, &d) in src.iter().zip(dst) {
            if s >= va.nrows() {
                return Err(NnError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    len: va.nrows(),
                });
            }
            if d >= rows {
                return Err(NnError::IndexOutOfRange {
                    op: "segment_sum",
                    index: d,
                    len: rows,
                });
            }
            let mut row = out.row_mut(d);
            row += &va.row(s);
        }
        Ok(self.push(out, Op::SegmentSum(a, src.to_vec(), dst.to_vec())))
    }

    /// `out[i] = a[i] + weights[i] * row` for a `1 x c` row.
    pub fn add_scaled_row(&mut self, a: Var, row: Var, weights: &[f64]) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.dim() != (1, va.ncols()) {
            return Err(mismatch("add_scaled_row", va, vr));
        }
        if weights.len() != va.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "add_scaled_row",
                lhs: shape(va),
                rhs: vec![weights.len()],
            });
        }
        let mut out = va.clone();
        for (mut r, &w) in out.outer_iter_mut().zip(weights) {
            r.scaled_add(w, &vr.row(0));
        }
        Ok(self.push(out, Op::AddScaledRow(a, row, weights.to_vec())))
    }

    /// Multiplies row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let va = self.value(a);
        if weights.len() != va.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "scale_rows",
                lhs: shape(va),
                rhs: vec![weights.len()],
            });
        }
        let mut out = va.clone();
        for (mut r, w) in out.outer_iter_mut().zip(weights) {
            r.mapv_inplace(|x| x * w);
        }
        Ok(self.push(out, Op::ScaleRows(a, weights.to_vec())))
    }

    /// Mean over rows, producing a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = va
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a))
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidDropout(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask =
            Array2::from_shape_fn(self.value(a).raw_dim(), |_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            });
        let out = self.value(a) * &mask;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Row-wise layer normalisation with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        if vg.dim() != (1, vx.ncols()) {
            return Err(mismatch("layer_norm", vx, vg));
        }
        if vb.dim() != (1, vx.ncols()) {
            return Err(mismatch("layer_norm", vx, vb));
        }
        let cols = vx.ncols() as f64;
        let mut normed = vx.clone();
        let mut rstd = Vec::with_capacity(vx.nrows());
        for mut r in normed.outer_iter_mut() {
            let mean = r.sum() / cols;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            r.mapv_inplace(|v| (v - mean) * inv);
            rstd.push(inv);
        }
        let out = &normed * vg + vb;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
        ))
    }

    /// Mean binary cross-entropy over all entries of `probs`, with the
    /// probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let vp = self.value(probs);
        if vp.len() != labels.len() {
            return Err(NnError::ShapeMismatch {
                op: "bce_loss",
                lhs: shape(vp),
                rhs: vec![labels.len()],
            });
        }
        let n = labels.len() as f64;
        let total: f64 = vp
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.push(
            Array2::from_elem((1, 1), total / n),
            Op::Bce(probs, labels.to_vec()),
        ))
    }

    /// Propagates gradients from the scalar `loss` and returns gradients
    /// for every parameter reachable from it. The tape is cleared; a
    /// second call without a new forward pass is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed || self.nodes.is_empty() {
            return Err(NnError::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(NnError::NonScalarLoss(shape(lv)));
        }
        let nodes = std::mem::take(&mut self.nodes);
        self.consumed = true;

        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.0.entry(*id) {
                    std::collections::btree_map::Entry::Occupied(mut e) => *e.get_mut() += &g,
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&val(*b).t());
                    let gb = val(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(val(*b));
                    let gb = g.t().dot(val(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * val(*b);
                    let gb = &g * val(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for ((gy, yy), mut gx) in g.outer_iter().zip(y.outer_iter()).zip(ga.outer_iter_mut()) {
                        let dot: f64 = gy.iter().zip(yy.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut gx)
                            .and(&gy)
                            .and(&yy)
                            .for_each(|d, &dy, &yv| *d = yv * (dy - dot));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    for (i, &r) in index.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, target) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    for (i, &t) in target.iter().enumerate() {
                        ga.row_mut(i).assign(&g.row(t));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, src, dst) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    for (&s, &d) in src.iter().zip(dst) {
                        let mut row = ga.row_mut(s);
                        row += &g.row(d);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::AddScaledRow(a, r, weights) => {
                    let mut gr = Array2::zeros((1, g.ncols()));
                    for (grow, &w) in g.outer_iter().zip(weights) {
                        gr.row_mut(0).scaled_add(w, &grow);
                    }
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::ScaleRows(a, weights) => {
                    let mut ga = g;
                    for (mut r, w) in ga.outer_iter_mut().zip(weights) {
                        r.mapv_inplace(|x| x * w);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let rows = val(*a).nrows();
                    let ga = Array2::from_shape_fn(val(*a).raw_dim(), |(_, j)| g[[0, j]] / rows as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(val(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g * mask),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    rstd,
                } => {
                    let vg = val(*gain);
                    let ggain = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dnorm = &g * vg;
                    let cols = normed.ncols() as f64;
                    let mut gx = Array2::zeros(normed.raw_dim());
                    for (((dn, xn), mut out_row), inv) in dnorm
                        .outer_iter()
                        .zip(normed.outer_iter())
                        .zip(gx.outer_iter_mut())
                        .zip(rstd)
                    {
                        let mean_d = dn.sum() / cols;
                        let mean_dx = dn.iter().zip(xn.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        Zip::from(&mut out_row)
                            .and(&dn)
                            .and(&xn)
                            .for_each(|o, &d, &xh| *o = inv * (d - mean_d - xh * mean_dx));
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                    acc(&mut grads, *x, gx);
                }
                Op::Bce(p, labels) => {
                    let vp = val(*p);
                    let n = labels.len() as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gp = Array2::zeros(vp.raw_dim());
                    for ((d, &pv), &y) in gp.iter_mut().zip(vp.iter()).zip(labels) {
                        *d = if pv < BCE_EPS || pv > 1.0 - BCE_EPS {
                            0.0
                        } else {
                            scale * (-(y / pv) + (1.0 - y) / (1.0 - pv))
                        };
                    }
                    acc(&mut grads, *p, gp);
                }
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
