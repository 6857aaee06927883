//! Reverse-mode differentiation over a linear tape of dense matrix ops.
//!
//! Every op appends a node whose inputs already live on the tape, so the
//! node order is a topological order and the backward pass is a single
//! reverse sweep.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-to-segment assignment for the segment ops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    ids: Vec<u32>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<u32>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s as usize >= count) {
            return Err(Error::shape(
                "segments",
                format!("segment id {bad} out of range for {count} segments"),
            ));
        }
        Ok(Self { ids, count })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of rows in each segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &s in &self.ids {
            sizes[s as usize] += 1;
        }
        sizes
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[u32]>),
    HeadDot(Var, Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Mean(Var),
    Sum(Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentWeightedSum {
        weights: Var,
        values: Var,
        gather: Option<Arc<[u32]>>,
        segments: Arc<Segments>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zero when unreachable.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, x.data(), false, y.data(), false, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|v| self.value(**v).rows() != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {rows} vs {}", self.value(*bad).rows()),
            ));
        }
        let cols: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for v in parts {
                let src = self.value(*v).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {:?}", x.shape()),
            ));
        }
        let mut out = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    /// `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[u32]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= x.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {:?}", x.shape()),
            ));
        }
        let mut out = Tensor::zeros(index.len(), x.cols());
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(x.row(i as usize));
        }
        Ok(self.push(out, Op::GatherRows(a, index), &[a]))
    }

    /// Per-head dot products: `x` is `n×(H·d)` with head `h` in columns
    /// `h·d..(h+1)·d`, `heads` is `H×d`; `out[r, h] = x[r, h-block] · heads[h]`.
    pub fn head_dot(&mut self, x: Var, heads: Var) -> Result<Var> {
        let (xv, hv) = (self.value(x), self.value(heads));
        let (h, d) = (hv.rows(), hv.cols());
        if xv.cols() != h * d {
            return Err(Error::shape(
                "head_dot",
                format!("{:?} against {h} heads of width {d}", xv.shape()),
            ));
        }
        let mut out = Tensor::zeros(xv.rows(), h);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            for k in 0..h {
                out.set(r, k, dot(&row[k * d..(k + 1) * d], hv.row(k)));
            }
        }
        Ok(self.push(out, Op::HeadDot(x, heads), &[x, heads]))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), &[a])
    }

    /// Mean of all elements, as `1×1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let out = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        Ok(self.push(out, Op::Mean(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Softmax of each column within each segment of rows. Empty segments
    /// produce nothing.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<Segments>) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != segments.len() {
            return Err(Error::shape(
                "segment_softmax",
                format!("{} rows for {} segment ids", x.rows(), segments.len()),
            ));
        }
        let cols = x.cols();
        let mut max = vec![f64::NEG_INFINITY; segments.count() * cols];
        for (r, &s) in segments.ids().iter().enumerate() {
            for (c, &v) in x.row(r).iter().enumerate() {
                let m = &mut max[s as usize * cols + c];
                *m = m.max(v);
            }
        }
        let mut out = Tensor::zeros(x.rows(), cols);
        let mut total = vec![0.0; segments.count() * cols];
        for (r, &s) in segments.ids().iter().enumerate() {
            for c in 0..cols {
                let e = (x.get(r, c) - max[s as usize * cols + c]).exp();
                out.set(r, c, e);
                total[s as usize * cols + c] += e;
            }
        }
        for (r, &s) in segments.ids().iter().enumerate() {
            for c in 0..cols {
                let v = out.get(r, c) / total[s as usize * cols + c];
                out.set(r, c, v);
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(logits, segments), &[logits]))
    }

    /// Weighted per-segment sum with per-head weights.
    ///
    /// `weights` is `E×H`, `values` is `R×(H·d)`. Row `e` contributes
    /// `weights[e, h] * values[gather[e], h-block]` to
    /// `out[segment[e], h-block]`; without `gather`, row `e` of `values` is
    /// used directly. Segments with no rows stay zero.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        values: Var,
        gather: Option<Arc<[u32]>>,
        segments: Arc<Segments>,
    ) -> Result<Var> {
        let (w, x) = (self.value(weights), self.value(values));
        let heads = w.cols();
        if heads == 0 || x.cols() % heads != 0 {
            return Err(Error::shape(
                "segment_weighted_sum",
                format!("{} value columns for {heads} heads", x.cols()),
            ));
        }
        let rows = w.rows();
        if segments.len() != rows {
            return Err(Error::shape(
                "segment_weighted_sum",
                format!("{rows} weight rows for {} segment ids", segments.len()),
            ));
        }
        match &gather {
            Some(g) => {
                if g.len() != rows {
                    return Err(Error::shape(
                        "segment_weighted_sum",
                        format!("{rows} weight rows for {} gather indices", g.len()),
                    ));
                }
                if let Some(&bad) = g.iter().find(|&&i| i as usize >= x.rows()) {
                    return Err(Error::shape(
                        "segment_weighted_sum",
                        format!("gather row {bad} of {:?}", x.shape()),
                    ));
                }
            }
            None if x.rows() != rows => {
                return Err(Error::shape(
                    "segment_weighted_sum",
                    format!("{rows} weight rows for {} value rows", x.rows()),
                ))
            }
            None => {}
        }
        let d = x.cols() / heads;
        let mut out = Tensor::zeros(segments.count(), x.cols());
        for (e, &s) in segments.ids().iter().enumerate() {
            let src = gather.as_ref().map_or(e, |g| g[e] as usize);
            let (vrow, wrow) = (x.row(src), w.row(e));
            let orow = out.row_mut(s as usize);
            for h in 0..heads {
                let a = wrow[h];
                for (o, v) in orow[h * d..(h + 1) * d].iter_mut().zip(&vrow[h * d..(h + 1) * d]) {
                    *o += a * v;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SegmentWeightedSum {
                weights,
                values,
                gather,
                segments,
            },
            &[weights, values],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let l = self.value(loss);
        if l.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", l.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, delta: Tensor| accumulate(grads, v, delta);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if wants(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, g.data(), false, y.data(), true, da.data_mut(), false);
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, x.data(), true, g.data(), false, db.data_mut(), false);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    acc(*a, zip_map(g, y, |g, y| g * y));
                }
                if wants(*b) {
                    acc(*b, zip_map(g, x, |g, x| g * x));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*row) {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*row, dr);
                }
            }
            Op::Affine(a, scale) => acc(*a, g.map(|x| x * scale)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for v in parts {
                    let w = self.value(*v).cols();
                    if wants(*v) {
                        let mut d = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(*v, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (r, &src) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(src as usize).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, d);
            }
            Op::HeadDot(x, heads) => {
                let (xv, hv) = (self.value(*x), self.value(*heads));
                let (h, d) = (hv.rows(), hv.cols());
                if wants(*x) {
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let row = dx.row_mut(r);
                        for k in 0..h {
                            let gk = g.get(r, k);
                            for (o, a) in row[k * d..(k + 1) * d].iter_mut().zip(hv.row(k)) {
                                *o = gk * a;
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if wants(*heads) {
                    let mut dh = Tensor::zeros(h, d);
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        for k in 0..h {
                            let gk = g.get(r, k);
                            for (o, v) in dh.row_mut(k).iter_mut().zip(&row[k * d..(k + 1) * d]) {
                                *o += gk * v;
                            }
                        }
                    }
                    acc(*heads, dh);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| if x >= 0.0 { g } else { g * slope }));
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| if x >= 0.0 { g } else { g * x.exp() }));
            }
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |g, y| g * y * (1.0 - y))),
            Op::Log(a) => acc(*a, zip_map(g, self.value(*a), |g, x| g / x)),
            // The derivative is unbounded at 0; the zero subgradient is used there.
            Op::Sqrt(a) => acc(
                *a,
                zip_map(g, &node.value, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }),
            ),
            Op::Square(a) => acc(*a, zip_map(g, self.value(*a), |g, x| 2.0 * g * x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                zip_map(g, self.value(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            ),
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = g.data()[0] / x.len() as f64;
                acc(*a, Tensor::filled(x.rows(), x.cols(), v));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dot_gy = vec![0.0; segments.count() * cols];
                for (r, &s) in segments.ids().iter().enumerate() {
                    for c in 0..cols {
                        dot_gy[s as usize * cols + c] += g.get(r, c) * y.get(r, c);
                    }
                }
                let mut d = Tensor::zeros(y.rows(), cols);
                for (r, &s) in segments.ids().iter().enumerate() {
                    for c in 0..cols {
                        let v = y.get(r, c) * (g.get(r, c) - dot_gy[s as usize * cols + c]);
                        d.set(r, c, v);
                    }
                }
                acc(*a, d);
            }
            Op::SegmentWeightedSum {
                weights,
                values,
                gather,
                segments,
            } => {
                let (w, x) = (self.value(*weights), self.value(*values));
                let heads = w.cols();
                let d = x.cols() / heads;
                let mut dw = wants(*weights).then(|| Tensor::zeros(w.rows(), heads));
                let mut dx = wants(*values).then(|| Tensor::zeros(x.rows(), x.cols()));
                for (e, &s) in segments.ids().iter().enumerate() {
                    let src = gather.as_ref().map_or(e, |gi| gi[e] as usize);
                    let grow = g.row(s as usize);
                    for h in 0..heads {
                        let gb = &grow[h * d..(h + 1) * d];
                        if let Some(dw) = dw.as_mut() {
                            let v = dot(gb, &x.row(src)[h * d..(h + 1) * d]);
                            dw.set(e, h, dw.get(e, h) + v);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let a = w.get(e, h);
                            for (o, gv) in dx.row_mut(src)[h * d..(h + 1) * d].iter_mut().zip(gb) {
                                *o += a * gv;
                            }
                        }
                    }
                }
                if let Some(dw) = dw {
                    acc(*weights, dw);
                }
                if let Some(dx) = dx {
                    acc(*values, dx);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
