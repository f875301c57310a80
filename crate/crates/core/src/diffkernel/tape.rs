use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::array::{matmul_nt_into, matmul_tn_into};
use super::{Array, KernelError, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shared row-index list.
pub type Index = Arc<[u32]>;

enum Op<T> {
    Constant,
    Parameter,
    MatMul(Var, Var),
    Add(Var, Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Elementwise product; the right operand may be an `(n, 1)` column
    /// that scales each row.
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    GatherRows(Var, Index),
    ScatterAddRows(Var, Index),
    /// Segmented log-sum-exp of a column vector.
    LogSumExp(Var, Index),
    Dropout(Var, Vec<T>),
    EdgeMessage(EdgeMessage),
}

/// Arguments of [`Tape::edge_message`].
struct EdgeMessage {
    nodes: Var,
    relations: Var,
    alpha: Var,
    src: Index,
    rel: Index,
    dst: Index,
    dropout: Option<EdgeDropout>,
}

#[derive(Clone, Copy, Debug)]
struct EdgeDropout {
    p: f64,
    seed: u64,
}

impl EdgeDropout {
    /// Multiplier of entry `i`: `0` when dropped, `1 / (1 - p)` otherwise.
    /// Derived from a counter hash so the backward sweep needs no stored mask.
    fn factor<T: Scalar>(&self, i: u64) -> T {
        let mut z = self.seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let u = (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if u < self.p {
            T::zero()
        } else {
            T::from_f64(1.0 / (1.0 - self.p))
        }
    }
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameter => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::LogSumExp(..) => "logsumexp",
            Op::Dropout(..) => "dropout",
            Op::EdgeMessage(..) => "edge_message",
        }
    }

    fn inputs(&self) -> [Option<Var>; 3] {
        match *self {
            Op::Constant | Op::Parameter => [None, None, None],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::ConcatCols(a, b) | Op::ConcatRows(a, b) => {
                [Some(a), Some(b), None]
            }
            Op::Mul(a, b) => [Some(a), Some(b), None],
            Op::Relu(a) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Scale(a, _) | Op::Sum(a) => {
                [Some(a), None, None]
            }
            Op::GatherRows(a, _) | Op::ScatterAddRows(a, _) | Op::LogSumExp(a, _) => {
                [Some(a), None, None]
            }
            Op::Dropout(a, _) => [Some(a), None, None],
            Op::EdgeMessage(ref m) => [Some(m.nodes), Some(m.relations), Some(m.alpha)],
        }
    }
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Append order is a topological order, so the backward sweep simply walks
/// the nodes in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> KernelError {
    KernelError::ShapeMismatch { op, lhs, rhs }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite output from {}",
            op.name()
        );
        let needs_grad = match op {
            Op::Parameter => true,
            Op::Constant => false,
            ref other => other
                .inputs()
                .iter()
                .flatten()
                .any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf that receives a gradient.
    pub fn parameter(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Parameter)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(shape_err("concat_cols", x.shape(), y.shape()));
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = Array::new(x.rows(), cols, data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("concat_rows", x.shape(), y.shape()));
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        data.extend_from_slice(x.data());
        data.extend_from_slice(y.data());
        let out = Array::new(x.rows() + y.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// No-op activation; returns its input handle.
    pub fn identity(&mut self, a: Var) -> Var {
        a
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        let out = if x.shape() == y.shape() {
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
            Array::new(x.rows(), x.cols(), data)?
        } else if y.shape() == (x.rows(), 1) {
            let mut out = x.clone();
            for r in 0..x.rows() {
                let s = y.data()[r];
                out.row_mut(r).iter_mut().for_each(|v| *v = *v * s);
            }
            out
        } else {
            return Err(shape_err("mul", x.shape(), y.shape()));
        };
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Sum of all entries, as a 1x1 array.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Array::scalar(s), Op::Sum(a))
    }

    pub fn gather_rows(&mut self, a: Var, index: impl Into<Index>) -> Result<Var, KernelError> {
        let index = index.into();
        let x = self.value(a);
        let cols = x.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            let i = i as usize;
            if i >= x.rows() {
                return Err(KernelError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: x.rows(),
                });
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Array::new(index.len(), cols, data)?;
        Ok(self.push(out, Op::GatherRows(a, index)))
    }

    /// `out[index[i]] += a[i]` into an `(rows, a.cols)` array.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: impl Into<Index>,
        rows: usize,
    ) -> Result<Var, KernelError> {
        let index = index.into();
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(shape_err("scatter_add_rows", x.shape(), (index.len(), 1)));
        }
        let mut out = Array::zeros(rows, x.cols());
        for (r, &i) in index.iter().enumerate() {
            let i = i as usize;
            if i >= rows {
                return Err(KernelError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: i,
                    bound: rows,
                });
            }
            for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(r)) {
                *o = *o + v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, index)))
    }

    /// Segmented log-sum-exp of an `(n, 1)` column: entry `i` belongs to
    /// segment `segments[i]`; the result is `(num_segments, 1)`.
    pub fn logsumexp(
        &mut self,
        a: Var,
        segments: impl Into<Index>,
        num_segments: usize,
    ) -> Result<Var, KernelError> {
        let segments = segments.into();
        let x = self.value(a);
        if x.cols() != 1 || segments.len() != x.rows() {
            return Err(shape_err("logsumexp", x.shape(), (segments.len(), 1)));
        }
        let mut max = vec![T::neg_infinity(); num_segments];
        for (&s, &v) in segments.iter().zip(x.data()) {
            let s = s as usize;
            if s >= num_segments {
                return Err(KernelError::IndexOutOfRange {
                    op: "logsumexp",
                    index: s,
                    bound: num_segments,
                });
            }
            max[s] = max[s].max(v);
        }
        if let Some(empty) = max.iter().position(|m| *m == T::neg_infinity()) {
            return Err(KernelError::EmptySegment {
                op: "logsumexp",
                segment: empty,
            });
        }
        let mut acc = vec![T::zero(); num_segments];
        for (&s, &v) in segments.iter().zip(x.data()) {
            acc[s as usize] = acc[s as usize] + (v - max[s as usize]).exp();
        }
        let out: Vec<T> = acc.iter().zip(&max).map(|(&a, &m)| a.ln() + m).collect();
        Ok(self.push(Array::column(out), Op::LogSumExp(a, segments)))
    }

    /// Log-sum-exp over every entry of a column.
    pub fn logsumexp_all(&mut self, a: Var) -> Result<Var, KernelError> {
        let n = self.value(a).rows();
        self.logsumexp(a, vec![0u32; n], 1)
    }

    /// Inverted dropout. Outside training mode, or with `p == 0`, returns
    /// the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut R,
        train: bool,
    ) -> Result<Var, KernelError> {
        if !(0.0..1.0).contains(&p) {
            return Err(KernelError::Invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Array::new(x.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Attention-weighted messages summed per destination:
    /// `out[dst[e]] += alpha[e] * (nodes[src[e]] + relations[rel[e]])`, an
    /// `(rows, d)` array. Equivalent to gathering both operands, adding,
    /// scaling by the `(E, 1)` column `alpha` and scattering, without the
    /// `(E, d)` intermediates. With `dropout = Some((p, seed))` each message
    /// entry goes through inverted dropout keyed by `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_message(
        &mut self,
        nodes: Var,
        relations: Var,
        alpha: Var,
        src: impl Into<Index>,
        rel: impl Into<Index>,
        dst: impl Into<Index>,
        rows: usize,
        dropout: Option<(f64, u64)>,
    ) -> Result<Var, KernelError> {
        let (src, rel, dst) = (src.into(), rel.into(), dst.into());
        let (h, r, a) = (self.value(nodes), self.value(relations), self.value(alpha));
        if h.cols() != r.cols() {
            return Err(shape_err("edge_message", h.shape(), r.shape()));
        }
        let e = src.len();
        if a.shape() != (e, 1) || rel.len() != e || dst.len() != e {
            return Err(shape_err("edge_message", a.shape(), (e, 1)));
        }
        let dropout = match dropout {
            Some((p, _)) if !(0.0..1.0).contains(&p) => {
                return Err(KernelError::Invalid(format!("dropout rate {p} outside [0, 1)")));
            }
            Some((p, seed)) if p > 0.0 => Some(EdgeDropout { p, seed }),
            _ => None,
        };
        let check = |index: &Index, bound: usize| match index.iter().find(|&&i| i as usize >= bound) {
            Some(&i) => Err(KernelError::IndexOutOfRange {
                op: "edge_message",
                index: i as usize,
                bound,
            }),
            None => Ok(()),
        };
        check(&src, h.rows())?;
        check(&rel, r.rows())?;
        check(&dst, rows)?;

        let d = h.cols();
        let mut out = Array::zeros(rows, d);
        for i in 0..e {
            let w = a.data()[i];
            let hs = h.row(src[i] as usize);
            let hr = r.row(rel[i] as usize);
            let o = out.row_mut(dst[i] as usize);
            match &dropout {
                None => {
                    for k in 0..d {
                        o[k] = o[k] + (hs[k] + hr[k]) * w;
                    }
                }
                Some(m) => {
                    let base = (i * d) as u64;
                    for k in 0..d {
                        o[k] = o[k] + (hs[k] + hr[k]) * w * m.factor::<T>(base + k as u64);
                    }
                }
            }
        }
        let op = Op::EdgeMessage(EdgeMessage {
            nodes,
            relations,
            alpha,
            src,
            rel,
            dst,
            dropout,
        });
        Ok(self.push(out, op))
    }

    /// Reverse sweep from a scalar output. Every parameter leaf recorded on
    /// the tape gets a gradient; leaves the seed does not depend on get zeros.
    pub fn backward(&self, seed: Var) -> Result<Gradients<T>, KernelError> {
        let shape = self.value(seed).shape();
        if shape != (1, 1) {
            return Err(KernelError::NonScalarSeed(shape));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(Array::scalar(T::one()));
        let mut params = Vec::new();

        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Parameter) {
                    params.push((Var(i), Array::zeros(node.value.rows(), node.value.cols())));
                }
                continue;
            };
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Parameter) {
                params.push((Var(i), g));
            }
        }
        // Parameters recorded after the seed cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(seed.0 + 1) {
            if matches!(node.op, Op::Parameter) {
                params.push((Var(i), Array::zeros(node.value.rows(), node.value.cols())));
            }
        }
        params.sort_by_key(|(v, _)| *v);
        Ok(Gradients { params })
    }

    fn propagate(&self, i: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Parameter => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), w.cols());
                if wants(*a) {
                    let mut ga = Array::zeros(n, k);
                    matmul_nt_into(g.data(), w.data(), ga.data_mut(), n, k, m);
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let mut gb = Array::zeros(k, m);
                    matmul_tn_into(x.data(), g.data(), gb.data_mut(), n, k, m);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).cols();
                let q = self.value(*b).cols();
                if wants(*a) {
                    let ga = Array::from_fn(g.rows(), p, |r, c| g.get(r, c));
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let gb = Array::from_fn(g.rows(), q, |r, c| g.get(r, p + c));
                    accumulate(grads, *b, gb);
                }
            }
            Op::ConcatRows(a, b) => {
                let (n, cols) = self.value(*a).shape();
                let m = self.value(*b).rows();
                if wants(*a) {
                    let ga = Array::new(n, cols, g.data()[..n * cols].to_vec()).expect("split");
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let gb = Array::new(m, cols, g.data()[n * cols..].to_vec()).expect("split");
                    accumulate(grads, *b, gb);
                }
            }
            Op::Relu(a) => {
                let ga = zip_map(g, y, |gv, yv| if yv > T::zero() { gv } else { T::zero() });
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, y, |gv, yv| gv * (T::one() - yv * yv));
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, y, |gv, yv| gv * yv * (T::one() - yv));
                accumulate(grads, *a, ga);
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                if x.shape() == w.shape() {
                    if wants(*a) {
                        accumulate(grads, *a, zip_map(g, w, |gv, wv| gv * wv));
                    }
                    if wants(*b) {
                        accumulate(grads, *b, zip_map(g, x, |gv, xv| gv * xv));
                    }
                } else {
                    if wants(*a) {
                        let mut ga = g.clone();
                        for r in 0..ga.rows() {
                            let s = w.data()[r];
                            ga.row_mut(r).iter_mut().for_each(|v| *v = *v * s);
                        }
                        accumulate(grads, *a, ga);
                    }
                    if wants(*b) {
                        let gb = (0..x.rows())
                            .map(|r| {
                                g.row(r)
                                    .iter()
                                    .zip(x.row(r))
                                    .fold(T::zero(), |acc, (&gv, &xv)| acc + gv * xv)
                            })
                            .collect();
                        accumulate(grads, *b, Array::column(gb));
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, Array::filled(r, c, g.data()[0]));
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Array::zeros(r, c);
                for (row, &i) in index.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i as usize).iter_mut().zip(g.row(row)) {
                        *o = *o + v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, index) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(index.len() * cols);
                for &i in index.iter() {
                    data.extend_from_slice(g.row(i as usize));
                }
                accumulate(grads, *a, Array::new(index.len(), cols, data).expect("rows"));
            }
            Op::LogSumExp(a, segments) => {
                let x = self.value(*a);
                let ga = segments
                    .iter()
                    .zip(x.data())
                    .map(|(&s, &v)| {
                        let s = s as usize;
                        g.data()[s] * (v - y.data()[s]).exp()
                    })
                    .collect();
                accumulate(grads, *a, Array::column(ga));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                accumulate(grads, *a, Array::new(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::EdgeMessage(m) => {
                let (h, r, a) = (self.value(m.nodes), self.value(m.relations), self.value(m.alpha));
                let d = h.cols();
                let (want_h, want_r, want_a) = (wants(m.nodes), wants(m.relations), wants(m.alpha));
                let mut gh = want_h.then(|| Array::zeros(h.rows(), d));
                let mut gr = want_r.then(|| Array::zeros(r.rows(), d));
                let mut ga = vec![T::zero(); m.src.len()];
                let mut scaled = vec![T::zero(); d];
                for i in 0..m.src.len() {
                    let w = a.data()[i];
                    let (s, rl) = (m.src[i] as usize, m.rel[i] as usize);
                    let gd = g.row(m.dst[i] as usize);
                    // g * mask, shared by all three partials
                    match &m.dropout {
                        None => scaled.copy_from_slice(gd),
                        Some(drop) => {
                            let base = (i * d) as u64;
                            for k in 0..d {
                                scaled[k] = gd[k] * drop.factor::<T>(base + k as u64);
                            }
                        }
                    }
                    if want_a {
                        let (hs, hr) = (h.row(s), r.row(rl));
                        ga[i] = (0..d).fold(T::zero(), |acc, k| acc + scaled[k] * (hs[k] + hr[k]));
                    }
                    if let Some(gh) = &mut gh {
                        for (o, &v) in gh.row_mut(s).iter_mut().zip(&scaled) {
                            *o = *o + v * w;
                        }
                    }
                    if let Some(gr) = &mut gr {
                        for (o, &v) in gr.row_mut(rl).iter_mut().zip(&scaled) {
                            *o = *o + v * w;
                        }
                    }
                }
                if let Some(gh) = gh {
                    accumulate(grads, m.nodes, gh);
                }
                if let Some(gr) = gr {
                    accumulate(grads, m.relations, gr);
                }
                if want_a {
                    accumulate(grads, m.alpha, Array::column(ga));
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Scalar>(g: &Array<T>, y: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let data = g.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Array::new(g.rows(), g.cols(), data).expect("same shape")
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of one backward sweep, one entry per parameter leaf.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    params: Vec<(Var, Array<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.params
            .binary_search_by_key(&v, |(p, _)| *p)
            .ok()
            .map(|i| &self.params[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Array<T>)> {
        self.params.iter().map(|(v, a)| (*v, a))
    }
}
