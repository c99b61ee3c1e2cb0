use std::cell::{Cell, Ref, RefCell};
use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Index of a trainable tensor in the caller's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Backward rule for operations defined outside this module.
pub trait BackwardRule {
    /// Gradient with respect to each input, given the output gradient.
    fn grads(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul,
    Add { broadcast: bool },
    Sub,
    Mul,
    Scale(f64),
    Transpose,
    Gather(Vec<u32>),
    SoftmaxRows,
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu,
    Sigmoid,
    Mean,
    Sum,
    ConcatRows,
    ConcatCols,
    Slice { rows: Range<usize>, cols: Range<usize> },
    Dropout { mask: Vec<f64> },
    Custom(Box<dyn BackwardRule>),
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    used: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

fn finite(t: Tensor, op: &'static str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}

fn want_matrix(t: &Tensor, op: &'static str) -> Result<()> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, op: Op, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = param.is_some() || parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            parents,
            op,
            needs_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, vec![], Op::Leaf, None)
    }

    /// A trainable leaf. Gradients of every leaf with the same id are summed.
    pub fn param(&self, id: ParamId, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), vec![], Op::Leaf, Some(id))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        rule: Box<dyn BackwardRule>,
        name: &'static str,
    ) -> Result<Var<'t>> {
        let value = finite(value, name)?;
        Ok(self.push(value, inputs.iter().map(|v| v.id).collect(), Op::Custom(rule), None))
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse pass from a scalar. A tape supports exactly one backward pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.used.replace(true) {
            return Err(Error::TapeReused);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.id].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Some(pid) = node.param {
                match out.by_param.get_mut(&pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.by_param.insert(pid, g);
                    }
                }
                continue;
            }
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            if let Op::Custom(rule) = &node.op {
                let gs = rule.grads(&g, &inputs, &node.value);
                for (&p, gp) in node.parents.iter().zip(gs) {
                    if nodes[p].needs_grad {
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&gp),
                            slot => *slot = Some(gp),
                        }
                    }
                }
                continue;
            }
            for (which, &p) in node.parents.iter().enumerate() {
                if !nodes[p].needs_grad {
                    continue;
                }
                let acc = grads[p].get_or_insert_with(|| Tensor::zeros(nodes[p].value.shape()));
                accumulate(&node.op, which, &g, &inputs, &node.value, acc);
            }
        }
        Ok(out)
    }
}

/// Adds the contribution of `g` (gradient of the node output) to the
/// gradient of input `which`.
fn accumulate(op: &Op, which: usize, g: &Tensor, inputs: &[&Tensor], out: &Tensor, acc: &mut Tensor) {
    let gd = g.data();
    match op {
        Op::Leaf | Op::Custom(_) => unreachable!(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            if which == 0 {
                kernels::matmul_nt_acc(gd, b.data(), acc.data_mut(), m, n, k);
            } else {
                kernels::matmul_tn_acc(a.data(), gd, acc.data_mut(), m, k, n);
            }
        }
        Op::Add { broadcast } => {
            if which == 1 && *broadcast {
                let n = acc.cols();
                for row in gd.chunks(n) {
                    for (a, x) in acc.data_mut().iter_mut().zip(row) {
                        *a += x;
                    }
                }
            } else {
                acc.add_assign(g);
            }
        }
        Op::Sub => {
            let sign = if which == 0 { 1.0 } else { -1.0 };
            for (a, x) in acc.data_mut().iter_mut().zip(gd) {
                *a += sign * x;
            }
        }
        Op::Mul => {
            let other = inputs[1 - which].data();
            for ((a, x), o) in acc.data_mut().iter_mut().zip(gd).zip(other) {
                *a += x * o;
            }
        }
        Op::Scale(c) => {
            for (a, x) in acc.data_mut().iter_mut().zip(gd) {
                *a += c * x;
            }
        }
        Op::Transpose => {
            let (r, c) = (out.rows(), out.cols());
            let ad = acc.data_mut();
            for i in 0..r {
                for j in 0..c {
                    ad[j * r + i] += gd[i * c + j];
                }
            }
        }
        Op::Gather(ids) => {
            let d = acc.cols();
            let ad = acc.data_mut();
            for (r, &id) in ids.iter().enumerate() {
                let dst = &mut ad[id as usize * d..(id as usize + 1) * d];
                for (a, x) in dst.iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                    *a += x;
                }
            }
        }
        Op::SoftmaxRows => {
            let n = out.cols();
            let ad = acc.data_mut();
            for ((y, gr), ar) in out.data().chunks(n).zip(gd.chunks(n)).zip(ad.chunks_mut(n)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((a, yi), gi) in ar.iter_mut().zip(y).zip(gr) {
                    *a += yi * (gi - dot);
                }
            }
        }
        Op::LayerNorm { xhat, inv_std } => {
            let n = out.cols();
            let gamma = inputs[1].data();
            match which {
                0 => {
                    let nf = n as f64;
                    let ad = acc.data_mut();
                    for r in 0..out.rows() {
                        let gr = &gd[r * n..(r + 1) * n];
                        let xr = &xhat[r * n..(r + 1) * n];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dxh = gr[j] * gamma[j];
                            s1 += dxh;
                            s2 += dxh * xr[j];
                        }
                        for j in 0..n {
                            let dxh = gr[j] * gamma[j];
                            ad[r * n + j] += inv_std[r] / nf * (nf * dxh - s1 - xr[j] * s2);
                        }
                    }
                }
                1 => {
                    let ad = acc.data_mut();
                    for (gr, xr) in gd.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            ad[j] += gr[j] * xr[j];
                        }
                    }
                }
                _ => {
                    let ad = acc.data_mut();
                    for gr in gd.chunks(n) {
                        for j in 0..n {
                            ad[j] += gr[j];
                        }
                    }
                }
            }
        }
        Op::Gelu => {
            for ((a, x), gi) in acc.data_mut().iter_mut().zip(inputs[0].data()).zip(gd) {
                *a += gi * kernels::gelu_grad(*x);
            }
        }
        Op::Sigmoid => {
            for ((a, y), gi) in acc.data_mut().iter_mut().zip(out.data()).zip(gd) {
                *a += gi * y * (1.0 - y);
            }
        }
        Op::Mean => {
            let s = gd[0] / acc.len() as f64;
            acc.data_mut().iter_mut().for_each(|a| *a += s);
        }
        Op::Sum => {
            let s = gd[0];
            acc.data_mut().iter_mut().for_each(|a| *a += s);
        }
        Op::ConcatRows => {
            let c = out.cols();
            let offset: usize = inputs[..which].iter().map(|t| t.rows()).sum();
            let span = &gd[offset * c..(offset + acc.rows()) * c];
            for (a, x) in acc.data_mut().iter_mut().zip(span) {
                *a += x;
            }
        }
        Op::ConcatCols => {
            let total = out.cols();
            let offset: usize = inputs[..which].iter().map(|t| t.cols()).sum();
            let w = acc.cols();
            let ad = acc.data_mut();
            for r in 0..out.rows() {
                for j in 0..w {
                    ad[r * w + j] += gd[r * total + offset + j];
                }
            }
        }
        Op::Slice { rows, cols } => {
            let full = acc.cols();
            let w = cols.len();
            let ad = acc.data_mut();
            for (i, r) in rows.clone().enumerate() {
                for j in 0..w {
                    ad[r * full + cols.start + j] += gd[i * w + j];
                }
            }
        }
        Op::Dropout { mask } => {
            for ((a, x), m) in acc.data_mut().iter_mut().zip(gd).zip(mask) {
                *a += x * m;
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(
        self,
        name: &'static str,
        f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        let (t, op) = {
            let v = self.value();
            f(&v)?
        };
        let t = finite(t, name)?;
        Ok(self.tape.push(t, vec![self.id], op, None))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        let (t, op) = {
            let a = self.value();
            let b = other.value();
            f(&a, &b)?
        };
        let t = finite(t, name)?;
        Ok(self.tape.push(t, vec![self.id, other.id], op, None))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "matmul", |a, b| {
            want_matrix(a, "matmul")?;
            want_matrix(b, "matmul")?;
            if a.cols() != b.rows() {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut c = vec![0.0; m * n];
            kernels::matmul_acc(a.data(), b.data(), &mut c, m, k, n);
            Ok((Tensor::matrix(m, n, c)?, Op::MatMul))
        })
    }

    /// Elementwise sum; `other` may also be a single row broadcast over rows.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| {
            if a.same_shape(b) {
                let d = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                return Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Add { broadcast: false }));
            }
            if b.rows() == 1 && b.cols() == a.cols() && a.shape().len() == 2 {
                let n = a.cols();
                let mut d = a.data().to_vec();
                for row in d.chunks_mut(n) {
                    for (x, y) in row.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                return Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Add { broadcast: true }));
            }
            Err(Error::shape("add", format!("{:?} + {:?}", a.shape(), b.shape())))
        })
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| {
            if !a.same_shape(b) {
                return Err(Error::shape("sub", format!("{:?} - {:?}", a.shape(), b.shape())));
            }
            let d = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Sub))
        })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "multiply", |a, b| {
            if !a.same_shape(b) {
                return Err(Error::shape("multiply", format!("{:?} * {:?}", a.shape(), b.shape())));
            }
            let d = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Mul))
        })
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", |a| {
            let d = a.data().iter().map(|x| x * c).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Scale(c)))
        })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary("transpose", |a| {
            want_matrix(a, "transpose")?;
            let (r, c) = (a.rows(), a.cols());
            let src = a.data();
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[j * r + i] = src[i * c + j];
                }
            }
            Ok((Tensor::matrix(c, r, d)?, Op::Transpose))
        })
    }

    /// Rows of `self` selected by `ids` (embedding lookup when `self` is a
    /// token table).
    pub fn gather_rows(self, ids: &[u32]) -> Result<Var<'t>> {
        self.unary("embedding_lookup", |table| {
            want_matrix(table, "embedding_lookup")?;
            let (n, d) = (table.rows(), table.cols());
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id as usize >= n {
                    return Err(Error::shape("embedding_lookup", format!("id {id} out of {n} rows")));
                }
                out.extend_from_slice(table.row(id as usize));
            }
            Ok((Tensor::matrix(ids.len(), d, out)?, Op::Gather(ids.to_vec())))
        })
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        self.unary("softmax_rows", |a| {
            want_matrix(a, "softmax_rows")?;
            let n = a.cols();
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(n) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                for x in row.iter_mut() {
                    *x /= sum;
                }
            }
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::SoftmaxRows))
        })
    }

    /// Normalizes each row, then applies `gamma` and `beta` (both `1×cols`).
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (t, op) = {
            let x = self.value();
            let g = gamma.value();
            let b = beta.value();
            want_matrix(&x, "layer_norm")?;
            let n = x.cols();
            if g.len() != n || b.len() != n {
                return Err(Error::shape("layer_norm", format!("{:?} with scale {:?}", x.shape(), g.shape())));
            }
            let mut xhat = Vec::with_capacity(x.len());
            let mut inv_std = Vec::with_capacity(x.rows());
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(inv);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * inv;
                    xhat.push(h);
                    out.push(h * g.data()[j] + b.data()[j]);
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, Op::LayerNorm { xhat, inv_std })
        };
        let t = finite(t, "layer_norm")?;
        Ok(tape.push(t, vec![self.id, gamma.id, beta.id], op, None))
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.unary("gelu", |a| {
            let d = a.data().iter().map(|&x| kernels::gelu(x)).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Gelu))
        })
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", |a| {
            let d = a.data().iter().map(|&x| kernels::sigmoid(x)).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Sigmoid))
        })
    }

    /// Mean of all elements, as a `1×1` tensor.
    pub fn mean(self) -> Result<Var<'t>> {
        self.unary("mean", |a| {
            let s: f64 = a.data().iter().sum();
            Ok((Tensor::scalar(s / a.len() as f64), Op::Mean))
        })
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary("sum", |a| Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum)))
    }

    pub fn slice(self, rows: Range<usize>, cols: Range<usize>) -> Result<Var<'t>> {
        self.unary("slice", |a| {
            want_matrix(a, "slice")?;
            if rows.end > a.rows() || cols.end > a.cols() || rows.is_empty() || cols.is_empty() {
                return Err(Error::shape("slice", format!("{rows:?}x{cols:?} of {:?}", a.shape())));
            }
            let mut d = Vec::with_capacity(rows.len() * cols.len());
            for r in rows.clone() {
                d.extend_from_slice(&a.row(r)[cols.clone()]);
            }
            Ok((Tensor::matrix(rows.len(), cols.len(), d)?, Op::Slice { rows, cols }))
        })
    }

    /// Inverted dropout. Identity (no node recorded) when `train` is false
    /// or `rate` is zero.
    pub fn dropout(self, rate: f64, train: bool, seed: u64) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(self);
        }
        self.unary("dropout", |a| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..a.len())
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let d = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Ok((Tensor::new(a.shape().to_vec(), d)?, Op::Dropout { mask }))
        })
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let tape = first.tape;
        let t = {
            let vals: Vec<Ref<Tensor>> = parts.iter().map(|p| p.value()).collect();
            let c = vals[0].cols();
            if vals.iter().any(|v| v.shape().len() != 2 || v.cols() != c) {
                return Err(Error::shape("concat_rows", "column counts differ"));
            }
            let rows = vals.iter().map(|v| v.rows()).sum();
            let mut d = Vec::with_capacity(rows * c);
            for v in &vals {
                d.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, c, d)?
        };
        Ok(tape.push(t, parts.iter().map(|p| p.id).collect(), Op::ConcatRows, None))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let tape = first.tape;
        let t = {
            let vals: Vec<Ref<Tensor>> = parts.iter().map(|p| p.value()).collect();
            let r = vals[0].rows();
            if vals.iter().any(|v| v.shape().len() != 2 || v.rows() != r) {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut d = Vec::with_capacity(r * cols);
            for i in 0..r {
                for v in &vals {
                    d.extend_from_slice(v.row(i));
                }
            }
            Tensor::matrix(r, cols, d)?
        };
        Ok(tape.push(t, parts.iter().map(|p| p.id).collect(), Op::ConcatCols, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.constant(m(2, 3, &[1.0, -2.0, 3.5, 0.25, 7.0, -1.0]));
        let i = tape.constant(Tensor::identity(3));
        assert_eq!(*a.matmul(i).unwrap().value(), *a.value());
    }

    #[test]
    fn matmul_shape_error() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::scalar(0.0));
        let y = x.sigmoid().unwrap();
        assert_eq!(y.item(), 0.5);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 0.25);
    }

    #[test]
    fn softmax_large_logits() {
        let tape = Tape::new();
        let s = tape.constant(m(1, 2, &[1000.0, 1000.0])).softmax_rows().unwrap();
        assert_eq!(s.value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(ParamId(3), &m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let g = tape.backward(w.sum().unwrap()).unwrap();
        assert_eq!(g.get(ParamId(3)).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::scalar(3.0));
        let y = w.mul(w).unwrap().add(w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 7.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let g = tape.backward(w.mul(c).unwrap()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 5.0);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::zeros(&[1, 2]));
        assert!(matches!(tape.backward(w), Err(Error::Shape { .. })));
        let tape = Tape::new();
        let w = tape.param(ParamId(0), &Tensor::scalar(1.0));
        tape.backward(w).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::TapeReused)));
    }

    #[test]
    fn non_finite_is_an_error() {
        let tape = Tape::new();
        let big = tape.constant(Tensor::scalar(1e300));
        assert!(matches!(big.mul(big), Err(Error::NonFinite("multiply"))));
    }

    #[test]
    fn dropout_modes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 50], 1.0));
        let off = x.dropout(0.5, false, 1).unwrap();
        assert_eq!(*off.value(), *x.value());
        let on = x.dropout(0.5, true, 1).unwrap();
        let v = on.value();
        assert!(v.data().iter().all(|&y| y == 0.0 || y == 2.0));
        assert!(v.data().iter().any(|&y| y == 0.0));
        assert!(x.dropout(1.0, true, 1).is_err());
    }
}
