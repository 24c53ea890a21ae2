use rand::Rng;

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom`]: receives the input values, the output
/// value and the output gradient, and returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Vec<f64>),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MaskedFill { x: Var, mask: Vec<bool> },
    Pick { x: Var, idx: Vec<usize> },
    Custom { inputs: Vec<Var>, rule: BackwardFn },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order so gradients can be
/// propagated back from a scalar loss.
///
/// Inputs are always recorded before the operations that consume them, so the
/// node list is already a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `b` broadcasts against `a` when it is a scalar or its shape is a suffix of
/// `a`'s shape.
fn broadcastable(a: &Tensor, b: &Tensor) -> bool {
    b.len() == 1 || a.shape().ends_with(b.shape())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / last.max(1), last)
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(&src) {
                *a += b;
            }
        }
        None => *dst = Some(src),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Registers a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta, tb) {
            return Err(shape_err(op, ta, tb));
        }
        let bl = tb.len();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % bl]))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok((Tensor::from_parts(ta.shape().to_vec(), data), needs))
    }

    /// Elementwise `a + b`; `b` may be a scalar or broadcast over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect());
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect());
        let needs = self.needs(a);
        self.push(t, Op::Shift(a), needs)
    }

    /// Elementwise product with a constant of the same length (no gradient
    /// flows into `c`).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if c.len() != ta.len() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: ta.shape().to_vec(),
                rhs: vec![c.len()],
            });
        }
        let data = ta.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let needs = self.needs(a);
        Ok(self.push(t, Op::MulConst(a, c), needs))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::invalid("dropout", format!("rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    /// `a [.., m, k] · b [k, n] -> [.., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = ta.len() / k;
        let mut out = vec![0.0; rows * n];
        gemm(rows, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), needs))
    }

    /// Batched `a [B.., m, k] · b [B.., k, n] -> [B.., m, n]` with identical
    /// leading dims.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(shape_err("bmm", ta, tb));
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        for p in 0..batch {
            gemm(
                m,
                k,
                n,
                &ta.data()[p * m * k..(p + 1) * m * k],
                false,
                &tb.data()[p * k * n..(p + 1) * k * n],
                false,
                0.0,
                &mut out[p * m * n..(p + 1) * m * n],
            );
        }
        let mut shape = sa.to_vec();
        shape[r - 1] = n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::BatchMatMul(a, b), needs))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::invalid(
                "transpose",
                format!("needs rank >= 2, got shape {:?}", self.shape(a)),
            ));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let r = ta.shape().len();
        let mut seen = vec![false; r];
        let valid = perm.len() == r
            && perm.iter().all(|&p| p < r && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {:?}", ta.shape()),
            ));
        }
        let (shape, data) = permute_data(ta.data(), ta.shape(), perm);
        let needs = self.needs(a);
        let op = if r >= 2 && perm[..r - 2].iter().enumerate().all(|(i, &p)| i == p) && perm[r - 2] == r - 1 {
            Op::Transpose(a)
        } else {
            Op::Permute(a, perm.to_vec())
        };
        Ok(self.push(Tensor::from_parts(shape, data), op, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape.to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?)
            .clone();
        let fs = first.shape();
        if axis >= fs.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {fs:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == fs.len();
            if !same_rank || s.iter().zip(fs).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(shape_err("concat", &first, self.value(p)));
            }
            total += s[axis];
        }
        let outer: usize = fs[..axis].iter().product();
        let inner: usize = fs[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = fs.to_vec();
        shape[axis] = total;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec(), axis), needs))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&ta.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Slice { x: a, axis, start }, needs))
    }

    /// Rows of `table [V, d]` selected by `ids`, shaped `ids_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let s = tt.shape();
        if s.len() != 2 {
            return Err(Error::invalid("embedding", format!("table must be 2-D, got {s:?}")));
        }
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::invalid(
                "embedding",
                format!("{} ids do not fill shape {ids_shape:?}", ids.len()),
            ));
        }
        let (v, d) = (s[0], s[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(
                    "embedding",
                    format!("index {id} out of range for vocabulary of {v}"),
                ));
            }
            data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x.max(0.0)).collect());
        let needs = self.needs(a);
        self.push(t, Op::Relu(a), needs)
    }

    fn last_axis_rows(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let (rows, d) = split_last(self.shape(a));
        if d == 0 {
            return Err(Error::invalid(op, "reduction axis has length 0"));
        }
        Ok((rows, d))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, d) = self.last_axis_rows("softmax", a)?;
        let ta = self.value(a);
        let mut out = vec![0.0; ta.len()];
        for r in 0..rows {
            let x = &ta.data()[r * d..(r + 1) * d];
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let y = &mut out[r * d..(r + 1) * d];
            let mut z = 0.0;
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = (xi - m).exp();
                z += *yi;
            }
            y.iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let needs = self.needs(a);
        Ok(self.push(t, Op::Softmax(a), needs))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, d) = self.last_axis_rows("log_softmax", a)?;
        let ta = self.value(a);
        let mut out = vec![0.0; ta.len()];
        for r in 0..rows {
            let x = &ta.data()[r * d..(r + 1) * d];
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (yi, xi) in out[r * d..(r + 1) * d].iter_mut().zip(x) {
                *yi = xi - lse;
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let needs = self.needs(a);
        Ok(self.push(t, Op::LogSoftmax(a), needs))
    }

    /// Layer normalization over the last axis with learned `gain` and `bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.last_axis_rows("layer_norm", a)?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(shape_err("layer_norm", self.value(a), self.value(p)));
            }
        }
        let ta = self.value(a);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![0.0; ta.len()];
        let mut xhat = vec![0.0; ta.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &ta.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (x[i] - mean) * is;
                xhat[r * d + i] = h;
                out[r * d + i] = h * g[i] + b[i];
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s = ta.data().iter().sum::<f64>() / ta.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Replaces entries where `mask` is true by `value`; those entries pass
    /// no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, value: f64) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "masked_fill",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let needs = self.needs(a);
        Ok(self.push(t, Op::MaskedFill { x: a, mask }, needs))
    }

    /// Selects one entry per row of the last axis: `[.., V] -> [..]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (rows, v) = split_last(ta.shape());
        if idx.len() != rows {
            return Err(Error::Shape {
                op: "pick",
                lhs: ta.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &i) in idx.iter().enumerate() {
            if i >= v {
                return Err(Error::invalid("pick", format!("index {i} out of range for {v}")));
            }
            data.push(ta.data()[r * v + i]);
        }
        let s = ta.shape();
        let shape = if s.len() > 1 { s[..s.len() - 1].to_vec() } else { vec![1] };
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Pick {
                x: a,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Records an operation with a caller-supplied forward value and backward
    /// rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, rule: BackwardFn) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            needs,
        )
    }

    /// Propagates gradients from a scalar `loss` into every leaf that requires
    /// them, adding to any gradient the leaf already holds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let out = &node.value;
            let send = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if self.nodes[v.0].needs_grad {
                    add_into(&mut grads[v.0], delta);
                }
            };
            match &node.op {
                Op::Leaf => leaves.push((i, g)),
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.needs(*b) {
                        let bl = self.value(*b).len();
                        let mut db = vec![0.0; bl];
                        for (k, gv) in g.iter().enumerate() {
                            db[k % bl] += sign * gv;
                        }
                        send(*b, db, &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let bl = tb.len();
                    if self.needs(*b) {
                        let mut db = vec![0.0; bl];
                        for (k, gv) in g.iter().enumerate() {
                            db[k % bl] += gv * ta.data()[k];
                        }
                        send(*b, db, &mut grads);
                    }
                    if self.needs(*a) {
                        let da = g.iter().enumerate().map(|(k, gv)| gv * tb.data()[k % bl]).collect();
                        send(*a, da, &mut grads);
                    }
                }
                Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect(), &mut grads),
                Op::Shift(a) | Op::Reshape(a) => send(*a, g, &mut grads),
                Op::MulConst(a, c) => send(*a, g.iter().zip(c).map(|(x, y)| x * y).collect(), &mut grads),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (k, n) = (tb.shape()[0], tb.shape()[1]);
                    let rows = ta.len() / k;
                    if self.needs(*a) {
                        let mut da = vec![0.0; rows * k];
                        gemm(rows, n, k, &g, false, tb.data(), true, 0.0, &mut da);
                        send(*a, da, &mut grads);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, rows, n, ta.data(), true, &g, false, 0.0, &mut db);
                        send(*b, db, &mut grads);
                    }
                }
                Op::BatchMatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let s = ta.shape();
                    let r = s.len();
                    let (m, k, n) = (s[r - 2], s[r - 1], tb.shape()[r - 1]);
                    let batch = ta.len() / (m * k);
                    if self.needs(*a) {
                        let mut da = vec![0.0; ta.len()];
                        for p in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[p * m * n..(p + 1) * m * n],
                                false,
                                &tb.data()[p * k * n..(p + 1) * k * n],
                                true,
                                0.0,
                                &mut da[p * m * k..(p + 1) * m * k],
                            );
                        }
                        send(*a, da, &mut grads);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; tb.len()];
                        for p in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &ta.data()[p * m * k..(p + 1) * m * k],
                                true,
                                &g[p * m * n..(p + 1) * m * n],
                                false,
                                0.0,
                                &mut db[p * k * n..(p + 1) * k * n],
                            );
                        }
                        send(*b, db, &mut grads);
                    }
                }
                Op::Transpose(a) => {
                    let r = out.shape().len();
                    let mut perm: Vec<usize> = (0..r).collect();
                    perm.swap(r - 2, r - 1);
                    let (_, da) = permute_data(&g, out.shape(), &perm);
                    send(*a, da, &mut grads);
                }
                Op::Permute(a, perm) => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let (_, da) = permute_data(&g, out.shape(), &inv);
                    send(*a, da, &mut grads);
                }
                Op::Concat(parts, axis) => {
                    let s = out.shape();
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.shape(p)[*axis] * inner;
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(outer * width);
                            for o in 0..outer {
                                let base = o * s[*axis] * inner + offset;
                                dp.extend_from_slice(&g[base..base + width]);
                            }
                            send(p, dp, &mut grads);
                        }
                        offset += width;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let s = self.shape(*x);
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let len = out.shape()[*axis];
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for o in 0..outer {
                        let dst = (o * s[*axis] + start) * inner;
                        let src = o * len * inner;
                        dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    send(*x, dx, &mut grads);
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let d = tt.shape()[1];
                    let mut dt = vec![0.0; tt.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g[r * d + c];
                        }
                    }
                    send(*table, dt, &mut grads);
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let da = g
                        .iter()
                        .zip(ta.data())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(*a, da, &mut grads);
                }
                Op::Softmax(a) => {
                    let (rows, d) = split_last(out.shape());
                    let y = out.data();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                        for k in span {
                            da[k] = y[k] * (g[k] - dot);
                        }
                    }
                    send(*a, da, &mut grads);
                }
                Op::LogSoftmax(a) => {
                    let (rows, d) = split_last(out.shape());
                    let y = out.data();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let gs: f64 = g[span.clone()].iter().sum();
                        for k in span {
                            da[k] = g[k] - y[k].exp() * gs;
                        }
                    }
                    send(*a, da, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = self.shape(*gain)[0];
                    let gv = self.value(*gain).data();
                    let rows = xhat.len() / d;
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![0.0; d];
                        let mut db = vec![0.0; d];
                        for r in 0..rows {
                            for i in 0..d {
                                dg[i] += g[r * d + i] * xhat[r * d + i];
                                db[i] += g[r * d + i];
                            }
                        }
                        send(*gain, dg, &mut grads);
                        send(*bias, db, &mut grads);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; xhat.len()];
                        let n = d as f64;
                        for r in 0..rows {
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for i in 0..d {
                                let dh = g[r * d + i] * gv[i];
                                s1 += dh;
                                s2 += dh * xhat[r * d + i];
                            }
                            for i in 0..d {
                                let dh = g[r * d + i] * gv[i];
                                dx[r * d + i] = inv_std[r] / n * (n * dh - s1 - xhat[r * d + i] * s2);
                            }
                        }
                        send(*x, dx, &mut grads);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    send(*a, vec![g[0]; n], &mut grads);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    send(*a, vec![g[0] / n as f64; n], &mut grads);
                }
                Op::MaskedFill { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(gv, m)| if *m { 0.0 } else { *gv }).collect();
                    send(*x, dx, &mut grads);
                }
                Op::Pick { x, idx } => {
                    let tx = self.value(*x);
                    let v = *tx.shape().last().unwrap();
                    let mut dx = vec![0.0; tx.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        dx[r * v + i] = g[r];
                    }
                    send(*x, dx, &mut grads);
                }
                Op::Custom { inputs, rule } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let deltas = rule(&vals, out, &g);
                    for (&v, delta) in inputs.iter().zip(deltas) {
                        if delta.len() != self.value(v).len() {
                            return Err(Error::Shape {
                                op: "custom backward",
                                lhs: self.shape(v).to_vec(),
                                rhs: vec![delta.len()],
                            });
                        }
                        send(v, delta, &mut grads);
                    }
                }
            }
        }
        for (i, g) in leaves {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([4]));
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn matmul_of_ones() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::ones([2, 3]));
        let b = t.constant(Tensor::ones([3, 2]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 2]);
        assert_eq!(t.value(c).data(), &[3.0; 4]);
    }

    #[test]
    fn layer_norm_matches_scalar_evaluation() {
        let eps = 1e-6;
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let g = t.constant(Tensor::ones([3]));
        let b = t.constant(Tensor::zeros([3]));
        let y = t.layer_norm(x, g, b, eps).unwrap();
        // mean 2, biased variance 2/3
        let sd = (2.0f64 / 3.0 + eps).sqrt();
        let want = [-1.0 / sd, 0.0, 1.0 / sd];
        assert!(close(t.value(y).data(), &want, 1e-12));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::ones([2, 3]));
        let b = t.constant(Tensor::ones([2, 2]));
        let e = t.matmul(a, b).unwrap_err().to_string();
        assert!(e.contains("matmul") && e.contains("[2, 3]") && e.contains("[2, 2]"), "{e}");
        let e = t.add(a, b).unwrap_err().to_string();
        assert!(e.starts_with("add"), "{e}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::full([2, 3], 0.7));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_square() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(vec![3.0]));
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones([2]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones([3]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new([2, 1], vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::new([2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = t.slice(c, 1, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), t.value(b).data());
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let y = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(y), &[4, 2, 3]);
        let yd = t.value(y).data();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(yd[k * 6 + i * 3 + j], (i * 12 + j * 4 + k) as f64);
                }
            }
        }
    }

    #[test]
    fn masked_entries_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones([3]));
        let y = t.masked_fill(x, vec![false, true, false], -1e9).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::ones([2, 2]));
        let c = t.constant(Tensor::ones([1, 2]));
        let y = t.matmul(c, w).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(w).unwrap(), &[1.0; 4]);
    }
}
