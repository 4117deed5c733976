//! Tape-based reverse-mode differentiation over dense row-major `f64`
//! tensors.
//!
//! A [`Graph`] records every operation as it is applied; [`Graph::backward`]
//! walks the tape in reverse and accumulates exact gradients. Graphs are
//! single-use: build one per forward pass. There is no implicit
//! broadcasting; the only mixed-shape op is [`Graph::add_bias`].

mod attention;
mod check;
mod gemm;
mod kernels;

use std::fmt;
use std::sync::Arc;

pub use check::{grad_check, grad_check_sampled};
pub use kernels::sigmoid;
pub(crate) use gemm::{gemm, Mat};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside this module. `forward` may stash anything in
/// the returned side buffer; `backward` receives it back.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)>;
    /// One gradient per input (`None` where the input is not differentiable).
    fn backward(&self, inputs: &[&Tensor], saved: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    IndexSelect(Var, Arc<Vec<usize>>),
    Broadcast { x: Var, axis: usize },
    Softmax(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize },
    Bilinear { grid: Var, points: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    Sinusoid { q: Var, temperature: f64 },
    CrossEntropy(Var, Arc<Vec<usize>>),
    L1(Var, Var),
    Sum(Var),
    Mean(Var),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(op, _) => write!(f, "Custom({})", op.name()),
            Op::Leaf => write!(f, "Leaf"),
            _ => write!(f, "Op"),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    saved: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    score_elements: Vec<usize>,
}

pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
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

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-head attention score-buffer sizes (`batch · T²`) of every
    /// attention call recorded so far.
    pub fn score_elements(&self) -> &[usize] {
        &self.score_elements
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, saved: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg, Vec::new()))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(t, op, rg, Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), kernels::sigmoid)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `x[..., d] + b[d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = *tx.shape.last().ok_or_else(|| Error::Shape("add_bias on scalar".into()))?;
        if tb.shape != [d] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match last dim {d}",
                tb.shape
            )));
        }
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(d) {
            for (v, bb) in row.iter_mut().zip(&tb.data) {
                *v += bb;
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        let rg = self.rg(&[x, b]);
        Ok(self.push(t, Op::AddBias(x, b), rg, Vec::new()))
    }

    /// `a[..., k] · b[k, n]`; leading axes of `a` act as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.is_empty() || tb.shape.len() != 2 || *ta.shape.last().unwrap() != tb.shape[0] {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape, tb.shape
            )));
        }
        let (k, n) = (tb.shape[0], tb.shape[1]);
        let m = ta.data.len() / k.max(1);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, 1.0, Mat::rows(&ta.data, k), Mat::rows(&tb.data, n), 0.0, &mut data, n);
        let mut shape = ta.shape.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::MatMul(a, b), rg, Vec::new()))
    }

    /// Batched `a[B, m, k] · b[B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 3 || tb.shape.len() != 3 || ta.shape[0] != tb.shape[0] || ta.shape[2] != tb.shape[1] {
            return Err(Error::Shape(format!("bmm {:?} x {:?}", ta.shape, tb.shape)));
        }
        let (bs, m, k, n) = (ta.shape[0], ta.shape[1], ta.shape[2], tb.shape[2]);
        let mut data = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                1.0,
                Mat::rows(&ta.data[i * m * k..(i + 1) * m * k], k),
                Mat::rows(&tb.data[i * k * n..(i + 1) * k * n], n),
                0.0,
                &mut data[i * m * n..(i + 1) * m * n],
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![bs, m, n],
                data,
            },
            Op::BatchMatMul(a, b),
            rg,
            Vec::new(),
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Swaps the first two axes; trailing axes move as a block.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape.len() < 2 {
            return Err(Error::Shape("transpose needs rank >= 2".into()));
        }
        let (p, q) = (ta.shape[0], ta.shape[1]);
        let inner: usize = ta.shape[2..].iter().product();
        let data = kernels::swap01(&ta.data, p, q, inner);
        let mut shape = ta.shape.clone();
        shape.swap(0, 1);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Transpose(a), rg, Vec::new()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(shape.to_vec(), ta.data.clone())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg, Vec::new()))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?);
        if axis >= first.shape.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range")));
        }
        let mut shape = first.shape.clone();
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let mut total = 0;
        for &p in parts {
            let s = &self.value(p).shape;
            let mut a = s.clone();
            let mut b = first.shape.clone();
            if a.len() != b.len() {
                return Err(Error::Shape(format!("concat rank mismatch {s:?}")));
            }
            a[axis] = 0;
            b[axis] = 0;
            if a != b {
                return Err(Error::Shape(format!("concat shape mismatch {s:?} vs {:?}", first.shape)));
            }
            total += s[axis];
        }
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * len..(o + 1) * len]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec(), axis), rg, Vec::new()))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.shape.len() || start + len > ta.shape[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{} of axis {axis} in {:?}",
                start + len,
                ta.shape
            )));
        }
        let (outer, alen, inner) = split_axis(&ta.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&ta.data[base..base + len * inner]);
        }
        let mut shape = ta.shape.clone();
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Slice { x: a, axis, start }, rg, Vec::new()))
    }

    /// Gathers entries along axis 0.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape.is_empty() || indices.iter().any(|&i| i >= ta.shape[0]) {
            return Err(Error::Shape(format!("index_select out of range for {:?}", ta.shape)));
        }
        let inner: usize = ta.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&ta.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = ta.shape.clone();
        shape[0] = indices.len();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor { shape, data },
            Op::IndexSelect(a, Arc::new(indices.to_vec())),
            rg,
            Vec::new(),
        ))
    }

    /// Inserts a new axis of size `count` at `axis`, repeating the input.
    pub fn broadcast(&mut self, a: Var, axis: usize, count: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis > ta.shape.len() {
            return Err(Error::Shape(format!("broadcast axis {axis} out of range")));
        }
        let outer: usize = ta.shape[..axis].iter().product();
        let inner: usize = ta.shape[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                data.extend_from_slice(&ta.data[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = ta.shape.clone();
        shape.insert(axis, count);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Broadcast { x: a, axis }, rg, Vec::new()))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.shape.len() || ta.shape[axis] == 0 {
            return Err(Error::Shape(format!("softmax over empty or missing axis {axis} of {:?}", ta.shape)));
        }
        let (outer, len, inner) = split_axis(&ta.shape, axis);
        let data = kernels::softmax(&ta.data, outer, len, inner);
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax(a, axis), rg, Vec::new()))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = *tx.shape.last().ok_or_else(|| Error::Shape("layer_norm on scalar".into()))?;
        if self.value(gamma).shape != [d] || self.value(beta).shape != [d] {
            return Err(Error::Shape("layer_norm affine parameters must be [d]".into()));
        }
        let (data, saved) = kernels::layer_norm(&tx.data, d, &self.value(gamma).data, &self.value(beta).data);
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta }, rg, saved))
    }

    /// Multi-head scaled dot-product attention over `[batch, tokens, dim]`
    /// inputs; head `h` uses feature columns `h·dim/heads ..`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape.len() != 3 || tq.shape != tk.shape || tk.shape != tv.shape {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?}",
                tq.shape, tk.shape, tv.shape
            )));
        }
        let (b, t, d) = (tq.shape[0], tq.shape[1], tq.shape[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{d} features not divisible into {heads} heads")));
        }
        let (out, probs) = attention::forward(&tq.data, &tk.data, &tv.data, b, t, d, heads);
        let shape = tq.shape.clone();
        self.score_elements.push(b * t * t);
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Tensor { shape, data: out }, Op::Attention { q, k, v, heads }, rg, probs))
    }

    /// Bilinear lookup of `grid[H, W, C]` at normalized `points[P, 2]`
    /// (`x, y` in `[0, 1]`, pixel centers at `(i + 0.5) / W`). Points are
    /// clamped to the outermost cell centers.
    pub fn bilinear_sample(&mut self, grid: Var, points: Var) -> Result<Var> {
        let (tg, tp) = (self.value(grid), self.value(points));
        if tg.shape.len() != 3 || tp.shape.len() != 2 || tp.shape[1] != 2 {
            return Err(Error::Shape(format!(
                "bilinear_sample grid {:?} points {:?}",
                tg.shape, tp.shape
            )));
        }
        let c = tg.shape[2];
        let data = kernels::bilinear_forward(&tg.data, tg.shape[0], tg.shape[1], c, &tp.data);
        let shape = vec![tp.shape[0], c];
        let rg = self.rg(&[grid, points]);
        Ok(self.push(Tensor { shape, data }, Op::Bilinear { grid, points }, rg, Vec::new()))
    }

    /// 3×3 convolution, zero padding 1, over a channels-last `[H, W, Cin]`
    /// input with weights `[9·Cin, Cout]` (row `(ky·3 + kx)·Cin + c`).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape.len() != 3 || tw.shape.len() != 2 || tw.shape[0] != 9 * tx.shape[2] || tb.shape != [tw.shape[1]] || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d input {:?} weight {:?} bias {:?}",
                tx.shape, tw.shape, tb.shape
            )));
        }
        let (h, wd, cin, cout) = (tx.shape[0], tx.shape[1], tx.shape[2], tw.shape[1]);
        let (ho, wo) = ((h - 1) / stride + 1, (wd - 1) / stride + 1);
        let cols = kernels::im2col(&tx.data, h, wd, cin, stride);
        let mut data = vec![0.0; ho * wo * cout];
        for row in data.chunks_exact_mut(cout) {
            row.copy_from_slice(&tb.data);
        }
        gemm(ho * wo, 9 * cin, cout, 1.0, Mat::rows(&cols, 9 * cin), Mat::rows(&tw.data, cout), 1.0, &mut data, cout);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor {
                shape: vec![ho, wo, cout],
                data,
            },
            Op::Conv2d { x, w, b, stride },
            rg,
            cols,
        ))
    }

    /// Sinusoidal embedding of 2D points `[P, 2]` into `[P, dim]`: the first
    /// half encodes `x`, the second `y`, alternating sin/cos per frequency.
    pub fn sinusoidal_embed(&mut self, q: Var, dim: usize, temperature: f64) -> Result<Var> {
        let tq = self.value(q);
        if tq.shape.len() != 2 || tq.shape[1] != 2 || dim % 2 != 0 || dim == 0 {
            return Err(Error::Shape(format!("sinusoidal_embed of {:?} into {dim}", tq.shape)));
        }
        let data = kernels::sinusoid(&tq.data, dim, temperature);
        let shape = vec![tq.shape[0], dim];
        let rg = self.rg(&[q]);
        Ok(self.push(Tensor { shape, data }, Op::Sinusoid { q, temperature }, rg, Vec::new()))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[P, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape.len() != 2 || tl.shape[0] != targets.len() || targets.iter().any(|&t| t >= tl.shape[1]) {
            return Err(Error::Shape(format!(
                "cross_entropy logits {:?} with {} targets",
                tl.shape,
                targets.len()
            )));
        }
        let (p, c) = (tl.shape[0], tl.shape[1]);
        let probs = kernels::softmax(&tl.data, p, c, 1);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -kernels::log_softmax_at(&tl.data[i * c..(i + 1) * c], t))
            .sum::<f64>()
            / p.max(1) as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, Arc::new(targets.to_vec())),
            rg,
            probs,
        ))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        same_shape(tx, ty, "l1")?;
        let n = tx.data.len().max(1) as f64;
        let v = tx.data.iter().zip(&ty.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let rg = self.rg(&[x, y]);
        Ok(self.push(Tensor::scalar(v), Op::L1(x, y), rg, Vec::new()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Sum(a), rg, Vec::new())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = t.data.iter().sum::<f64>() / t.data.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Mean(a), rg, Vec::new())
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let (t, saved) = op.forward(&values)?;
        let rg = self.rg(inputs);
        Ok(self.push(t, Op::Custom(op, inputs.to_vec()), rg, saved))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// requires them are kept for [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contribution) in self.node_backward(id, &g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], contribution);
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if want(*a) {
                    out.push((*a, g.iter().zip(&tb.data).map(|(x, y)| x * y).collect()));
                }
                if want(*b) {
                    out.push((*b, g.iter().zip(&ta.data).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|x| x * c).collect())),
            Op::AddBias(x, b) => {
                out.push((*x, g.to_vec()));
                if want(*b) {
                    let d = val(*b).numel();
                    let mut gb = vec![0.0; d];
                    for row in g.chunks_exact(d) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, gb));
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (k, n) = (tb.shape[0], tb.shape[1]);
                let m = ta.numel() / k.max(1);
                if want(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, Mat::rows(g, n), Mat::t(&tb.data, n), 0.0, &mut ga, k);
                    out.push((*a, ga));
                }
                if want(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, Mat::t(&ta.data, k), Mat::rows(g, n), 0.0, &mut gb, n);
                    out.push((*b, gb));
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (bs, m, k, n) = (ta.shape[0], ta.shape[1], ta.shape[2], tb.shape[2]);
                let mut ga = vec![0.0; bs * m * k];
                let mut gb = vec![0.0; bs * k * n];
                for i in 0..bs {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    gemm(m, n, k, 1.0, Mat::rows(gi, n), Mat::t(&tb.data[i * k * n..(i + 1) * k * n], n), 0.0, &mut ga[i * m * k..(i + 1) * m * k], k);
                    gemm(k, m, n, 1.0, Mat::t(&ta.data[i * m * k..(i + 1) * m * k], k), Mat::rows(gi, n), 0.0, &mut gb[i * k * n..(i + 1) * k * n], n);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Transpose(a) => {
                let s = &val(*a).shape;
                let inner: usize = s[2..].iter().product();
                out.push((*a, kernels::swap01(g, s[1], s[0], inner)));
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(&node.value.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape[*axis];
                    if want(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        out.push((p, gp));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = &val(*x).shape;
                let (outer, alen, inner) = split_axis(s, *axis);
                let len = node.value.shape[*axis];
                let mut gx = vec![0.0; val(*x).numel()];
                for o in 0..outer {
                    let dst = (o * alen + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out.push((*x, gx));
            }
            Op::IndexSelect(x, idx) => {
                let tx = val(*x);
                let inner: usize = tx.shape[1..].iter().product();
                let mut gx = vec![0.0; tx.numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for (acc, v) in gx[i * inner..(i + 1) * inner].iter_mut().zip(&g[r * inner..(r + 1) * inner]) {
                        *acc += v;
                    }
                }
                out.push((*x, gx));
            }
            Op::Broadcast { x, axis } => {
                let tx = val(*x);
                let outer: usize = tx.shape[..*axis].iter().product();
                let inner: usize = tx.shape[*axis..].iter().product();
                let count = node.value.shape[*axis];
                let mut gx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    for c in 0..count {
                        let src = (o * count + c) * inner;
                        for (acc, v) in gx[o * inner..(o + 1) * inner].iter_mut().zip(&g[src..src + inner]) {
                            *acc += v;
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(&node.value.shape, *axis);
                out.push((*a, kernels::softmax_backward(&node.value.data, g, outer, len, inner)));
            }
            Op::Relu(a) => out.push((
                *a,
                g.iter().zip(&val(*a).data).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect(),
            )),
            Op::Sigmoid(a) => out.push((
                *a,
                g.iter().zip(&node.value.data).map(|(gv, &s)| gv * s * (1.0 - s)).collect(),
            )),
            Op::Clamp(a, lo, hi) => out.push((
                *a,
                g.iter()
                    .zip(&val(*a).data)
                    .map(|(gv, &x)| if x >= *lo && x <= *hi { *gv } else { 0.0 })
                    .collect(),
            )),
            Op::LayerNorm { x, gamma, beta } => {
                let tg = val(*gamma);
                let d = tg.numel();
                let (gx, ggamma, gbeta) = kernels::layer_norm_backward(&val(*x).data, d, &tg.data, &node.saved, g);
                out.push((*x, gx));
                out.push((*gamma, ggamma));
                out.push((*beta, gbeta));
            }
            Op::Attention { q, k, v, heads } => {
                let s = &val(*q).shape;
                let (gq, gk, gv) = attention::backward(
                    &val(*q).data,
                    &val(*k).data,
                    &val(*v).data,
                    &node.saved,
                    g,
                    s[0],
                    s[1],
                    s[2],
                    *heads,
                );
                out.push((*q, gq));
                out.push((*k, gk));
                out.push((*v, gv));
            }
            Op::Bilinear { grid, points } => {
                let tg = val(*grid);
                let (gg, gp) = kernels::bilinear_backward(&tg.data, tg.shape[0], tg.shape[1], tg.shape[2], &val(*points).data, g);
                if want(*grid) {
                    out.push((*grid, gg));
                }
                out.push((*points, gp));
            }
            Op::Conv2d { x, w, b, stride } => {
                let tx = val(*x);
                let tw = val(*w);
                let (h, wd, cin) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                let cout = tw.shape[1];
                let rows = node.value.shape[0] * node.value.shape[1];
                let cols = &node.saved;
                if want(*w) {
                    let mut gw = vec![0.0; 9 * cin * cout];
                    gemm(9 * cin, rows, cout, 1.0, Mat::t(cols, 9 * cin), Mat::rows(g, cout), 0.0, &mut gw, cout);
                    out.push((*w, gw));
                }
                if want(*b) {
                    let mut gb = vec![0.0; cout];
                    for row in g.chunks_exact(cout) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, gb));
                }
                if want(*x) {
                    let mut gcols = vec![0.0; rows * 9 * cin];
                    gemm(rows, cout, 9 * cin, 1.0, Mat::rows(g, cout), Mat::t(&tw.data, cout), 0.0, &mut gcols, 9 * cin);
                    out.push((*x, kernels::col2im(&gcols, h, wd, cin, *stride)));
                }
            }
            Op::Sinusoid { q, temperature } => {
                let dim = node.value.shape[1];
                out.push((*q, kernels::sinusoid_backward(&val(*q).data, dim, *temperature, g)));
            }
            Op::CrossEntropy(logits, targets) => {
                let c = val(*logits).shape[1];
                let p = targets.len().max(1) as f64;
                let mut gl = node.saved.clone();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * c + t] -= 1.0;
                }
                for v in &mut gl {
                    *v *= g[0] / p;
                }
                out.push((*logits, gl));
            }
            Op::L1(x, y) => {
                let (tx, ty) = (val(*x), val(*y));
                let n = tx.numel().max(1) as f64;
                let gx: Vec<f64> = tx
                    .data
                    .iter()
                    .zip(&ty.data)
                    .map(|(a, b)| g[0] * kernels::sign(a - b) / n)
                    .collect();
                if want(*y) {
                    out.push((*y, gx.iter().map(|v| -v).collect()));
                }
                out.push((*x, gx));
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; val(*a).numel()])),
            Op::Mean(a) => {
                let n = val(*a).numel();
                out.push((*a, vec![g[0] / n.max(1) as f64; n]));
            }
            Op::Custom(op, inputs) => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                for (v, gi) in inputs.iter().zip(op.backward(&values, &node.saved, g)) {
                    if let Some(gi) = gi {
                        out.push((*v, gi));
                    }
                }
            }
        }
        out
    }
}
