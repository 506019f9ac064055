//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op in execution order, so the node list is
//! already topologically sorted. [`Tape::backward`] walks it once in reverse.
//! Intermediate gradients live only for the duration of a backward pass;
//! leaf gradients persist and accumulate across passes until
//! [`Tape::zero_grad`].

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::gemm::gemm;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    CausalMask(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanPool(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<usize>,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    bound: HashMap<ParamId, Var>,
}

fn shape2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(NnError::shape(op, s, &[0, 0])),
    }
}

fn gelu_fwd(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter as a gradient-receiving leaf. Binding the same
    /// parameter twice returns the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a), "matmul")?;
        let (k2, n) = shape2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(NnError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds vector `b` (length = cols) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "add_bias")?;
        if self.shape(b) != [c] {
            return Err(NnError::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            row.iter_mut().zip(bias).for_each(|(v, bv)| *v += bv);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Scale(x, s), rg))
    }

    /// Stacks 2-D tensors with equal column counts along rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NnError::shape("concat", &[], &[]));
        };
        let (_, c) = shape2(self.value(first), "concat")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c2) = shape2(self.value(p), "concat")?;
            if c2 != c {
                return Err(NnError::shape("concat", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "slice_rows")?;
        if start + len > r {
            return Err(NnError::shape("slice_rows", self.shape(x), &[start + len, c]));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows(x, start), rg))
    }

    /// Row gather; with a parameter table this is an embedding lookup.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = shape2(self.value(src), "gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(NnError::shape("gather_rows", self.shape(src), &[i, c]));
            }
            data.extend_from_slice(self.value(src).row(i));
        }
        let rg = self.rg(&[src]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], data)?,
            Op::GatherRows(src, idx.to_vec()),
            rg,
        ))
    }

    /// Alias of [`Tape::gather_rows`] under its usual name.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Relu(x), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| gelu_fwd(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Gelu(x), rg))
    }

    /// Row-wise softmax (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "softmax")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::Softmax(x), rg))
    }

    /// Sets entries above the diagonal of a square score matrix to -inf.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "causal_mask")?;
        if r != c {
            return Err(NnError::shape("causal_mask", &[r, c], &[r, r]));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for v in &mut data[i * c + i + 1..(i + 1) * c] {
                *v = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::CausalMask(x), rg))
    }

    /// Row-wise layer norm with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "layer_norm")?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(NnError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = self.value(x).data().to_vec();
        let mut rstd = Vec::with_capacity(r);
        let mut out = vec![0.0; r * c];
        for (row, orow) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            for j in 0..c {
                row[j] = (row[j] - mean) * rs;
                orow[j] = row[j] * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean over consecutive groups of `group` rows: `[g*group, c] -> [g, c]`.
    pub fn mean_pool(&mut self, x: Var, group: usize) -> Result<Var> {
        let (r, c) = shape2(self.value(x), "mean_pool")?;
        if group == 0 || r % group != 0 {
            return Err(NnError::shape("mean_pool", &[r, c], &[group, c]));
        }
        let g = r / group;
        let mut out = vec![0.0; g * c];
        for (i, row) in self.value(x).data().chunks_exact(c).enumerate() {
            let o = &mut out[(i / group) * c..(i / group + 1) * c];
            o.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![g, c], out)?, Op::MeanPool(x, group), rg))
    }

    /// Multi-head scaled dot-product attention over a ragged batch.
    ///
    /// `q`, `k`, `v` are `[R, d]` with the rows of each sequence contiguous;
    /// `segments` lists the sequence lengths (summing to `R`). Attention never
    /// crosses a segment boundary. With `causal`, row `i` of a segment only
    /// attends to rows `<= i` of that segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[usize],
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (r, d) = shape2(self.value(q), "attention")?;
        if self.shape(k) != [r, d] || self.shape(v) != [r, d] {
            return Err(NnError::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 || segments.iter().sum::<usize>() != r {
            return Err(NnError::shape("attention", &[r, d], &[segments.iter().sum(), heads]));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; r * d];
        let mut probs = Vec::with_capacity(segments.iter().map(|l| l * l).sum::<usize>() * heads);
        let mut off = 0;
        for &len in segments {
            for h in 0..heads {
                let base = off * d + h * dh;
                let mut s = vec![0.0; len * len];
                // s = q_h k_h^T
                strided_gemm(
                    len, dh, len,
                    &qd[base..], d, 1,
                    &kd[base..], 1, d,
                    0.0, &mut s, len, 1,
                );
                for i in 0..len {
                    let row = &mut s[i * len..(i + 1) * len];
                    row.iter_mut().for_each(|x| *x *= scale);
                    if causal {
                        row[i + 1..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    }
                    softmax_in_place(row);
                }
                // out_h = p v_h
                strided_gemm(
                    len, len, dh,
                    &s, len, 1,
                    &vd[base..], d, 1,
                    0.0, &mut out[base..], d, 1,
                );
                probs.extend_from_slice(&s);
            }
            off += len;
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::new(vec![r, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let n = targets.len().max(1) as f64;
        let w = vec![1.0 / n; targets.len()];
        self.weighted_cross_entropy(logits, targets, &w)
    }

    /// `sum_r w_r * -log softmax(logits_r)[targets_r]`, log-sum-exp stabilized.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let (r, c) = shape2(self.value(logits), "cross_entropy")?;
        if targets.len() != r || weights.len() != r {
            return Err(NnError::shape("cross_entropy", &[r, c], &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::InvalidTarget { id: bad, classes: c });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_exact_mut(c).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += weights[i] * (lse - row[targets[i]]);
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.zip_same(pred, target, "mse")?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Gradient of the last backward passes for a leaf (accumulated).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Adds every bound parameter's leaf gradient into `grads`.
    pub fn param_grads(&self, grads: &mut Grads) {
        for (&id, &v) in &self.bound {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                grads.accumulate(id, g);
            }
        }
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NotScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.leaf_grads.get_mut(&i) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        self.leaf_grads.insert(i, g);
                    }
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Runs `f` on the gradient buffer of `v` if `v` needs a gradient.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                with(*a, &mut |da| gemm(m, n, k, g, false, val(*b).data(), true, 1.0, da));
                with(*b, &mut |db| gemm(k, m, n, val(*a).data(), true, g, false, 1.0, db));
            }
            Op::Add(a, b) => {
                with(*a, &mut |d| add_into(d, g));
                with(*b, &mut |d| add_into(d, g));
            }
            Op::Mul(a, b) => {
                with(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(val(*b).data()))
                        .for_each(|(d, (g, y))| *d += g * y)
                });
                with(*b, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(val(*a).data()))
                        .for_each(|(d, (g, x))| *d += g * x)
                });
            }
            Op::AddBias(x, b) => {
                with(*x, &mut |d| add_into(d, g));
                let c = out.cols();
                with(*b, &mut |d| {
                    for row in g.chunks_exact(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::Scale(x, s) => with(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    with(p, &mut |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows(x, start) => {
                let c = out.cols();
                with(*x, &mut |d| add_into(&mut d[start * c..start * c + g.len()], g));
            }
            Op::GatherRows(src, idx) => {
                let c = out.cols();
                with(*src, &mut |d| {
                    for (r, &s) in idx.iter().enumerate() {
                        add_into(&mut d[s * c..(s + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Relu(x) => with(*x, &mut |d| {
                d.iter_mut()
                    .zip(g.iter().zip(val(*x).data()))
                    .for_each(|(d, (g, x))| {
                        if *x > 0.0 {
                            *d += g
                        }
                    })
            }),
            Op::Gelu(x) => with(*x, &mut |d| {
                d.iter_mut()
                    .zip(g.iter().zip(val(*x).data()))
                    .for_each(|(d, (g, &x))| *d += g * gelu_grad(x))
            }),
            Op::Softmax(x) => {
                let c = out.cols();
                with(*x, &mut |d| {
                    for ((drow, grow), yrow) in d
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(out.data().chunks_exact(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::CausalMask(x) => {
                let c = out.cols();
                with(*x, &mut |d| {
                    for r in 0..c {
                        add_into(&mut d[r * c..r * c + r + 1], &g[r * c..r * c + r + 1]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = out.cols();
                let gn = val(*gain).data();
                with(*gain, &mut |d| {
                    for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                });
                with(*bias, &mut |d| {
                    for grow in g.chunks_exact(c) {
                        add_into(d, grow);
                    }
                });
                with(*x, &mut |d| {
                    let mut dxhat = vec![0.0; c];
                    for (r, (grow, xrow)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        for j in 0..c {
                            dxhat[j] = grow[j] * gn[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let drow = &mut d[r * c..(r + 1) * c];
                        for j in 0..c {
                            drow[j] += rstd[r] * (dxhat[j] - m1 - xrow[j] * m2);
                        }
                    }
                });
            }
            Op::MeanPool(x, group) => {
                let c = out.cols();
                let inv = 1.0 / *group as f64;
                with(*x, &mut |d| {
                    for (r, drow) in d.chunks_exact_mut(c).enumerate() {
                        let grow = &g[(r / group) * c..(r / group + 1) * c];
                        drow.iter_mut().zip(grow).for_each(|(d, g)| *d += g * inv);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, segments, *heads, probs, g, grads),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = val(*logits).cols();
                let s = g[0];
                with(*logits, &mut |d| {
                    for (r, (drow, prow)) in d.chunks_exact_mut(c).zip(probs.chunks_exact(c)).enumerate() {
                        let w = s * weights[r];
                        for j in 0..c {
                            drow[j] += w * prow[j];
                        }
                        drow[targets[r]] -= w;
                    }
                });
            }
            Op::Mse(a, b) => {
                let n = val(*a).len().max(1) as f64;
                let s = 2.0 * g[0] / n;
                let (ad, bd) = (val(*a).data(), val(*b).data());
                with(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += s * (ad[j] - bd[j]);
                    }
                });
                with(*b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] -= s * (ad[j] - bd[j]);
                    }
                });
            }
            Op::Sum(x) => with(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[usize],
        heads: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let d = self.nodes[q.0].value.cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
        );
        let n = qd.len();
        let mut dq = vec![0.0; n];
        let mut dk = vec![0.0; n];
        let mut dv = vec![0.0; n];
        let mut off = 0;
        let mut poff = 0;
        for &len in segments {
            for h in 0..heads {
                let base = off * d + h * dh;
                let p = &probs[poff..poff + len * len];
                poff += len * len;
                // dv_h += p^T dO_h
                strided_gemm(len, len, dh, p, 1, len, &g[base..], d, 1, 1.0, &mut dv[base..], d, 1);
                // dp = dO_h v_h^T
                let mut ds = vec![0.0; len * len];
                strided_gemm(len, dh, len, &g[base..], d, 1, &vd[base..], 1, d, 0.0, &mut ds, len, 1);
                for i in 0..len {
                    let prow = &p[i * len..(i + 1) * len];
                    let drow = &mut ds[i * len..(i + 1) * len];
                    let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..len {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                }
                strided_gemm(len, len, dh, &ds, len, 1, &kd[base..], d, 1, 1.0, &mut dq[base..], d, 1);
                strided_gemm(len, len, dh, &ds, 1, len, &qd[base..], d, 1, 1.0, &mut dk[base..], d, 1);
            }
            off += len;
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.nodes[var.0].requires_grad {
                match &mut grads[var.0] {
                    Some(acc) => add_into(acc, &buf),
                    slot @ None => *slot = Some(buf),
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// Strided `c = beta*c + a*b` where `a` is `m x k` and `b` is `k x n`, each
/// addressed through (row stride, column stride) from the start of its slice.
#[allow(clippy::too_many_arguments)]
fn strided_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every address the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
