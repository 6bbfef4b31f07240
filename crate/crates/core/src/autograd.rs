//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and its operands. Nodes
//! are appended in evaluation order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep. `backward` consumes
//! the tape; a tape cannot be differentiated twice.
//!
//! Broadcasting is deliberately absent: binary ops require equal shapes, and
//! per-sample conditioning is spread over tokens with the explicit `expand`,
//! `modulate` and `scale_tokens` ops.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, permute_data, transpose2, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

pub const LAYERNORM_EPS: f32 = 1e-6;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    LayerNorm { x: Var, inv_std: Vec<f32> },
    Softmax(Var),
    Gelu(Var),
    Silu(Var),
    Expand { x: Var, n: usize },
    Modulate { x: Var, shift: Var, scale: Var },
    ScaleTokens { x: Var, gate: Var },
    Narrow { x: Var, dim: usize, start: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    Mse { a: Var, b: Var },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-owner recording of one forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the root.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index() >= self.grads.len() {
            return Err(Error::DanglingVar(v.index()));
        }
        let shape = &self.shapes[v.index()];
        Ok(match &self.grads[v.index()] {
            Some(g) => Tensor::from_parts(shape.clone(), g.clone()),
            None => Tensor::zeros(shape),
        })
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index() >= self.grads.len() {
            return Err(Error::DanglingVar(v.index()));
        }
        let shape = self.shapes[v.index()].clone();
        Ok(match self.grads[v.index()].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        })
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

#[inline]
fn gelu_fwd(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `dw[k×n] += x[M×k]ᵀ · g[M×n]`, accumulating rows of `x` in order.
fn gemm_at_b_acc(m: usize, k: usize, n: usize, x: &[f32], g: &[f32], dw: &mut [f32]) {
    for i in 0..m {
        let xrow = &x[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (d, &gv) in dw[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *d += xv * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(Error::DanglingVar(v.index()));
        }
        self.nodes.get(v.index()).ok_or(Error::DanglingVar(v.index()))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx }
    }

    /// Records a value as a constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a value whose gradient is wanted.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.node(v)?.value.shape())
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.index()].needs_grad)
    }

    fn finish(&mut self, op_name: &'static str, out: Tensor, op: Op, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions) && inputs.iter().all(|&v| self.nodes[v.index()].value.all_finite()) {
            debug_assert!(out.all_finite(), "{op_name} produced non-finite output from finite input");
        }
        let g = self.grad_any(inputs);
        self.push(out, op, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.nodes[a.index()].value.data(),
            self.nodes[b.index()].value.data(),
            &mut out,
        );
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.finish("matmul", t, Op::MatMul { a, b }, &[a, b]))
    }

    /// `x[..., k] · w[k, n] + b[n]`, treating all leading dims of `x` as rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x)?.to_vec();
        let sw = self.shape(w)?.to_vec();
        let k = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != k {
            return Err(mismatch("linear", &sx, &sw));
        }
        let n = sw[1];
        if let Some(b) = b {
            let sb = self.shape(b)?;
            if sb != [n] {
                return Err(mismatch("linear bias", &sw, sb));
            }
        }
        let m = self.nodes[x.index()].value.numel() / k;
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.nodes[b.index()].value.data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm_acc(
            m,
            k,
            n,
            self.nodes[x.index()].value.data(),
            self.nodes[w.index()].value.data(),
            &mut out,
        );
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::from_parts(shape, out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.finish("linear", t, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched product of `a[B,m,k]` with `b[B,k,n]`, or with `b[B,n,k]` transposed.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a)?.to_vec(), self.shape(b)?.to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("batch_matmul", &sa, &sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("batch_matmul", &sa, &sb));
        }
        let ad = self.nodes[a.index()].value.data();
        let bd = self.nodes[b.index()].value.data();
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            let ab = &ad[i * m * k..(i + 1) * m * k];
            let bb = &bd[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                let bt = transpose2(n, k, bb);
                gemm_acc(m, k, n, ab, &bt, ob);
            } else {
                gemm_acc(m, k, n, ab, bb, ob);
            }
        }
        let t = Tensor::from_parts(vec![bs, m, n], out);
        Ok(self.finish("batch_matmul", t, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.finish("add", t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.finish("sub", t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.finish("mul", t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let t = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|v| v * s).collect());
        Ok(self.finish("scale", t, Op::Scale(x, s), &[x]))
    }

    fn map(&mut self, x: Var, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let tx = &self.node(x)?.value;
        Ok(Tensor::from_parts(
            tx.shape().to_vec(),
            tx.data().iter().map(|&v| f(v)).collect(),
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, gelu_fwd)?;
        Ok(self.finish("gelu", t, Op::Gelu(x), &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, |v| v * sigmoid(v))?;
        Ok(self.finish("silu", t, Op::Silu(x), &[x]))
    }

    /// Affine-free layer norm over the last dim (biased variance, eps under the root).
    pub fn layernorm(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let d = tx.last_dim();
        if d < 2 {
            return Err(mismatch("layernorm", tx.shape(), &[2]));
        }
        let rows = tx.numel() / d;
        let mut out = vec![0.0; tx.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for (xr, yr) in tx.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = xr.iter().sum::<f32>() / d as f32;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for (y, &v) in yr.iter_mut().zip(xr) {
                *y = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.finish("layernorm", t, Op::LayerNorm { x, inv_std }, &[x]))
    }

    /// Softmax over the last dim with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let n = tx.last_dim();
        let mut out = tx.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            let inv = 1.0 / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.finish("softmax", t, Op::Softmax(x), &[x]))
    }

    /// `[B,d] -> [B,n,d]`, repeating each row `n` times.
    pub fn expand(&mut self, x: Var, n: usize) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if tx.shape().len() != 2 || n == 0 {
            return Err(mismatch("expand", tx.shape(), &[n]));
        }
        let (b, d) = (tx.shape()[0], tx.shape()[1]);
        let mut out = Vec::with_capacity(b * n * d);
        for row in tx.data().chunks_exact(d) {
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        let t = Tensor::from_parts(vec![b, n, d], out);
        Ok(self.finish("expand", t, Op::Expand { x, n }, &[x]))
    }

    fn check_tokens_cond(&self, op: &'static str, x: Var, c: Var) -> Result<(usize, usize, usize)> {
        let (sx, sc) = (self.shape(x)?, self.shape(c)?);
        if sx.len() != 3 || sc.len() != 2 || sx[0] != sc[0] || sx[2] != sc[1] {
            return Err(mismatch(op, sx, sc));
        }
        Ok((sx[0], sx[1], sx[2]))
    }

    /// `x ⊙ (1 + scale) + shift` with `x[B,N,d]` and per-sample `shift, scale [B,d]`.
    pub fn modulate(&mut self, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let (b, n, d) = self.check_tokens_cond("modulate", x, shift)?;
        self.check_tokens_cond("modulate", x, scale)?;
        let xd = self.nodes[x.index()].value.data();
        let sh = self.nodes[shift.index()].value.data();
        let sc = self.nodes[scale.index()].value.data();
        let mut out = vec![0.0; b * n * d];
        for bi in 0..b {
            let shr = &sh[bi * d..(bi + 1) * d];
            let scr = &sc[bi * d..(bi + 1) * d];
            for ti in 0..n {
                let off = (bi * n + ti) * d;
                for j in 0..d {
                    out[off + j] = xd[off + j] * (1.0 + scr[j]) + shr[j];
                }
            }
        }
        let t = Tensor::from_parts(vec![b, n, d], out);
        Ok(self.finish("modulate", t, Op::Modulate { x, shift, scale }, &[x, shift, scale]))
    }

    /// `x ⊙ gate` with `x[B,N,d]` and per-sample `gate [B,d]`.
    pub fn scale_tokens(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (b, n, d) = self.check_tokens_cond("scale_tokens", x, gate)?;
        let xd = self.nodes[x.index()].value.data();
        let gd = self.nodes[gate.index()].value.data();
        let mut out = vec![0.0; b * n * d];
        for bi in 0..b {
            let gr = &gd[bi * d..(bi + 1) * d];
            for ti in 0..n {
                let off = (bi * n + ti) * d;
                for j in 0..d {
                    out[off + j] = xd[off + j] * gr[j];
                }
            }
        }
        let t = Tensor::from_parts(vec![b, n, d], out);
        Ok(self.finish("scale_tokens", t, Op::ScaleTokens { x, gate }, &[x, gate]))
    }

    /// Slice `[start, start+len)` along `dim`.
    pub fn narrow(&mut self, x: Var, dim: usize, start: usize, len: usize) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let shape = tx.shape();
        if dim >= shape.len() || len == 0 || start + len > shape[dim] {
            return Err(mismatch("narrow", shape, &[dim, start, len]));
        }
        let outer: usize = shape[..dim].iter().product();
        let inner: usize = shape[dim + 1..].iter().product();
        let full = shape[dim];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&tx.data()[base..base + len * inner]);
        }
        let mut oshape = shape.to_vec();
        oshape[dim] = len;
        let t = Tensor::from_parts(oshape, out);
        Ok(self.finish("narrow", t, Op::Narrow { x, dim, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.node(x)?.value.reshape(shape)?;
        Ok(self.finish("reshape", t, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let mut seen = vec![false; tx.shape().len()];
        if perm.len() != seen.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", tx.shape(), perm));
        }
        let (shape, data) = permute_data(tx.shape(), tx.data(), perm);
        let t = Tensor::from_parts(shape, data);
        Ok(self.finish("permute", t, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Gathers rows of `table[V,d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = &self.node(table)?.value;
        let s = tt.shape();
        if s.len() != 2 || ids.is_empty() {
            return Err(mismatch("embedding", s, &[ids.len()]));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::OutOfRange {
                what: "embedding id",
                value: bad as u128,
                limit: v as u128,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_parts(vec![ids.len(), d], out);
        Ok(self.finish(
            "embedding",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(mismatch("mse", ta.shape(), tb.shape()));
        }
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum();
        let t = Tensor::scalar((s / ta.numel() as f64) as f32);
        Ok(self.finish("mse", t, Op::Mse { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.node(x)?.value.sum() as f32);
        Ok(self.finish("sum", t, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        let t = Tensor::scalar((tx.sum() / tx.numel() as f64) as f32);
        Ok(self.finish("mean", t, Op::Mean(x), &[x]))
    }

    /// Reverse sweep from a scalar `root`. Consumes the tape.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        let root_node = self.node(root)?;
        if !root_node.value.is_scalar() {
            return Err(Error::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[root.index()] = Some(vec![1.0]);

        for i in (0..=root.index()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // keep leaf gradients only
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            shapes,
            grads,
        })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.index()].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index()].needs_grad
    }

    fn backward_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let mut acc = |v: Var, delta: Vec<f32>| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.index()] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.val(*a).shape(), self.val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bt = transpose2(k, n, self.val(*b).data());
                    let mut da = vec![0.0; m * k];
                    gemm_acc(m, n, k, g, &bt, &mut da);
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_at_b_acc(m, k, n, self.val(*a).data(), g, &mut db);
                    acc(*b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let sw = self.val(*w).shape();
                let (k, n) = (sw[0], sw[1]);
                let m = g.len() / n;
                if self.wants(*x) {
                    let wt = transpose2(k, n, self.val(*w).data());
                    let mut dx = vec![0.0; m * k];
                    gemm_acc(m, n, k, g, &wt, &mut dx);
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; k * n];
                    gemm_at_b_acc(m, k, n, self.val(*x).data(), g, &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks_exact(n) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.val(*a).shape();
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = g.len() / (bs * m);
                let ad = self.val(*a).data();
                let bd = self.val(*b).data();
                if self.wants(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let bb = &bd[i * k * n..(i + 1) * k * n];
                        let dab = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            // C = A·Bᵀ, B is [n,k]: dA = G·B
                            gemm_acc(m, n, k, gb, bb, dab);
                        } else {
                            let bt = transpose2(k, n, bb);
                            gemm_acc(m, n, k, gb, &bt, dab);
                        }
                    }
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let ab = &ad[i * m * k..(i + 1) * m * k];
                        let dbb = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // dB[n,k] = Gᵀ·A
                            gemm_at_b_acc(m, n, k, gb, ab, dbb);
                        } else {
                            gemm_at_b_acc(m, k, n, ab, gb, dbb);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bd).map(|(g, b)| g * b).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(ad).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|v| v * s).collect()),
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = vec![0.0; g.len()];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f32>() / d as f32;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f32>() / d as f32;
                    for j in 0..d {
                        dx[r * d + j] = inv * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                acc(*x, dx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks_exact(n).zip(y.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Gelu(x) => {
                let xd = self.val(*x).data();
                acc(*x, g.iter().zip(xd).map(|(g, &v)| g * gelu_grad(v)).collect());
            }
            Op::Silu(x) => {
                let xd = self.val(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(g, &v)| {
                            let s = sigmoid(v);
                            g * s * (1.0 + v * (1.0 - s))
                        })
                        .collect(),
                );
            }
            Op::Expand { x, n } => {
                let d = self.val(*x).last_dim();
                let b = self.val(*x).shape()[0];
                let mut dx = vec![0.0; b * d];
                for bi in 0..b {
                    for ti in 0..*n {
                        let off = (bi * n + ti) * d;
                        for j in 0..d {
                            dx[bi * d + j] += g[off + j];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Modulate { x, shift, scale } => {
                let s = self.val(*x).shape();
                let (b, n, d) = (s[0], s[1], s[2]);
                let xd = self.val(*x).data();
                let sc = self.val(*scale).data();
                let mut dx = vec![0.0; b * n * d];
                let mut dshift = vec![0.0; b * d];
                let mut dscale = vec![0.0; b * d];
                for bi in 0..b {
                    for ti in 0..n {
                        let off = (bi * n + ti) * d;
                        for j in 0..d {
                            let gv = g[off + j];
                            dx[off + j] = gv * (1.0 + sc[bi * d + j]);
                            dshift[bi * d + j] += gv;
                            dscale[bi * d + j] += gv * xd[off + j];
                        }
                    }
                }
                acc(*x, dx);
                acc(*shift, dshift);
                acc(*scale, dscale);
            }
            Op::ScaleTokens { x, gate } => {
                let s = self.val(*x).shape();
                let (b, n, d) = (s[0], s[1], s[2]);
                let xd = self.val(*x).data();
                let gd = self.val(*gate).data();
                let mut dx = vec![0.0; b * n * d];
                let mut dg = vec![0.0; b * d];
                for bi in 0..b {
                    for ti in 0..n {
                        let off = (bi * n + ti) * d;
                        for j in 0..d {
                            let gv = g[off + j];
                            dx[off + j] = gv * gd[bi * d + j];
                            dg[bi * d + j] += gv * xd[off + j];
                        }
                    }
                }
                acc(*x, dx);
                acc(*gate, dg);
            }
            Op::Narrow { x, dim, start } => {
                let shape = self.val(*x).shape();
                let outer: usize = shape[..*dim].iter().product();
                let inner: usize = shape[dim + 1..].iter().product();
                let full = shape[*dim];
                let len = node.value.shape()[*dim];
                let mut dx = vec![0.0; self.val(*x).numel()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (_, dx) = permute_data(node.value.shape(), g, &inv);
                acc(*x, dx);
            }
            Op::Embedding { table, ids } => {
                let d = self.val(*table).last_dim();
                let mut dt = vec![0.0; self.val(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::Mse { a, b } => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                let c = 2.0 * g[0] / ad.len() as f32;
                let da: Vec<f32> = ad.iter().zip(bd).map(|(x, y)| c * (x - y)).collect();
                if self.wants(*b) {
                    acc(*b, da.iter().map(|v| -v).collect());
                }
                acc(*a, da);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.val(*x).numel()]),
            Op::Mean(x) => {
                let n = self.val(*x).numel();
                acc(*x, vec![g[0] / n as f32; n]);
            }
        }
    }
}
