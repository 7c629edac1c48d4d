use rand::Rng;

use super::{matmul_dims, matmul_nn, matmul_nt, matmul_tn, split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Training mode enables dropout; evaluation mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    /// Population variance (divides by the count).
    Var,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Softplus(Var),
    Silu(Var),
    Sqrt(Var),
    Mask(Var, Vec<f64>),
    Reduce {
        src: Var,
        kind: Reduce,
        axis: Option<usize>,
    },
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    PadEdge {
        src: Var,
        axis: usize,
        before: usize,
    },
    BroadcastRows(Var),
    BroadcastCols(Var),
    WindowMean {
        src: Var,
        k: usize,
    },
    CausalConv {
        x: Var,
        w: Var,
        b: Var,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        states: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives. Nodes are appended in execution
/// order, so the node list is already a topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every leaf that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Stores the gradient of `v` in the grad slot of `target`.
    pub fn write_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        let g = self
            .get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; target.numel()]);
        target.set_grad(g)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

    /// Moves a tensor onto the tape; its `requires_grad` flag is honoured.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Copies a tensor onto the tape as a leaf.
    pub fn watch(&mut self, t: &Tensor) -> Var {
        let copy = Tensor::from_raw(t.shape().to_vec(), t.data().to_vec())
            .with_requires_grad(t.requires_grad());
        self.leaf(copy)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(Tensor::from_raw(shape, data), op, rg)
    }

    fn shape2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::dim(op, "2-D tensor", format!("{s:?}"))),
        }
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        matmul_nn(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push_op(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.data(a), self.data(b));
        let (shape, out) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else if db.len() == 1 {
            let y = db[0];
            (sa, da.iter().map(|&x| f(x, y)).collect())
        } else if da.len() == 1 {
            let x = da[0];
            (sb, db.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::dim(
                name,
                format!("{sa:?} or a scalar"),
                format!("{sb:?}"),
            ));
        };
        Ok(self.push_op(shape, out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        self.push_op(shape, out, op, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::Shift(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `ln(1 + eˣ)`, switching to `x + ln(1 + e⁻ˣ)` above 20.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, silu, Op::Silu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("identical shapes")
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::domain("dropout", format!("p = {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push_op(shape, out, Op::Mask(x, mask), &[x]))
    }

    // ---- reductions -------------------------------------------------------

    /// Reduction over one axis, or over everything when `axis` is `None`.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = match axis {
            None => (1, shape.iter().product(), 1),
            Some(a) if a < shape.len() => split_axis(&shape, a),
            Some(a) => {
                return Err(Error::domain(
                    "reduce",
                    format!("axis {a} invalid for shape {shape:?}"),
                ))
            }
        };
        if len == 0 {
            return Err(Error::domain("reduce", "empty axis"));
        }
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let sum: f64 = (0..len).map(|j| d[idx(j)]).sum();
                out[o * inner + i] = match kind {
                    Reduce::Sum => sum,
                    Reduce::Mean => sum / len as f64,
                    Reduce::Var => {
                        let mean = sum / len as f64;
                        (0..len).map(|j| (d[idx(j)] - mean).powi(2)).sum::<f64>() / len as f64
                    }
                };
            }
        }
        let out_shape = match axis {
            None => vec![1],
            Some(a) => {
                let mut s = shape.clone();
                s.remove(a);
                if s.is_empty() {
                    vec![1]
                } else {
                    s
                }
            }
        };
        Ok(self.push_op(out_shape, out, Op::Reduce { src: x, kind, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(Reduce::Sum, x, None).expect("non-empty tensor")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(Reduce::Mean, x, None)
            .expect("non-empty tensor")
    }

    // ---- structural -------------------------------------------------------

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.shape2(x, "transpose")?;
        let d = self.data(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        Ok(self.push_op(vec![n, m], out, Op::Transpose(x), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "at least one part", "none"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis < {}", base.len()),
                format!("{axis}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{base:?} off axis {axis}"),
                    format!("{s:?}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                out.extend_from_slice(&self.data(p)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("range within axis {axis} of {shape:?}"),
                format!("{start}..{}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        Ok(self.push_op(
            s,
            out,
            Op::Slice {
                src: x,
                axis,
                start,
            },
            &[x],
        ))
    }

    /// Pads along `axis` by replicating the first and last slices.
    pub fn pad_edge(&mut self, x: Var, axis: usize, before: usize, after: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "pad_edge",
                format!("axis < {}", shape.len()),
                format!("{axis}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let new_len = len + before + after;
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * new_len * inner);
        for o in 0..outer {
            for j in 0..new_len {
                let src = j.saturating_sub(before).min(len - 1);
                let base = (o * len + src) * inner;
                out.extend_from_slice(&d[base..base + inner]);
            }
        }
        let mut s = shape;
        s[axis] = new_len;
        Ok(self.push_op(
            s,
            out,
            Op::PadEdge {
                src: x,
                axis,
                before,
            },
            &[x],
        ))
    }

    /// Repeats a length-`n` vector as the `m` rows of an `m×n` matrix.
    pub fn broadcast_rows(&mut self, v: Var, m: usize) -> Result<Var> {
        if self.shape(v).len() != 1 {
            return Err(Error::dim(
                "broadcast_rows",
                "1-D tensor",
                format!("{:?}", self.shape(v)),
            ));
        }
        let row = self.data(v).to_vec();
        let n = row.len();
        let out = row.iter().copied().cycle().take(m * n).collect();
        Ok(self.push_op(vec![m, n], out, Op::BroadcastRows(v), &[v]))
    }

    /// Repeats a length-`m` vector as the `n` columns of an `m×n` matrix.
    pub fn broadcast_cols(&mut self, v: Var, n: usize) -> Result<Var> {
        if self.shape(v).len() != 1 {
            return Err(Error::dim(
                "broadcast_cols",
                "1-D tensor",
                format!("{:?}", self.shape(v)),
            ));
        }
        let col = self.data(v);
        let m = col.len();
        let out = col
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, n))
            .collect();
        Ok(self.push_op(vec![m, n], out, Op::BroadcastCols(v), &[v]))
    }

    /// Mean of each run of `k` consecutive rows (valid positions only).
    pub fn window_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let (rows, cols) = self.shape2(x, "window_mean")?;
        if k == 0 || k > rows {
            return Err(Error::dim(
                "window_mean",
                format!("window in 1..={rows}"),
                format!("{k}"),
            ));
        }
        let out_rows = rows - k + 1;
        let d = self.data(x);
        let inv = 1.0 / k as f64;
        let mut out = vec![0.0; out_rows * cols];
        for r in 0..out_rows {
            let orow = &mut out[r * cols..(r + 1) * cols];
            for i in 0..k {
                add_into(orow, &d[(r + i) * cols..(r + i + 1) * cols]);
            }
            orow.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push_op(
            vec![out_rows, cols],
            out,
            Op::WindowMean { src: x, k },
            &[x],
        ))
    }

    /// Depthwise causal convolution over the rows of `x` (`S×C`) with
    /// per-channel taps `w` (`C×K`) and bias `b` (`C`), zero left padding.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (s, c) = self.shape2(x, "causal_conv")?;
        let (wc, k) = self.shape2(w, "causal_conv")?;
        if wc != c || self.shape(b) != [c] {
            return Err(Error::dim(
                "causal_conv",
                format!("weights [{c}, K] and bias [{c}]"),
                format!("{:?} and {:?}", self.shape(w), self.shape(b)),
            ));
        }
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; s * c];
        for t in 0..s {
            for ch in 0..c {
                let mut acc = bd[ch];
                for j in 0..k {
                    let src = t as isize - (k - 1 - j) as isize;
                    if src >= 0 {
                        acc += wd[ch * k + j] * xd[src as usize * c + ch];
                    }
                }
                out[t * c + ch] = acc;
            }
        }
        Ok(self.push_op(vec![s, c], out, Op::CausalConv { x, w, b }, &[x, w, b]))
    }

    /// Sequential selective scan.
    ///
    /// Shapes: `u`, `delta` are `S×D`, `a` is `N`, `b`, `c` are `S×N`.
    /// Per step: `h = exp(Δ_t A) ⊙ h + (Δ_t B_t) x_t`, `y_t = C_t · h`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let (s, d) = self.shape2(u, "selective_scan")?;
        let n = match self.shape(a) {
            [n] => *n,
            other => {
                return Err(Error::dim(
                    "selective_scan",
                    "A of shape [N]",
                    format!("{other:?}"),
                ))
            }
        };
        if self.shape(delta) != [s, d] || self.shape(b) != [s, n] || self.shape(c) != [s, n] {
            return Err(Error::dim(
                "selective_scan",
                format!("delta [{s}, {d}], B and C [{s}, {n}]"),
                format!(
                    "{:?}, {:?}, {:?}",
                    self.shape(delta),
                    self.shape(b),
                    self.shape(c)
                ),
            ));
        }
        let keep_states = [u, delta, a, b, c].iter().any(|&v| self.rg(v));
        let (ud, dd, ad, bd, cd) = (
            self.data(u),
            self.data(delta),
            self.data(a),
            self.data(b),
            self.data(c),
        );
        let mut h = vec![0.0; d * n];
        let mut states = if keep_states {
            Vec::with_capacity(s * d * n)
        } else {
            Vec::new()
        };
        let mut out = vec![0.0; s * d];
        for t in 0..s {
            let brow = &bd[t * n..(t + 1) * n];
            let crow = &cd[t * n..(t + 1) * n];
            for ch in 0..d {
                let dt = dd[t * d + ch];
                let x = ud[t * d + ch];
                let hs = &mut h[ch * n..(ch + 1) * n];
                let mut y = 0.0;
                for k in 0..n {
                    hs[k] = (dt * ad[k]).exp() * hs[k] + dt * brow[k] * x;
                    y += crow[k] * hs[k];
                }
                out[t * d + ch] = y;
            }
            if keep_states {
                states.extend_from_slice(&h);
            }
        }
        Ok(self.push_op(
            vec![s, d],
            out,
            Op::SelectiveScan {
                u,
                delta,
                a,
                b,
                c,
                states,
            },
            &[u, delta, a, b, c],
        ))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.vjp(node, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *g = None;
            } else if g.is_none() {
                *g = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:block) => {
                if let Some($buf) = slot(nodes, grads, $v) {
                    $body
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        let out = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                with_grad!(*a, |ga| { matmul_nt(g, val(*b), ga, m, n, k) });
                with_grad!(*b, |gb| { matmul_tn(val(*a), g, gb, m, k, n) });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                broadcast_back(nodes, grads, *a, g, |_, gi| gi);
                broadcast_back(nodes, grads, *b, g, |_, gi| sign * gi);
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a), val(*b));
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                broadcast_back(nodes, grads, *a, g, |i, gi| gi * pick(db, i));
                broadcast_back(nodes, grads, *b, g, |i, gi| gi * pick(da, i));
            }
            Op::Div(a, b) => {
                let (da, db) = (val(*a), val(*b));
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                broadcast_back(nodes, grads, *a, g, |i, gi| gi / pick(db, i));
                broadcast_back(nodes, grads, *b, g, |i, gi| {
                    let y = pick(db, i);
                    -gi * pick(da, i) / (y * y)
                });
            }
            Op::Scale(x, s) => with_grad!(*x, |gx| {
                gx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * s);
            }),
            Op::Shift(x) => with_grad!(*x, |gx| { add_into(gx, g) }),
            Op::Exp(x) => with_grad!(*x, |gx| {
                for ((d, gi), o) in gx.iter_mut().zip(g).zip(out) {
                    *d += gi * o;
                }
            }),
            Op::Softplus(x) => with_grad!(*x, |gx| {
                for ((d, gi), xi) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *d += gi * sigmoid(*xi);
                }
            }),
            Op::Silu(x) => with_grad!(*x, |gx| {
                for ((d, gi), xi) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *d += gi * silu_grad(*xi);
                }
            }),
            Op::Sqrt(x) => with_grad!(*x, |gx| {
                for ((d, gi), o) in gx.iter_mut().zip(g).zip(out) {
                    *d += gi * 0.5 / o;
                }
            }),
            Op::Mask(x, mask) => with_grad!(*x, |gx| {
                for ((d, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }),
            Op::Reduce { src, kind, axis } => with_grad!(*src, |gx| {
                let shape = nodes[src.0].value.shape();
                let (outer, len, inner) = match axis {
                    None => (1, gx.len(), 1),
                    Some(a) => split_axis(shape, *a),
                };
                let xd = val(*src);
                for o in 0..outer {
                    for i in 0..inner {
                        let go = g[o * inner + i];
                        let idx = |j: usize| (o * len + j) * inner + i;
                        match kind {
                            Reduce::Sum => (0..len).for_each(|j| gx[idx(j)] += go),
                            Reduce::Mean => (0..len).for_each(|j| gx[idx(j)] += go / len as f64),
                            Reduce::Var => {
                                let mean = (0..len).map(|j| xd[idx(j)]).sum::<f64>() / len as f64;
                                for j in 0..len {
                                    gx[idx(j)] += go * 2.0 * (xd[idx(j)] - mean) / len as f64;
                                }
                            }
                        }
                    }
                }
            }),
            Op::Transpose(x) => with_grad!(*x, |gx| {
                let (m, n) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] += g[j * m + i];
                    }
                }
            }),
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.shape()[*axis];
                    with_grad!(p, |gp| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut gp[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => with_grad!(*src, |gx| {
                let (outer, full, inner) = split_axis(nodes[src.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    add_into(
                        &mut gx[dst..dst + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }),
            Op::PadEdge { src, axis, before } => with_grad!(*src, |gx| {
                let (outer, len, inner) = split_axis(nodes[src.0].value.shape(), *axis);
                let new_len = node.value.shape()[*axis];
                for o in 0..outer {
                    for j in 0..new_len {
                        let s = j.saturating_sub(*before).min(len - 1);
                        let dst = (o * len + s) * inner;
                        let from = (o * new_len + j) * inner;
                        add_into(&mut gx[dst..dst + inner], &g[from..from + inner]);
                    }
                }
            }),
            Op::BroadcastRows(v) => with_grad!(*v, |gv| {
                let n = gv.len();
                for row in g.chunks(n) {
                    add_into(gv, row);
                }
            }),
            Op::BroadcastCols(v) => with_grad!(*v, |gv| {
                let n = node.value.shape()[1];
                for (d, row) in gv.iter_mut().zip(g.chunks(n)) {
                    *d += row.iter().sum::<f64>();
                }
            }),
            Op::WindowMean { src, k } => with_grad!(*src, |gx| {
                let cols = node.value.shape()[1];
                let out_rows = node.value.shape()[0];
                let inv = 1.0 / *k as f64;
                for r in 0..out_rows {
                    let grow = &g[r * cols..(r + 1) * cols];
                    for i in 0..*k {
                        for (d, gi) in gx[(r + i) * cols..(r + i + 1) * cols].iter_mut().zip(grow) {
                            *d += gi * inv;
                        }
                    }
                }
            }),
            Op::CausalConv { x, w, b } => {
                let (s, c) = (node.value.shape()[0], node.value.shape()[1]);
                let k = nodes[w.0].value.shape()[1];
                let (xd, wd) = (val(*x), val(*w));
                with_grad!(*b, |gb| {
                    for t in 0..s {
                        add_into(gb, &g[t * c..(t + 1) * c]);
                    }
                });
                with_grad!(*w, |gw| {
                    for t in 0..s {
                        for ch in 0..c {
                            let go = g[t * c + ch];
                            for j in 0..k {
                                let src = t as isize - (k - 1 - j) as isize;
                                if src >= 0 {
                                    gw[ch * k + j] += go * xd[src as usize * c + ch];
                                }
                            }
                        }
                    }
                });
                with_grad!(*x, |gx| {
                    for t in 0..s {
                        for ch in 0..c {
                            let go = g[t * c + ch];
                            for j in 0..k {
                                let src = t as isize - (k - 1 - j) as isize;
                                if src >= 0 {
                                    gx[src as usize * c + ch] += go * wd[ch * k + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::SelectiveScan {
                u,
                delta,
                a,
                b,
                c,
                states,
            } => self.scan_vjp(g, grads, [*u, *delta, *a, *b, *c], states),
        }
    }

    fn scan_vjp(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        [u, delta, a, b, c]: [Var; 5],
        states: &[f64],
    ) {
        let (s, d) = (self.shape(u)[0], self.shape(u)[1]);
        let n = self.shape(a)[0];
        let (ud, dd, ad, bd, cd) = (
            self.data(u),
            self.data(delta),
            self.data(a),
            self.data(b),
            self.data(c),
        );

        let mut gu = vec![0.0; s * d];
        let mut gdelta = vec![0.0; s * d];
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; s * n];
        let mut gc = vec![0.0; s * n];
        // dL/dh_t carried backwards through time, one block per channel.
        let mut dh = vec![0.0; d * n];
        for t in (0..s).rev() {
            let h_t = &states[t * d * n..(t + 1) * d * n];
            let h_prev = if t > 0 {
                &states[(t - 1) * d * n..t * d * n]
            } else {
                &[][..]
            };
            for ch in 0..d {
                let gy = g[t * d + ch];
                let dt = dd[t * d + ch];
                let x = ud[t * d + ch];
                let dhc = &mut dh[ch * n..(ch + 1) * n];
                let mut gdt = 0.0;
                let mut gx = 0.0;
                for k in 0..n {
                    let hk = h_t[ch * n + k];
                    gc[t * n + k] += gy * hk;
                    dhc[k] += gy * cd[t * n + k];
                    let decay = (dt * ad[k]).exp();
                    let hp = if t > 0 { h_prev[ch * n + k] } else { 0.0 };
                    let g_decay = dhc[k] * hp;
                    let bk = bd[t * n + k];
                    gdt += g_decay * decay * ad[k] + dhc[k] * bk * x;
                    ga[k] += g_decay * decay * dt;
                    gb[t * n + k] += dhc[k] * dt * x;
                    gx += dhc[k] * dt * bk;
                    dhc[k] *= decay;
                }
                gdelta[t * d + ch] += gdt;
                gu[t * d + ch] += gx;
            }
        }
        for (v, local) in [(u, gu), (delta, gdelta), (a, ga), (b, gb), (c, gc)] {
            if let Some(buf) = slot(&self.nodes, grads, v) {
                add_into(buf, &local);
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` is inert.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Accumulates `f(i, g_i)` into the gradient of `v`, summing when `v` was a
/// broadcast scalar.
fn broadcast_back(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    v: Var,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    let Some(gv) = slot(nodes, grads, v) else {
        return;
    };
    if nodes[v.0].value.numel() == 1 && g.len() != 1 {
        gv[0] += g.iter().enumerate().map(|(i, &gi)| f(i, gi)).sum::<f64>();
    } else {
        for (i, (d, &gi)) in gv.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}
