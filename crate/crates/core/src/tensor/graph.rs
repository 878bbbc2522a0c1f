//! Define-by-run gradient tape.
//!
//! Every op appends a node holding its output value and the references it
//! needs for the vector-Jacobian product. Nodes only ever reference earlier
//! nodes, so the tape is topologically ordered by construction and a single
//! reverse sweep visits each node once.

use super::kernels::{self, ConvGeometry};
use super::{Result, Tensor, TensorError, TRAP_NON_FINITE_ENV};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance, the form folded into running statistics.
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { x: usize, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddColBias { x: usize, bias: usize, cols: usize },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Sin(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Select { x: usize, index: usize },
    Stack(Vec<usize>),
    Conv2d { x: usize, w: usize, geom: ConvGeometry },
    Norm(NormSaved),
}

/// Saved state shared by batch-norm (train and eval) and layer-norm.
#[derive(Debug)]
struct NormSaved {
    x: usize,
    gamma: usize,
    beta: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    layout: NormLayout,
    /// Eval-mode batch norm: statistics are constants, no batch coupling.
    frozen: bool,
}

#[derive(Debug, Clone, Copy)]
enum NormLayout {
    /// `[B, C, HW]`, statistics per channel.
    Channels { batch: usize, channels: usize, spatial: usize },
    /// `[D, N]`, statistics per column.
    Columns { rows: usize, cols: usize },
}

impl NormLayout {
    fn groups(&self) -> usize {
        match *self {
            NormLayout::Channels { channels, .. } => channels,
            NormLayout::Columns { cols, .. } => cols,
        }
    }

    /// Flat indices belonging to group `g`.
    fn members(&self, g: usize) -> Box<dyn Iterator<Item = usize>> {
        match *self {
            NormLayout::Channels {
                batch,
                channels,
                spatial,
            } => Box::new((0..batch).flat_map(move |b| {
                let base = (b * channels + g) * spatial;
                base..base + spatial
            })),
            NormLayout::Columns { rows, cols } => Box::new((0..rows).map(move |r| r * cols + g)),
        }
    }

    fn group_size(&self) -> usize {
        match *self {
            NormLayout::Channels { batch, spatial, .. } => batch * spatial,
            NormLayout::Columns { rows, .. } => rows,
        }
    }

    /// Affine parameter index for flat element `i`.
    fn param_index(&self, i: usize) -> usize {
        match *self {
            NormLayout::Channels {
                channels, spatial, ..
            } => (i / spatial) % channels,
            NormLayout::Columns { cols, .. } => i / cols,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// A gradient tape confined to one worker.
pub struct Graph {
    nodes: Vec<Node>,
    trap_non_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    /// New tape; non-finite trapping follows the `LOADCAST_TRAP_NAN` env var.
    pub fn new() -> Self {
        let trap = std::env::var(TRAP_NON_FINITE_ENV)
            .map(|v| !v.is_empty() && v != "0")
            .unwrap_or(false);
        Graph {
            nodes: Vec::new(),
            trap_non_finite: trap,
        }
    }

    pub fn with_trap(mut self, trap: bool) -> Self {
        self.trap_non_finite = trap;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if self.trap_non_finite {
            if let Some(index) = value.first_non_finite() {
                return Err(TensorError::NonFinite {
                    op: name.to_string(),
                    index,
                });
            }
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2().ok_or_else(|| shape_err("matmul", av, bv))?;
        let (k2, n) = bv.dims2().ok_or_else(|| shape_err("matmul", av, bv))?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let out = Tensor::new([m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?;
        self.push("matmul", out, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2().ok_or_else(|| invalid("transpose", format!("rank 2 expected, got {:?}", xv.shape())))?;
        let out = xv.transpose2()?;
        self.push("transpose", out, Op::Transpose { x: x.0, rows, cols }, &[x.0])
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, out, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(name, out, op, &[x.0])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary("sin", x, f64::sin, Op::Sin(x.0))
    }

    /// `x[r x c] + bias[r]`, the bias broadcast across columns.
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (r, c) = xv.dims2().ok_or_else(|| shape_err("add_col_bias", xv, bv))?;
        if bv.len() != r {
            return Err(shape_err("add_col_bias", xv, bv));
        }
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i / c])
            .collect();
        let out = Tensor::new([r, c], data)?;
        self.push("add_col_bias", out, Op::AddColBias { x: x.0, bias: bias.0, cols: c }, &[x.0, bias.0])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[idx(a)] /= total;
                }
            }
        }
        let out = Tensor::new(shape.to_vec(), out)?;
        self.push("softmax", out, Op::Softmax { x: x.0, outer, len, inner }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push("mean", out, Op::Mean(x.0), &[x.0])
    }

    // ---- structural -----------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x.0), &[x.0])
    }

    /// Concatenate rank-2 tensors along `axis` (0 = stack rows, 1 = append columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let (r0, c0) = self
            .value(*first)
            .dims2()
            .ok_or_else(|| invalid("concat", "rank 2 inputs expected"))?;
        if axis > 1 {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: vec![r0, c0],
            });
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (r, c) = pv.dims2().ok_or_else(|| shape_err("concat", self.value(*first), pv))?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(shape_err("concat", self.value(*first), pv));
            }
            dims.push((r, c));
        }
        let (rows, cols) = if axis == 0 {
            (dims.iter().map(|d| d.0).sum(), c0)
        } else {
            (r0, dims.iter().map(|d| d.1).sum())
        };
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for (&p, &(r, c)) in parts.iter().zip(&dims) {
            let src = self.value(p).data();
            for i in 0..r {
                for j in 0..c {
                    let (oi, oj) = if axis == 0 { (offset + i, j) } else { (i, offset + j) };
                    data[oi * cols + oj] = src[i * c + j];
                }
            }
            offset += if axis == 0 { r } else { c };
        }
        let out = Tensor::new([rows, cols], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: ids.clone(),
                axis,
            },
            &ids,
        )
    }

    /// Contiguous range `[start, start + len)` of a rank-2 tensor along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2().ok_or_else(|| invalid("slice", "rank 2 input expected"))?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(invalid("slice", format!("range {start}..{} on axis {axis} of {:?}", start + len, xv.shape())));
        }
        let (rows, cols) = if axis == 0 { (len, c) } else { (r, len) };
        let src = xv.data();
        let data = (0..rows * cols)
            .map(|i| {
                let (a, b) = (i / cols, i % cols);
                if axis == 0 {
                    src[(start + a) * c + b]
                } else {
                    src[a * c + start + b]
                }
            })
            .collect();
        let out = Tensor::new([rows, cols], data)?;
        self.push("slice", out, Op::Slice { x: x.0, axis, start }, &[x.0])
    }

    /// Sub-tensor `x[index, ...]` along the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if shape.len() < 2 || index >= shape[0] {
            return Err(invalid("select", format!("index {index} into {shape:?}")));
        }
        let inner: usize = shape[1..].iter().product();
        let out = Tensor::new(shape[1..].to_vec(), xv.data()[index * inner..(index + 1) * inner].to_vec())?;
        self.push("select", out, Op::Select { x: x.0, index }, &[x.0])
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("stack", "no inputs"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(shape.iter().product::<usize>() * parts.len());
        for &p in parts {
            let pv = self.value(p);
            if pv.shape() != shape.as_slice() {
                return Err(shape_err("stack", self.value(*first), pv));
            }
            data.extend_from_slice(pv.data());
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend(shape);
        let out = Tensor::new(out_shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("stack", out, Op::Stack(ids.clone()), &ids)
    }

    // ---- convolution and normalization ----------------------------------

    /// Zero-padded cross-correlation of `x` (`[C,H,W]` or `[B,C,H,W]`) with
    /// square odd kernels `[C_out, C_in, K, K]`. Stride-1 preserves `H x W`.
    pub fn conv2d(&mut self, x: Var, weights: Var, stride: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weights));
        let (batch, rest) = match xv.shape() {
            [c, h, w] => (1, [*c, *h, *w]),
            [b, c, h, w] => (*b, [*c, *h, *w]),
            _ => return Err(invalid("conv2d", format!("input must be rank 3 or 4, got {:?}", xv.shape()))),
        };
        let [c_in, height, width] = rest;
        let [c_out, kc, kh, kw] = match wv.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            _ => return Err(shape_err("conv2d", xv, wv)),
        };
        if kc != c_in {
            return Err(shape_err("conv2d", xv, wv));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(invalid("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if !(1..=2).contains(&stride) {
            return Err(invalid("conv2d", format!("stride must be 1 or 2, got {stride}")));
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            height,
            width,
            c_out,
            kernel: kh,
            stride,
        };
        let data = kernels::conv2d_forward(xv.data(), wv.data(), &geom);
        let shape = if xv.rank() == 3 {
            vec![c_out, geom.out_height(), geom.out_width()]
        } else {
            vec![batch, c_out, geom.out_height(), geom.out_width()]
        };
        let out = Tensor::new(shape, data)?;
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                x: x.0,
                w: weights.0,
                geom,
            },
            &[x.0, weights.0],
        )
    }

    fn channel_layout(&self, x: Var, op: &'static str) -> Result<NormLayout> {
        match *self.value(x).shape() {
            [c, h, w] => Ok(NormLayout::Channels {
                batch: 1,
                channels: c,
                spatial: h * w,
            }),
            [b, c, h, w] => Ok(NormLayout::Channels {
                batch: b,
                channels: c,
                spatial: h * w,
            }),
            ref s => Err(invalid(op, format!("input must be rank 3 or 4, got {s:?}"))),
        }
    }

    fn check_affine(&self, op: &'static str, layout: NormLayout, gamma: Var, beta: Var) -> Result<()> {
        let n = layout.groups_for_affine();
        for p in [gamma, beta] {
            if self.value(p).len() != n {
                return Err(invalid(op, format!("affine parameter of length {} for {n} features", self.value(p).len())));
            }
        }
        Ok(())
    }

    /// Train-mode batch normalization over `(B, H, W)` per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let layout = self.channel_layout(x, "batch_norm")?;
        self.check_affine("batch_norm", layout, gamma, beta)?;
        let n = layout.group_size();
        if n < 2 {
            return Err(invalid("batch_norm", "train mode needs at least 2 values per channel"));
        }
        let xd = self.value(x).data();
        let groups = layout.groups();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; groups];
        let mut stats = BatchStats {
            mean: vec![0.0; groups],
            var_unbiased: vec![0.0; groups],
        };
        for g in 0..groups {
            let mean = layout.members(g).map(|i| xd[i]).sum::<f64>() / n as f64;
            let ss: f64 = layout.members(g).map(|i| (xd[i] - mean).powi(2)).sum();
            let var = ss / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for i in layout.members(g) {
                xhat[i] = (xd[i] - mean) * istd;
            }
            inv_std[g] = istd;
            stats.mean[g] = mean;
            stats.var_unbiased[g] = ss / (n - 1) as f64;
        }
        let v = self.push_norm("batch_norm", x, gamma, beta, xhat, inv_std, layout, false)?;
        Ok((v, stats))
    }

    /// Eval-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let layout = self.channel_layout(x, "batch_norm")?;
        self.check_affine("batch_norm", layout, gamma, beta)?;
        let groups = layout.groups();
        if running_mean.len() != groups || running_var.len() != groups {
            return Err(invalid("batch_norm", "running statistics length mismatch"));
        }
        let xd = self.value(x).data();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        for g in 0..groups {
            for i in layout.members(g) {
                xhat[i] = (xd[i] - running_mean[g]) * inv_std[g];
            }
        }
        self.push_norm("batch_norm", x, gamma, beta, xhat, inv_std, layout, true)
    }

    /// Layer normalization of each column of a `[D, N]` token matrix.
    pub fn layer_norm_columns(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2().ok_or_else(|| invalid("layer_norm", "rank 2 input expected"))?;
        let layout = NormLayout::Columns { rows, cols };
        self.check_affine("layer_norm", layout, gamma, beta)?;
        let xd = xv.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; cols];
        for g in 0..cols {
            let mean = layout.members(g).map(|i| xd[i]).sum::<f64>() / rows as f64;
            let var = layout.members(g).map(|i| (xd[i] - mean).powi(2)).sum::<f64>() / rows as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for i in layout.members(g) {
                xhat[i] = (xd[i] - mean) * istd;
            }
            inv_std[g] = istd;
        }
        self.push_norm("layer_norm", x, gamma, beta, xhat, inv_std, layout, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_norm(
        &mut self,
        name: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        layout: NormLayout,
        frozen: bool,
    ) -> Result<Var> {
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let p = layout.param_index(i);
                gv[p] * h + bv[p]
            })
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.push(
            name,
            out,
            Op::Norm(NormSaved {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                layout,
                frozen,
            }),
            &[x.0, gamma.0, beta.0],
        )
    }

    // ---- reverse sweep ---------------------------------------------------

    /// Accumulate `d loss / d leaf` into every trainable leaf reachable from `loss`.
    /// Intermediate gradients are discarded afterwards; leaves not connected to
    /// the loss keep a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let shape = node.value.shape().to_vec();
            let acc = node.grad.get_or_insert_with(|| Tensor::zeros(shape));
            if let Some(g) = g {
                add_into(acc.data_mut(), &g);
            }
        }
        // leaves that were never reached still report a zero gradient
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        // add `f`'s contribution into input `j`'s gradient buffer, if it wants one
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[j].requires_grad {
                return;
            }
            let buf = grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                acc(a, &mut |d| add_into(d, &kernels::matmul_a_bt(g, bv, m, n, k)));
                acc(b, &mut |d| add_into(d, &kernels::matmul_at_b(av, g, m, k, n)));
            }
            &Op::Transpose { x, rows, cols } => acc(x, &mut |d| {
                // out is cols x rows; out[j, r] = x[r, j]
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }),
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                acc(a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            &Op::AddScalar(x) | &Op::Reshape(x) => acc(x, &mut |d| add_into(d, g)),
            &Op::AddColBias { x, bias, cols } => {
                acc(x, &mut |d| add_into(d, g));
                acc(bias, &mut |d| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k / cols] += gv;
                    }
                });
            }
            &Op::Relu(x) => acc(x, &mut |d| {
                for (k, o) in out.data().iter().enumerate() {
                    if *o > 0.0 {
                        d[k] += g[k];
                    }
                }
            }),
            &Op::Sigmoid(x) => acc(x, &mut |d| {
                for (k, o) in out.data().iter().enumerate() {
                    d[k] += g[k] * o * (1.0 - o);
                }
            }),
            &Op::Tanh(x) => acc(x, &mut |d| {
                for (k, o) in out.data().iter().enumerate() {
                    d[k] += g[k] * (1.0 - o * o);
                }
            }),
            &Op::Sin(x) => {
                let xv = nodes[x].value.data();
                acc(x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * xv[k].cos();
                    }
                })
            }
            &Op::Softmax { x, outer, len, inner } => acc(x, &mut |d| {
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            d[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
            }),
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean(x) => acc(x, &mut |d| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|d| *d += s);
            }),
            Op::Concat { parts, axis } => {
                let cols = out.dims2().map(|d| d.1).unwrap_or(1);
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = nodes[p].value.dims2().unwrap_or((1, 1));
                    acc(p, &mut |d| {
                        for a in 0..r {
                            for b in 0..c {
                                let (oa, ob) = if *axis == 0 { (offset + a, b) } else { (a, offset + b) };
                                d[a * c + b] += g[oa * cols + ob];
                            }
                        }
                    });
                    offset += if *axis == 0 { r } else { c };
                }
            }
            &Op::Slice { x, axis, start } => {
                let (rows, cols) = out.dims2().unwrap_or((1, 1));
                let c = nodes[x].value.dims2().map(|d| d.1).unwrap_or(1);
                acc(x, &mut |d| {
                    for a in 0..rows {
                        for b in 0..cols {
                            let src = if axis == 0 { (start + a) * c + b } else { a * c + start + b };
                            d[src] += g[a * cols + b];
                        }
                    }
                });
            }
            &Op::Select { x, index } => {
                let inner = out.len();
                acc(x, &mut |d| add_into(&mut d[index * inner..(index + 1) * inner], g));
            }
            Op::Stack(parts) => {
                let inner = nodes[parts[0]].value.len();
                for (k, &p) in parts.iter().enumerate() {
                    acc(p, &mut |d| add_into(d, &g[k * inner..(k + 1) * inner]));
                }
            }
            &Op::Conv2d { x, w, ref geom } => {
                let (dx, dw) = kernels::conv2d_backward(g, nodes[x].value.data(), nodes[w].value.data(), geom);
                acc(x, &mut |d| add_into(d, &dx));
                acc(w, &mut |d| add_into(d, &dw));
            }
            Op::Norm(s) => {
                let gamma = nodes[s.gamma].value.data();
                acc(s.beta, &mut |d| {
                    for (k, gv) in g.iter().enumerate() {
                        d[s.layout.param_index(k)] += gv;
                    }
                });
                acc(s.gamma, &mut |d| {
                    for (k, gv) in g.iter().enumerate() {
                        d[s.layout.param_index(k)] += gv * s.xhat[k];
                    }
                });
                acc(s.x, &mut |d| {
                    let n = s.layout.group_size() as f64;
                    for grp in 0..s.layout.groups() {
                        let istd = s.inv_std[grp];
                        if s.frozen {
                            for k in s.layout.members(grp) {
                                d[k] += g[k] * gamma[s.layout.param_index(k)] * istd;
                            }
                            continue;
                        }
                        // dxhat = g * gamma; dx = istd/n (n dxhat - sum dxhat - xhat sum dxhat*xhat)
                        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                        for k in s.layout.members(grp) {
                            let dh = g[k] * gamma[s.layout.param_index(k)];
                            sum_d += dh;
                            sum_dx += dh * s.xhat[k];
                        }
                        for k in s.layout.members(grp) {
                            let dh = g[k] * gamma[s.layout.param_index(k)];
                            d[k] += istd / n * (n * dh - sum_d - s.xhat[k] * sum_dx);
                        }
                    }
                });
            }
        }
    }
}

impl NormLayout {
    /// Length of the affine parameters: channels for batch norm, rows for layer norm.
    fn groups_for_affine(&self) -> usize {
        match *self {
            NormLayout::Channels { channels, .. } => channels,
            NormLayout::Columns { rows, .. } => rows,
        }
    }
}
