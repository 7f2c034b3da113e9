use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Sigmoid,
    Relu,
    Elu,
    Softplus,
    Abs,
    Affine { scale: f64, shift: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// How the right operand of a binary op is laid over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Full,
    /// `[C]` or `[C,1,1]` repeated over every pixel.
    PerChannel { c: usize, plane: usize },
    /// `[1,H,W]` repeated over every channel.
    Spatial { plane: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    Depthwise {
        input: usize,
        kernel: Arc<Tensor>,
    },
    Upsample {
        input: usize,
        scale: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Unary {
        input: usize,
        kind: Unary,
    },
    Binary {
        a: usize,
        b: usize,
        kind: Binary,
        bcast: Broadcast,
    },
    MaxPool2 {
        input: usize,
        argmax: Vec<u32>,
    },
    AvgPool2 {
        input: usize,
    },
    GlobalAvg {
        input: usize,
    },
    Sum {
        input: usize,
    },
    DiffX {
        input: usize,
    },
    DiffY {
        input: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of operations; node order is a topological order.
///
/// Gradients accumulate into leaf buffers across calls to [`Tape::backward`]
/// until [`Tape::zero_grad`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf sharing storage with the caller (used for model parameters).
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (cin, h, w) = self.value(input).dims3()?;
        let (cout, wcin, kh, kw) = match self.shape(weight) {
            &[a, b, c, d] => (a, b, c, d),
            other => return Err(dim_err!("conv2d weight must be 4-D, got {:?}", other)),
        };
        if wcin != cin {
            return Err(dim_err!("conv2d input has {} channels but weight expects {}", cin, wcin));
        }
        if self.value(bias).numel() != cout {
            return Err(dim_err!("conv2d bias has {} entries for {} output channels", self.value(bias).numel(), cout));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(dim_err!("conv2d kernel must be odd, got {}x{}", kh, kw));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(dim_err!("conv2d kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * padding, w + 2 * padding));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new([cout, geom.ho, geom.wo], out)?,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                geom,
            },
            rg,
        ))
    }

    /// Filters every channel with the same fixed, odd-sized square kernel.
    /// The kernel never receives a gradient.
    pub fn depthwise_fixed(&mut self, input: Var, kernel: Arc<Tensor>) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let k = match kernel.shape() {
            &[a, b] if a == b && a % 2 == 1 => a,
            other => return Err(dim_err!("fixed filter must be an odd square, got {:?}", other)),
        };
        let out = kernels::depthwise_forward(self.value(input).data(), c, h, w, kernel.data(), k);
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, h, w], out)?, Op::Depthwise { input: input.0, kernel }, rg))
    }

    pub fn upsample_bilinear(&mut self, input: Var, scale: usize) -> Result<Var> {
        if scale == 0 {
            return Err(Error::Parameter("upsample scale must be >= 1".into()));
        }
        let (c, h, w) = self.value(input).dims3()?;
        let out = kernels::upsample_forward(self.value(input).data(), c, h, w, scale);
        let rg = self.rg(&[input]);
        Ok(self.push(
            Tensor::new([c, h * scale, w * scale], out)?,
            Op::Upsample { input: input.0, scale },
            rg,
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(dim_err!("concat spatial mismatch {}x{} vs {}x{}", ha, wa, hb, wb));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([ca + cb, ha, wa], data)?, Op::Concat { a: a.0, b: b.0 }, rg))
    }

    fn unary(&mut self, input: Var, kind: Unary) -> Var {
        let x = self.value(input);
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Relu => |v| v.max(0.0),
            Unary::Elu => |v| if v > 0.0 { v } else { v.exp_m1() },
            Unary::Softplus => kernels::softplus,
            Unary::Abs => f64::abs,
            Unary::Affine { .. } => |v| v,
        };
        let data: Vec<f64> = match kind {
            Unary::Affine { scale, shift } => x.data().iter().map(|v| scale * v + shift).collect(),
            _ => x.data().iter().map(|&v| f(v)).collect(),
        };
        let shape = x.shape().to_vec();
        let rg = self.rg(&[input]);
        self.push(Tensor { shape, data }, Op::Unary { input: input.0, kind }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Elu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Unary::Affine { scale: s, shift: 0.0 })
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Unary::Affine { scale, shift })
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    fn broadcast_of(&self, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Full);
        }
        if let &[c, h, w] = sa {
            let per_channel = matches!(sb, &[n] if n == c) || sb == [c, 1, 1];
            if per_channel {
                return Ok(Broadcast::PerChannel { c, plane: h * w });
            }
            if sb == [1, h, w] {
                return Ok(Broadcast::Spatial { plane: h * w });
            }
        }
        Err(dim_err!("cannot broadcast {:?} over {:?}", sb, sa))
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let bcast = self.broadcast_of(a, b)?;
        let (xa, xb) = (self.value(a), self.value(b));
        let op = |u: f64, v: f64| match kind {
            Binary::Add => u + v,
            Binary::Sub => u - v,
            Binary::Mul => u * v,
        };
        let data: Vec<f64> = xa
            .data()
            .iter()
            .enumerate()
            .map(|(i, &u)| op(u, xb.data()[broadcast_index(bcast, i)]))
            .collect();
        let shape = xa.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor { shape, data },
            Op::Binary {
                a: a.0,
                b: b.0,
                kind,
                bcast,
            },
            rg,
        ))
    }

    /// `a + b`; `b` may be a per-channel vector or a `[1,H,W]` map.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// 2×2 max pooling; ties go to the first element in row-major order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("2x pooling needs even spatial dims, got {}x{}", h, w));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_i = (ch * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > x[best_i] {
                            best_i = i;
                        }
                    }
                    out.push(x[best_i]);
                    argmax.push(best_i as u32);
                }
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, ho, wo], out)?, Op::MaxPool2 { input: input.0, argmax }, rg))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("2x pooling needs even spatial dims, got {}x{}", h, w));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = (ch * h + 2 * oy) * w + 2 * ox;
                    out.push(0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]));
                }
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, ho, wo], out)?, Op::AvgPool2 { input: input.0 }, rg))
    }

    /// `[C,H,W] → [C,1,1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let x = self.value(input);
        let out: Vec<f64> = (0..c)
            .map(|ch| x.channel(ch).iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, 1, 1], out)?, Op::GlobalAvg { input: input.0 }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input: input.0 }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Forward difference along width: `x[..., i+1] − x[..., i]`, shape `[C,H,W−1]`.
    pub fn diff_x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if w < 2 {
            return Err(dim_err!("diff_x needs width >= 2"));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * h * (w - 1));
        for row in x.chunks(w) {
            out.extend(row.windows(2).map(|p| p[1] - p[0]));
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, h, w - 1], out)?, Op::DiffX { input: input.0 }, rg))
    }

    /// Forward difference along height, shape `[C,H−1,W]`.
    pub fn diff_y(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if h < 2 {
            return Err(dim_err!("diff_y needs height >= 2"));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * (h - 1) * w);
        for plane in x.chunks(h * w) {
            for y in 0..h - 1 {
                out.extend((0..w).map(|i| plane[(y + 1) * w + i] - plane[y * w + i]));
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new([c, h - 1, w], out)?, Op::DiffY { input: input.0 }, rg))
    }

    /// Reverse sweep from a scalar `loss`, adding into leaf gradient buffers.
    ///
    /// Returns the number of nodes visited, which is `loss.id() + 1`.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);
        let mut visits = 0;
        for i in (0..n).rev() {
            visits += 1;
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(visits)
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut take = |j: usize| {
                    wants(j).then(|| adj[j].take().unwrap_or_else(|| vec![0.0; nodes[j].value.numel()]))
                };
                let (mut dx, mut dw, mut db) = (take(*input), take(*weight), take(*bias));
                kernels::conv2d_backward(
                    nodes[*input].value.data(),
                    nodes[*weight].value.data(),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (j, d) in [(*input, dx), (*weight, dw), (*bias, db)] {
                    if d.is_some() {
                        adj[j] = d;
                    }
                }
            }
            Op::Depthwise { input, kernel } => {
                if wants(*input) {
                    let (c, h, w) = nodes[*input].value.dims3().expect("recorded as 3-D");
                    let k = kernel.shape()[0];
                    let d = adj_mut(adj, nodes, *input);
                    kernels::depthwise_backward(g, c, h, w, kernel.data(), k, d);
                }
            }
            Op::Upsample { input, scale } => {
                if wants(*input) {
                    let (c, h, w) = nodes[*input].value.dims3().expect("recorded as 3-D");
                    let d = adj_mut(adj, nodes, *input);
                    kernels::upsample_backward(g, c, h, w, *scale, d);
                }
            }
            Op::Concat { a, b } => {
                let na = nodes[*a].value.numel();
                if wants(*a) {
                    add_into(adj_mut(adj, nodes, *a), &g[..na]);
                }
                if wants(*b) {
                    add_into(adj_mut(adj, nodes, *b), &g[na..]);
                }
            }
            Op::Unary { input, kind } => {
                if !wants(*input) {
                    return;
                }
                let x = nodes[*input].value.data();
                let y = nodes[i].value.data();
                let d = adj_mut(adj, nodes, *input);
                for k in 0..d.len() {
                    let local = match kind {
                        Unary::Sigmoid => y[k] * (1.0 - y[k]),
                        Unary::Relu => {
                            if x[k] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Elu => {
                            if x[k] > 0.0 {
                                1.0
                            } else {
                                y[k] + 1.0
                            }
                        }
                        Unary::Softplus => kernels::sigmoid(x[k]),
                        Unary::Abs => {
                            if x[k] > 0.0 {
                                1.0
                            } else if x[k] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Affine { scale, .. } => *scale,
                    };
                    d[k] += local * g[k];
                }
            }
            Op::Binary { a, b, kind, bcast } => {
                let xa = nodes[*a].value.data();
                let xb = nodes[*b].value.data();
                if wants(*a) {
                    let d = adj_mut(adj, nodes, *a);
                    match kind {
                        Binary::Add | Binary::Sub => add_into(d, g),
                        Binary::Mul => {
                            for k in 0..d.len() {
                                d[k] += g[k] * xb[broadcast_index(*bcast, k)];
                            }
                        }
                    }
                }
                if wants(*b) {
                    let d = adj_mut(adj, nodes, *b);
                    let sign = if *kind == Binary::Sub { -1.0 } else { 1.0 };
                    for k in 0..g.len() {
                        let local = if *kind == Binary::Mul { xa[k] } else { sign };
                        d[broadcast_index(*bcast, k)] += local * g[k];
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if wants(*input) {
                    let d = adj_mut(adj, nodes, *input);
                    for (k, &src) in argmax.iter().enumerate() {
                        d[src as usize] += g[k];
                    }
                }
            }
            Op::AvgPool2 { input } => {
                if wants(*input) {
                    let (c, h, w) = nodes[*input].value.dims3().expect("recorded as 3-D");
                    let (ho, wo) = (h / 2, w / 2);
                    let d = adj_mut(adj, nodes, *input);
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = 0.25 * g[(ch * ho + oy) * wo + ox];
                                let base = (ch * h + 2 * oy) * w + 2 * ox;
                                for off in [0, 1, w, w + 1] {
                                    d[base + off] += gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalAvg { input } => {
                if wants(*input) {
                    let (_, h, w) = nodes[*input].value.dims3().expect("recorded as 3-D");
                    let plane = h * w;
                    let d = adj_mut(adj, nodes, *input);
                    for (k, v) in d.iter_mut().enumerate() {
                        *v += g[k / plane] / plane as f64;
                    }
                }
            }
            Op::Sum { input } => {
                if wants(*input) {
                    let d = adj_mut(adj, nodes, *input);
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::DiffX { input } => {
                if wants(*input) {
                    let w = nodes[*input].value.shape()[2];
                    let d = adj_mut(adj, nodes, *input);
                    for (row_d, row_g) in d.chunks_mut(w).zip(g.chunks(w - 1)) {
                        for (k, &gv) in row_g.iter().enumerate() {
                            row_d[k + 1] += gv;
                            row_d[k] -= gv;
                        }
                    }
                }
            }
            Op::DiffY { input } => {
                if wants(*input) {
                    let (_, h, w) = nodes[*input].value.dims3().expect("recorded as 3-D");
                    let d = adj_mut(adj, nodes, *input);
                    for (plane_d, plane_g) in d.chunks_mut(h * w).zip(g.chunks((h - 1) * w)) {
                        for y in 0..h - 1 {
                            for x in 0..w {
                                let gv = plane_g[y * w + x];
                                plane_d[(y + 1) * w + x] += gv;
                                plane_d[y * w + x] -= gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn adj_mut<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], j: usize) -> &'a mut [f64] {
    let len = nodes[j].value.numel();
    adj[j].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn broadcast_index(b: Broadcast, i: usize) -> usize {
    match b {
        Broadcast::Full => i,
        Broadcast::PerChannel { c, plane } => (i / plane) % c,
        Broadcast::Spatial { plane } => i % plane,
    }
}
