//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its backward rule. Nodes only ever reference earlier nodes, so
//! the tape is topologically ordered by construction and [`Tape::backward`]
//! walks it once in reverse.
//!
//! ```
//! use mmnet_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::{axis_layout, numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise unary functions accepted by [`Tape::apply_elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Relu,
    Exp,
    Log,
}

/// Broadcasting binary functions accepted by [`Tape::apply_binary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Kind of a recorded operation; used to select a backward rule for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Scale,
    AddScalar,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Conv2d,
    Softmax,
    LogSoftmax,
    Sum,
    SumAxis,
    MaxAxis,
    Norm,
    Reshape,
    Transpose,
    Concat,
    Resize,
    Gather,
}

/// Stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    /// Stride 1 with the padding that keeps spatial extents for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: (kernel - 1) / 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.ho * self.wo;
        let mut cols = vec![0.0; self.patch() * n_out];
        let p = self.padding as isize;
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let n_out = self.ho * self.wo;
        let p = self.padding as isize;
        for c in 0..self.c_in {
            let plane = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis interpolation taps: output index reads `(1 - w) * x[i0] + w * x[i1]`.
#[derive(Clone, Debug)]
struct Taps {
    i0: Vec<usize>,
    i1: Vec<usize>,
    w: Vec<f64>,
}

impl Taps {
    /// Half-pixel-centre sampling (the `align_corners = false` convention).
    fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut taps = Self {
            i0: Vec::with_capacity(output),
            i1: Vec::with_capacity(output),
            w: Vec::with_capacity(output),
        };
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            taps.i0.push(i0);
            taps.i1.push(i1);
            taps.w.push(if i1 == i0 { 0.0 } else { src - i0 as f64 });
        }
        taps
    }
}

#[derive(Clone, Debug)]
struct ResizePlan {
    channels: usize,
    h: usize,
    w: usize,
    ys: Taps,
    xs: Taps,
}

enum Op {
    Leaf,
    Unary {
        x: usize,
        f: Elementwise,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    AddScalar {
        x: usize,
    },
    Binary {
        a: usize,
        b: usize,
        f: Binary,
        a_map: Option<Vec<usize>>,
        b_map: Option<Vec<usize>>,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LogSoftmax {
        x: usize,
        axis: usize,
    },
    Sum {
        x: usize,
    },
    SumAxis {
        x: usize,
        axis: usize,
    },
    MaxAxis {
        x: usize,
        src: Vec<usize>,
    },
    Norm {
        x: usize,
        axis: usize,
    },
    Reshape {
        x: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Resize {
        x: usize,
        plan: ResizePlan,
    },
    Gather {
        x: usize,
        src: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Unary { f, .. } => match f {
                Elementwise::Sigmoid => OpKind::Sigmoid,
                Elementwise::Relu => OpKind::Relu,
                Elementwise::Exp => OpKind::Exp,
                Elementwise::Log => OpKind::Log,
            },
            Op::Scale { .. } => OpKind::Scale,
            Op::AddScalar { .. } => OpKind::AddScalar,
            Op::Binary { f, .. } => match f {
                Binary::Add => OpKind::Add,
                Binary::Sub => OpKind::Sub,
                Binary::Mul => OpKind::Mul,
                Binary::Div => OpKind::Div,
            },
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Sum { .. } => OpKind::Sum,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::MaxAxis { .. } => OpKind::MaxAxis,
            Op::Norm { .. } => OpKind::Norm,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Resize { .. } => OpKind::Resize,
            Op::Gather { .. } => OpKind::Gather,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for a single forward pass.
///
/// A tape is single-owner: build it, call [`Tape::backward`] once, and drop
/// it. Independent tapes share nothing and may be used from separate threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of the leaves of a consumed tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, if the leaf was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Shape produced by combining `a` and `b` when every axis either matches or is 1.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every element of `out`, the flat index of the element of `src` it reads.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if src[d] == 1 { 0 } else { s };
        s *= src[d];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
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

    /// Makes every backward rule of `kind` a no-op. Only useful to prove that
    /// gradient checks detect a broken rule.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
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

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A constant copy of `v`'s current value (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn output(&self, shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).expect("op produced inconsistent shape")
    }

    // ---- pointwise -------------------------------------------------------

    pub fn apply_elementwise(&mut self, x: Var, f: Elementwise) -> Result<Var> {
        let xv = self.value(x);
        if f == Elementwise::Log {
            if let Some(&bad) = xv.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::LogDomain(bad));
            }
        }
        let out = match f {
            Elementwise::Sigmoid => xv.map(sigmoid),
            Elementwise::Relu => xv.map(|v| if v > 0.0 { v } else { 0.0 }),
            Elementwise::Exp => xv.map(libm::exp),
            Elementwise::Log => xv.map(libm::log),
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary { x: x.0, f }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.apply_elementwise(x, Elementwise::Sigmoid)
            .expect("sigmoid is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.apply_elementwise(x, Elementwise::Relu)
            .expect("relu is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.apply_elementwise(x, Elementwise::Exp)
            .expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply_elementwise(x, Elementwise::Log)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x: x.0, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar { x: x.0 }, rg)
    }

    pub fn apply_binary(&mut self, a: Var, b: Var, f: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: "elementwise",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let a_map = (sa != out_shape.as_slice()).then(|| broadcast_map(sa, &out_shape));
        let b_map = (sb != out_shape.as_slice()).then(|| broadcast_map(sb, &out_shape));
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let n = numel(&out_shape);
        let op = |x: f64, y: f64| match f {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = match (&a_map, &b_map) {
            (None, None) => ad.iter().zip(bd).map(|(&x, &y)| op(x, y)).collect(),
            _ => (0..n)
                .map(|i| {
                    let ia = a_map.as_ref().map_or(i, |m| m[i]);
                    let ib = b_map.as_ref().map_or(i, |m| m[i]);
                    op(ad[ia], bd[ib])
                })
                .collect(),
        };
        let out = self.output(&out_shape, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::Binary {
                a: a.0,
                b: b.0,
                f,
                a_map,
                b_map,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(a, b, Binary::Div)
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            0.0,
            &mut data,
        );
        let out = self.output(&[m, n], data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// Cross-correlation of `x: [C_in, H, W]` with `kernel: [C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] || spec.stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        let (c_in, h, w) = (sx[0], sx[1], sx[2]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
        if kh > ph || kw > pw {
            return Err(Error::KernelTooLarge {
                kernel: kh.max(kw),
                height: ph,
                width: pw,
            });
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            ho: (ph - kh) / spec.stride + 1,
            wo: (pw - kw) / spec.stride + 1,
        };
        let cols = geom.im2col(self.value(x).data());
        let n_out = geom.ho * geom.wo;
        let mut data = vec![0.0; c_out * n_out];
        gemm(
            MatRef::new(self.value(kernel).data(), c_out, geom.patch()),
            MatRef::new(&cols, geom.patch(), n_out),
            0.0,
            &mut data,
        );
        let out = self.output(&[c_out, geom.ho, geom.wo], data);
        let rg = self.rg(x) || self.rg(kernel);
        let cols = if self.rg(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            out,
            Op::Conv2d {
                x: x.0,
                w: kernel.0,
                geom,
                cols,
            },
            rg,
        ))
    }

    // ---- normalisation and reductions -------------------------------------

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { op, axis, rank });
        }
        Ok(())
    }

    /// Softmax along `axis`, stabilised by subtracting the per-slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_layout(xv.shape(), axis);
        let mut data = xv.data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let max = (0..len)
                    .map(|i| data[base + i * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = libm::exp(data[base + i * inner] - max);
                    data[base + i * inner] = e;
                    total += e;
                }
                for i in 0..len {
                    data[base + i * inner] /= total;
                }
            }
        }
        let out = self.output(xv.shape(), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x: x.0, axis }, rg))
    }

    /// Log-softmax along `axis` via the stabilised log-sum-exp.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_layout(xv.shape(), axis);
        let mut data = xv.data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let max = (0..len)
                    .map(|i| data[base + i * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..len)
                    .map(|i| libm::exp(data[base + i * inner] - max))
                    .sum();
                let lse = max + libm::log(total);
                for i in 0..len {
                    data[base + i * inner] -= lse;
                }
            }
        }
        let out = self.output(xv.shape(), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSoftmax { x: x.0, axis }, rg))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_layout(xv.shape(), axis);
        let d = xv.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let row = &d[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let out = self.output(&keepdim(xv.shape(), axis), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SumAxis { x: x.0, axis }, rg))
    }

    /// Maximum along `axis` (extent kept as 1). The gradient goes to the first
    /// maximal element of each slice.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_axis", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_layout(xv.shape(), axis);
        let d = xv.data();
        let mut src = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let mut best = base;
                for i in 1..len {
                    if d[base + i * inner] > d[best] {
                        best = base + i * inner;
                    }
                }
                src.push(best);
            }
        }
        let data = src.iter().map(|&i| d[i]).collect();
        let out = self.output(&keepdim(xv.shape(), axis), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxAxis { x: x.0, src }, rg))
    }

    /// Euclidean norm along `axis` (extent kept as 1). The backward rule is
    /// taken as zero where the norm vanishes.
    pub fn l2_norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2_norm", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_layout(xv.shape(), axis);
        let d = xv.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for j in 0..inner {
                    let v = d[(o * len + i) * inner + j];
                    data[o * inner + j] += v * v;
                }
            }
        }
        data.iter_mut().for_each(|v| *v = libm::sqrt(*v));
        let out = self.output(&keepdim(xv.shape(), axis), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Norm { x: x.0, axis }, rg))
    }

    // ---- layout -----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x: x.0 }, rg))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: Vec::new(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let d = self.value(x).data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = d[r * cols + c];
            }
        }
        let out = self.output(&[cols, rows], data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose { x: x.0, rows, cols }, rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_layout(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.value(p).data();
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let out = self.output(&shape, data);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Bilinear resize of `x: [C, H, W]` to `[C, height, width]`.
    pub fn resize_bilinear(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch {
                op: "resize_bilinear",
                lhs: s.to_vec(),
                rhs: vec![height, width],
            });
        }
        let plan = ResizePlan {
            channels: s[0],
            h: s[1],
            w: s[2],
            ys: Taps::new(s[1], height),
            xs: Taps::new(s[2], width),
        };
        let d = self.value(x).data();
        let mut data = vec![0.0; plan.channels * height * width];
        for c in 0..plan.channels {
            let src = &d[c * plan.h * plan.w..(c + 1) * plan.h * plan.w];
            for oy in 0..height {
                let (y0, y1, wy) = (plan.ys.i0[oy], plan.ys.i1[oy], plan.ys.w[oy]);
                for ox in 0..width {
                    let (x0, x1, wx) = (plan.xs.i0[ox], plan.xs.i1[ox], plan.xs.w[ox]);
                    let top = (1.0 - wx) * src[y0 * plan.w + x0] + wx * src[y0 * plan.w + x1];
                    let bot = (1.0 - wx) * src[y1 * plan.w + x0] + wx * src[y1 * plan.w + x1];
                    data[(c * height + oy) * width + ox] = (1.0 - wy) * top + wy * bot;
                }
            }
        }
        let out = self.output(&[plan.channels, height, width], data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Resize { x: x.0, plan }, rg))
    }

    /// Picks one entry per slice along `axis`: `out[.., 0, ..] = x[.., indices[..], ..]`.
    /// `indices` is laid out like the output (the input shape with `axis` set to 1).
    pub fn take_along_axis(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.check_axis("take_along_axis", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_layout(&shape, axis);
        if indices.len() != outer * inner || indices.iter().any(|&i| i >= len) {
            return Err(Error::ShapeMismatch {
                op: "take_along_axis",
                lhs: shape,
                rhs: vec![indices.len()],
            });
        }
        let mut src = Vec::with_capacity(indices.len());
        for o in 0..outer {
            for j in 0..inner {
                src.push((o * len + indices[o * inner + j]) * inner + j);
            }
        }
        let d = self.value(x).data();
        let data = src.iter().map(|&i| d[i]).collect();
        let out = self.output(&keepdim(&shape, axis), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x: x.0, src }, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Propagates d`loss`/d(leaf) to every differentiable leaf, consuming the tape.
    ///
    /// Contributions from several uses of one value are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.fault == Some(node.op.kind()) {
                continue;
            }
            backward_node(&nodes, i, &g, &mut grads);
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) => Some(Tensor::new(node.value.shape().to_vec(), g).unwrap()),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn backward_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let needs = |j: usize| nodes[j].requires_grad;
    let len_of = |j: usize| nodes[j].value.len();
    match &node.op {
        Op::Leaf => {}
        Op::Unary { x, f } => {
            let (xd, yd) = (nodes[*x].value.data(), node.value.data());
            let buf = grad_buf(grads, *x, xd.len());
            for k in 0..g.len() {
                buf[k] += g[k]
                    * match f {
                        Elementwise::Sigmoid => yd[k] * (1.0 - yd[k]),
                        Elementwise::Relu => {
                            if xd[k] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Elementwise::Exp => yd[k],
                        Elementwise::Log => 1.0 / xd[k],
                    };
            }
        }
        Op::Scale { x, factor } => {
            let buf = grad_buf(grads, *x, g.len());
            buf.iter_mut().zip(g).for_each(|(b, v)| *b += v * factor);
        }
        Op::AddScalar { x } => {
            let buf = grad_buf(grads, *x, g.len());
            buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
        }
        Op::Binary {
            a,
            b,
            f,
            a_map,
            b_map,
        } => {
            let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
            let ia = |k: usize| a_map.as_ref().map_or(k, |m| m[k]);
            let ib = |k: usize| b_map.as_ref().map_or(k, |m| m[k]);
            if needs(*a) {
                let buf = grad_buf(grads, *a, ad.len());
                for k in 0..g.len() {
                    buf[ia(k)] += g[k]
                        * match f {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => bd[ib(k)],
                            Binary::Div => 1.0 / bd[ib(k)],
                        };
                }
            }
            if needs(*b) {
                let buf = grad_buf(grads, *b, bd.len());
                for k in 0..g.len() {
                    let (x, y) = (ad[ia(k)], bd[ib(k)]);
                    buf[ib(k)] += g[k]
                        * match f {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => x,
                            Binary::Div => -x / (y * y),
                        };
                }
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let gm = MatRef::new(g, *m, *n);
            if needs(*a) {
                let bm = MatRef::new(nodes[*b].value.data(), *k, *n);
                gemm(gm, bm.t(), 1.0, grad_buf(grads, *a, m * k));
            }
            if needs(*b) {
                let am = MatRef::new(nodes[*a].value.data(), *m, *k);
                gemm(am.t(), gm, 1.0, grad_buf(grads, *b, k * n));
            }
        }
        Op::Conv2d { x, w, geom, cols } => {
            let n_out = geom.ho * geom.wo;
            let gm = MatRef::new(g, geom.c_out, n_out);
            if needs(*w) {
                let cm = MatRef::new(cols, geom.patch(), n_out);
                gemm(gm, cm.t(), 1.0, grad_buf(grads, *w, len_of(*w)));
            }
            if needs(*x) {
                let wm = MatRef::new(nodes[*w].value.data(), geom.c_out, geom.patch());
                let mut gcols = vec![0.0; geom.patch() * n_out];
                gemm(wm.t(), gm, 0.0, &mut gcols);
                geom.col2im(&gcols, grad_buf(grads, *x, len_of(*x)));
            }
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
            let buf = grad_buf(grads, *x, y.len());
            for o in 0..outer {
                for j in 0..inner {
                    let base = o * len * inner + j;
                    let dot: f64 = (0..len)
                        .map(|t| g[base + t * inner] * y[base + t * inner])
                        .sum();
                    for t in 0..len {
                        let idx = base + t * inner;
                        buf[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        }
        Op::LogSoftmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
            let buf = grad_buf(grads, *x, y.len());
            for o in 0..outer {
                for j in 0..inner {
                    let base = o * len * inner + j;
                    let total: f64 = (0..len).map(|t| g[base + t * inner]).sum();
                    for t in 0..len {
                        let idx = base + t * inner;
                        buf[idx] += g[idx] - libm::exp(y[idx]) * total;
                    }
                }
            }
        }
        Op::Sum { x } => {
            let buf = grad_buf(grads, *x, len_of(*x));
            buf.iter_mut().for_each(|b| *b += g[0]);
        }
        Op::SumAxis { x, axis } => {
            let (outer, len, inner) = axis_layout(nodes[*x].value.shape(), *axis);
            let buf = grad_buf(grads, *x, outer * len * inner);
            for o in 0..outer {
                for t in 0..len {
                    for j in 0..inner {
                        buf[(o * len + t) * inner + j] += g[o * inner + j];
                    }
                }
            }
        }
        Op::MaxAxis { x, src } | Op::Gather { x, src } => {
            let buf = grad_buf(grads, *x, len_of(*x));
            for (k, &s) in src.iter().enumerate() {
                buf[s] += g[k];
            }
        }
        Op::Norm { x, axis } => {
            let xd = nodes[*x].value.data();
            let nd = node.value.data();
            let (outer, len, inner) = axis_layout(nodes[*x].value.shape(), *axis);
            let buf = grad_buf(grads, *x, xd.len());
            for o in 0..outer {
                for j in 0..inner {
                    let n = nd[o * inner + j];
                    if n == 0.0 {
                        continue;
                    }
                    let gn = g[o * inner + j] / n;
                    for t in 0..len {
                        let idx = (o * len + t) * inner + j;
                        buf[idx] += gn * xd[idx];
                    }
                }
            }
        }
        Op::Reshape { x } => {
            let buf = grad_buf(grads, *x, g.len());
            buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
        }
        Op::Transpose { x, rows, cols } => {
            let buf = grad_buf(grads, *x, rows * cols);
            for r in 0..*rows {
                for c in 0..*cols {
                    buf[r * cols + c] += g[c * rows + r];
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_layout(node.value.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                if needs(p) {
                    let buf = grad_buf(grads, p, len_of(p));
                    for o in 0..outer {
                        let src =
                            &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut buf[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += len;
            }
        }
        Op::Resize { x, plan } => {
            let (height, width) = (plan.ys.i0.len(), plan.xs.i0.len());
            let buf = grad_buf(grads, *x, plan.channels * plan.h * plan.w);
            for c in 0..plan.channels {
                let dst = &mut buf[c * plan.h * plan.w..(c + 1) * plan.h * plan.w];
                for oy in 0..height {
                    let (y0, y1, wy) = (plan.ys.i0[oy], plan.ys.i1[oy], plan.ys.w[oy]);
                    for ox in 0..width {
                        let (x0, x1, wx) = (plan.xs.i0[ox], plan.xs.i1[ox], plan.xs.w[ox]);
                        let gv = g[(c * height + oy) * width + ox];
                        dst[y0 * plan.w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                        dst[y0 * plan.w + x1] += gv * (1.0 - wy) * wx;
                        dst[y1 * plan.w + x0] += gv * wy * (1.0 - wx);
                        dst[y1 * plan.w + x1] += gv * wy * wx;
                    }
                }
            }
        }
    }
}
