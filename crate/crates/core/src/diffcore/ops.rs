use std::fmt;
use std::sync::Arc;

use super::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, split_axis, unbroadcast, Tensor};
use crate::error::{Error, Result};

/// A differentiable operation whose forward and backward rules live outside
/// this module (the hash-grid gather, test fixtures).
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Vector-Jacobian products for each input; `None` means no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Debug, Clone)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `[m, k] x [k, n]`.
    MatMul,
    Transpose,
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Relu,
    MinScalar(f64),
    MaxScalar(f64),
    Square,
    Abs,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Sum { axis: usize },
    Mean { axis: usize },
    SumAll,
    CumSum { axis: usize, exclusive: bool },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// `mask ? a : b`, elementwise.
    Select { mask: Arc<Vec<bool>> },
    /// Gathers rows (axis 0), repeats allowed.
    IndexSelect { indices: Arc<Vec<usize>> },
    Reshape { shape: Vec<usize> },
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::MinScalar(_) => "min_scalar",
            Op::MaxScalar(_) => "max_scalar",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumAll => "sum_all",
            Op::CumSum { .. } => "cumsum",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Select { .. } => "select",
            Op::IndexSelect { .. } => "index_select",
            Op::Reshape { .. } => "reshape",
            Op::Custom(c) => c.name(),
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul | Op::Select { .. } => Some(2),
            Op::Concat { .. } | Op::Custom(_) => None,
            _ => Some(1),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn binary(op: &Op, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shape(op.name(), &[a.shape(), b.shape()]))?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut result = Tensor::zeros(&out);
    let (ad, bd) = (a.data(), b.data());
    let rd = result.data_mut();
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| rd[o] = f(ad[ia], bd[ib]));
    Ok(result)
}

/// Applies `f(grad, a, b)` over the broadcast output and reduces back to the
/// shape of the operand the gradient belongs to.
fn binary_grad(
    g: &Tensor,
    a: &Tensor,
    b: &Tensor,
    target: &[usize],
    f: impl Fn(f64, f64, f64) -> f64,
) -> Tensor {
    let out = g.shape();
    let sa = broadcast_strides(a.shape(), out);
    let sb = broadcast_strides(b.shape(), out);
    let mut full = Tensor::zeros(out);
    let (gd, ad, bd) = (g.data(), a.data(), b.data());
    let fd = full.data_mut();
    for_each_broadcast(out, &sa, &sb, |o, ia, ib| fd[o] = f(gd[o], ad[ia], bd[ib]));
    unbroadcast(&full, target)
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the caller passes buffers of at least m*k and k*n elements laid
    // out by the given strides; `c` holds exactly m*n row-major elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn check_axis(op: &Op, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(Error::shape(op.name(), &[t.shape(), &[axis]]));
    }
    Ok(())
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::Domain {
                op: op.name(),
                msg: format!("expected {n} inputs, got {}", inputs.len()),
            });
        }
    }
    let x = inputs.first().copied();
    let unary = || x.expect("arity checked");
    Ok(match op {
        Op::Add => binary(op, inputs[0], inputs[1], |a, b| a + b)?,
        Op::Sub => binary(op, inputs[0], inputs[1], |a, b| a - b)?,
        Op::Mul => binary(op, inputs[0], inputs[1], |a, b| a * b)?,
        Op::Div => {
            if inputs[1].data().contains(&0.0) {
                return Err(Error::Domain {
                    op: "div",
                    msg: "division by zero".into(),
                });
            }
            binary(op, inputs[0], inputs[1], |a, b| a / b)?
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape("matmul", &[a.shape(), b.shape()]));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let c = gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1));
            Tensor::new(vec![m, n], c)?
        }
        Op::Transpose => {
            let a = unary();
            if a.ndim() != 2 {
                return Err(Error::shape("transpose", &[a.shape()]));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let d = a.data();
            Tensor::from_fn(&[c, r], |i| d[(i % r) * c + i / r])
        }
        Op::Exp => unary().map(f64::exp),
        Op::Log => {
            let a = unary();
            if let Some(v) = a.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    msg: format!("nonpositive input {v}"),
                });
            }
            a.map(f64::ln)
        }
        Op::Softplus => unary().map(softplus),
        Op::Sigmoid => unary().map(sigmoid),
        Op::Relu => unary().map(|v| v.max(0.0)),
        Op::MinScalar(c) => unary().map(|v| v.min(*c)),
        Op::MaxScalar(c) => unary().map(|v| v.max(*c)),
        Op::Square => unary().map(|v| v * v),
        Op::Abs => unary().map(f64::abs),
        Op::Neg => unary().map(|v| -v),
        Op::Scale(c) => unary().map(|v| v * c),
        Op::AddScalar(c) => unary().map(|v| v + c),
        Op::Sum { axis } | Op::Mean { axis } => {
            let a = unary();
            check_axis(op, a, *axis)?;
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let scale = if matches!(op, Op::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
            let d = a.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..len {
                    let row = &d[(o * len + i) * inner..(o * len + i + 1) * inner];
                    for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            if scale != 1.0 {
                out.iter_mut().for_each(|v| *v *= scale);
            }
            Tensor::new(without_axis(a.shape(), *axis), out)?
        }
        Op::SumAll => Tensor::scalar(unary().data().iter().sum()),
        Op::CumSum { axis, exclusive } => {
            let a = unary();
            check_axis(op, a, *axis)?;
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let d = a.data();
            let mut out = vec![0.0; d.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let mut acc = 0.0;
                    for i in 0..len {
                        let ix = (o * len + i) * inner + j;
                        if *exclusive {
                            out[ix] = acc;
                            acc += d[ix];
                        } else {
                            acc += d[ix];
                            out[ix] = acc;
                        }
                    }
                }
            }
            Tensor::new(a.shape().to_vec(), out)?
        }
        Op::Concat { axis } => concat(inputs, *axis)?,
        Op::Slice { axis, start, end } => {
            let a = unary();
            check_axis(op, a, *axis)?;
            if start >= end || *end > a.shape()[*axis] {
                return Err(Error::shape("slice", &[a.shape(), &[*start, *end]]));
            }
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let width = end - start;
            let d = a.data();
            let mut out = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                out.extend_from_slice(&d[(o * len + start) * inner..(o * len + end) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = width;
            Tensor::new(shape, out)?
        }
        Op::Select { mask } => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() || mask.len() != a.len() {
                return Err(Error::shape("select", &[a.shape(), b.shape(), &[mask.len()]]));
            }
            let (ad, bd) = (a.data(), b.data());
            Tensor::from_fn(a.shape(), |i| if mask[i] { ad[i] } else { bd[i] })
        }
        Op::IndexSelect { indices } => {
            let a = unary();
            if a.ndim() == 0 {
                return Err(Error::shape("index_select", &[a.shape()]));
            }
            let rows = a.shape()[0];
            let row_len = a.len() / rows.max(1);
            if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
                return Err(Error::shape("index_select", &[a.shape(), &[bad]]));
            }
            let d = a.data();
            let mut out = Vec::with_capacity(indices.len() * row_len);
            for &i in indices.iter() {
                out.extend_from_slice(&d[i * row_len..(i + 1) * row_len]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = indices.len();
            Tensor::new(shape, out)?
        }
        Op::Reshape { shape } => unary().clone().reshaped(shape)?,
        Op::Custom(c) => c.forward(inputs)?,
    })
}

fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| Error::Domain {
        op: "concat",
        msg: "no inputs".into(),
    })?;
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let compatible = axis < first.ndim()
        && inputs.iter().all(|t| {
            t.ndim() == first.ndim()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b)
        });
    if !compatible {
        return Err(Error::shape("concat", &shapes));
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let w = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

/// Vector-Jacobian products of `op` for the inputs flagged in `needs`.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let x = inputs.first().copied();
    let elementwise = |f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<Option<Tensor>> {
        let x = x.expect("unary op");
        let (xd, yd, gd) = (x.data(), out.data(), g.data());
        vec![Some(Tensor::from_fn(x.shape(), |i| f(gd[i], xd[i], yd[i])))]
    };
    match op {
        Op::Add => vec![
            want(0).then(|| unbroadcast(g, inputs[0].shape())),
            want(1).then(|| unbroadcast(g, inputs[1].shape())),
        ],
        Op::Sub => vec![
            want(0).then(|| unbroadcast(g, inputs[0].shape())),
            want(1).then(|| unbroadcast(&g.map(|v| -v), inputs[1].shape())),
        ],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![
                want(0).then(|| binary_grad(g, a, b, a.shape(), |g, _, b| g * b)),
                want(1).then(|| binary_grad(g, a, b, b.shape(), |g, a, _| g * a)),
            ]
        }
        Op::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![
                want(0).then(|| binary_grad(g, a, b, a.shape(), |g, _, b| g / b)),
                want(1).then(|| binary_grad(g, a, b, b.shape(), |g, a, b| -g * a / (b * b))),
            ]
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| {
                // g [m,n] x b^T [n,k]
                let d = gemm(m, n, k, g.data(), (n as isize, 1), b.data(), (1, n as isize));
                Tensor::new(vec![m, k], d).expect("matmul grad shape")
            });
            let db = want(1).then(|| {
                // a^T [k,m] x g [m,n]
                let d = gemm(k, m, n, a.data(), (1, k as isize), g.data(), (n as isize, 1));
                Tensor::new(vec![k, n], d).expect("matmul grad shape")
            });
            vec![da, db]
        }
        Op::Transpose => {
            let (r, c) = (g.shape()[0], g.shape()[1]);
            let gd = g.data();
            vec![Some(Tensor::from_fn(&[c, r], |i| gd[(i % r) * c + i / r]))]
        }
        Op::Exp => elementwise(&|g, _, y| g * y),
        Op::Log => elementwise(&|g, x, _| g / x),
        Op::Softplus => elementwise(&|g, x, _| g * sigmoid(x)),
        Op::Sigmoid => elementwise(&|g, _, y| g * y * (1.0 - y)),
        Op::Relu => elementwise(&|g, x, _| if x > 0.0 { g } else { 0.0 }),
        Op::MinScalar(c) => elementwise(&|g, x, _| if x < *c { g } else { 0.0 }),
        Op::MaxScalar(c) => elementwise(&|g, x, _| if x > *c { g } else { 0.0 }),
        Op::Square => elementwise(&|g, x, _| 2.0 * x * g),
        Op::Abs => elementwise(&|g, x, _| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }),
        Op::Neg => elementwise(&|g, _, _| -g),
        Op::Scale(c) => elementwise(&|g, _, _| g * c),
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Sum { axis } | Op::Mean { axis } => {
            let x = x.expect("unary op");
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let scale = if matches!(op, Op::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
            let gd = g.data();
            let mut d = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..len {
                    let dst = &mut d[(o * len + i) * inner..(o * len + i + 1) * inner];
                    for (v, gv) in dst.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                        *v = gv * scale;
                    }
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), d).expect("sum grad shape"))]
        }
        Op::SumAll => {
            let gv = g.data()[0];
            vec![Some(Tensor::full(x.expect("unary op").shape(), gv))]
        }
        Op::CumSum { axis, exclusive } => {
            let (outer, len, inner) = split_axis(g.shape(), *axis);
            let gd = g.data();
            let mut d = vec![0.0; gd.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let mut acc = 0.0;
                    for i in (0..len).rev() {
                        let ix = (o * len + i) * inner + j;
                        if *exclusive {
                            d[ix] = acc;
                            acc += gd[ix];
                        } else {
                            acc += gd[ix];
                            d[ix] = acc;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(g.shape().to_vec(), d).expect("cumsum grad shape"))]
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = split_axis(g.shape(), *axis);
            let gd = g.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for (idx, t) in inputs.iter().enumerate() {
                let w = t.shape()[*axis];
                if want(idx) {
                    let mut d = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + w * inner]);
                    }
                    grads.push(Some(Tensor::new(t.shape().to_vec(), d).expect("concat grad")));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        }
        Op::Slice { axis, start, end } => {
            let x = x.expect("unary op");
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let width = end - start;
            let mut d = vec![0.0; x.len()];
            let gd = g.data();
            for o in 0..outer {
                d[(o * len + start) * inner..(o * len + end) * inner]
                    .copy_from_slice(&gd[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(Tensor::new(x.shape().to_vec(), d).expect("slice grad"))]
        }
        Op::Select { mask } => {
            let gd = g.data();
            let shape = g.shape();
            vec![
                want(0).then(|| Tensor::from_fn(shape, |i| if mask[i] { gd[i] } else { 0.0 })),
                want(1).then(|| Tensor::from_fn(shape, |i| if mask[i] { 0.0 } else { gd[i] })),
            ]
        }
        Op::IndexSelect { indices } => {
            let x = x.expect("unary op");
            let row_len = x.len() / x.shape()[0].max(1);
            let mut grad = Tensor::zeros(x.shape());
            let d = grad.data_mut();
            let gd = g.data();
            for (k, &i) in indices.iter().enumerate() {
                for (v, gv) in d[i * row_len..(i + 1) * row_len]
                    .iter_mut()
                    .zip(&gd[k * row_len..(k + 1) * row_len])
                {
                    *v += gv;
                }
            }
            vec![Some(grad)]
        }
        Op::Reshape { .. } => {
            let x = x.expect("unary op");
            vec![Some(g.clone().reshaped(x.shape()).expect("reshape grad"))]
        }
        Op::Custom(c) => c.backward(inputs, out, g),
    }
}
