use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{GradFn, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

struct AddFn {
    a: Tensor,
    b: Tensor,
    sign: f32,
}

impl GradFn for AddFn {
    fn name(&self) -> &'static str {
        if self.sign > 0.0 {
            "add"
        } else {
            "sub"
        }
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let gb = if self.sign > 0.0 {
            g.to_vec()
        } else {
            g.iter().map(|v| -v).collect()
        };
        vec![Some(g.to_vec()), Some(gb)]
    }
}

/// Elementwise `a + b`.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        AddFn {
            a: a.clone(),
            b: b.clone(),
            sign: 1.0,
        },
    ))
}

/// Elementwise `a - b`.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        AddFn {
            a: a.clone(),
            b: b.clone(),
            sign: -1.0,
        },
    ))
}

struct MulFn {
    a: Tensor,
    b: Tensor,
}

impl GradFn for MulFn {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let a = self.a.data();
        let b = self.b.data();
        let ga = self.a.requires_grad().then(|| g.iter().zip(b.iter()).map(|(g, y)| g * y).collect());
        let gb = self.b.requires_grad().then(|| g.iter().zip(a.iter()).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    }
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, MulFn { a: a.clone(), b: b.clone() }))
}

struct ScaleFn {
    x: Tensor,
    c: f32,
}

impl GradFn for ScaleFn {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.iter().map(|v| v * self.c).collect())]
    }
}

/// Multiplies every element by the constant `c`.
pub fn scale(x: &Tensor, c: f32) -> Tensor {
    let data = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(x.shape().to_vec(), data, ScaleFn { x: x.clone(), c })
}

struct ReluFn {
    x: Tensor,
}

impl GradFn for ReluFn {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], out: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(
            g.iter()
                .zip(out)
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::from_op(x.shape().to_vec(), data, ReluFn { x: x.clone() })
}

struct LnFn {
    x: Tensor,
    floor: f32,
}

impl GradFn for LnFn {
    fn name(&self) -> &'static str {
        "ln_clamped"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let x = self.x.data();
        vec![Some(
            g.iter()
                .zip(x.iter())
                .map(|(g, &v)| if v > self.floor { g / v } else { 0.0 })
                .collect(),
        )]
    }
}

/// Natural log with the argument clamped below at `floor`; the gradient is
/// zero where the clamp is active. NaN passes through, so a diverged
/// network cannot hide behind the clamp.
pub fn ln_clamped(x: &Tensor, floor: f32) -> Tensor {
    let data = x.data().iter().map(|&v| if v.is_nan() { v } else { v.max(floor).ln() }).collect();
    Tensor::from_op(x.shape().to_vec(), data, LnFn { x: x.clone(), floor })
}

struct SumFn {
    x: Tensor,
    factor: f32,
}

impl GradFn for SumFn {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(vec![g[0] * self.factor; self.x.numel()])]
    }
}

/// Sum of all elements as a scalar (f64 accumulation).
pub fn sum(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(Vec::new(), vec![s as f32], SumFn { x: x.clone(), factor: 1.0 })
}

/// Mean of all elements as a scalar (f64 accumulation).
pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel() as f64;
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        Vec::new(),
        vec![(s / n) as f32],
        SumFn {
            x: x.clone(),
            factor: (1.0 / n) as f32,
        },
    )
}

struct ReshapeFn {
    x: Tensor,
}

impl GradFn for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if crate::tensor::numel(shape) != x.numel() || shape.contains(&0) {
        return Err(shape_err("reshape", format!("{:?} -> {:?}", x.shape(), shape)));
    }
    Ok(Tensor::from_op(shape.to_vec(), x.to_vec(), ReshapeFn { x: x.clone() }))
}

struct WeightedSumFn {
    xs: Vec<Tensor>,
    w: Tensor,
}

impl GradFn for WeightedSumFn {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.xs.iter().collect();
        v.push(&self.w);
        v
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let w = self.w.data();
        let mut grads: Vec<Option<Vec<f32>>> = self
            .xs
            .iter()
            .zip(w.iter())
            .map(|(x, &wm)| x.requires_grad().then(|| g.iter().map(|v| v * wm).collect()))
            .collect();
        let gw = self.w.requires_grad().then(|| {
            self.xs
                .iter()
                .map(|x| {
                    x.data()
                        .iter()
                        .zip(g)
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum::<f64>() as f32
                })
                .collect()
        });
        grads.push(gw);
        grads
    }
}

/// `Σ_m w[m] · xs[m]` for equally shaped `xs` and a weight vector of
/// length `xs.len()`. Differentiable in both the inputs and the weights.
pub fn weighted_sum(xs: &[Tensor], w: &Tensor) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(arg_err("weighted_sum", "no inputs"));
    }
    if w.numel() != xs.len() {
        return Err(shape_err(
            "weighted_sum",
            format!("{} inputs but {} weights", xs.len(), w.numel()),
        ));
    }
    for x in &xs[1..] {
        same_shape("weighted_sum", &xs[0], x)?;
    }
    let weights = w.to_vec();
    let n = xs[0].numel();
    let mut acc = vec![0f64; n];
    for (x, &wm) in xs.iter().zip(&weights) {
        let wm = wm as f64;
        for (a, &v) in acc.iter_mut().zip(x.data().iter()) {
            *a += wm * v as f64;
        }
    }
    let data = acc.into_iter().map(|v| v as f32).collect();
    Ok(Tensor::from_op(
        xs[0].shape().to_vec(),
        data,
        WeightedSumFn {
            xs: xs.to_vec(),
            w: w.clone(),
        },
    ))
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(arg_err(op, format!("axis {axis} out of range for rank {}", shape.len())));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

struct SoftmaxFn {
    x: Tensor,
    outer: usize,
    len: usize,
    inner: usize,
}

impl GradFn for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], y: &[f32]) -> Vec<Option<Vec<f32>>> {
        let mut dx = vec![0f32; y.len()];
        for o in 0..self.outer {
            for i in 0..self.inner {
                let idx = |k: usize| (o * self.len + k) * self.inner + i;
                let dot: f64 = (0..self.len).map(|k| g[idx(k)] as f64 * y[idx(k)] as f64).sum();
                for k in 0..self.len {
                    dx[idx(k)] = (y[idx(k)] as f64 * (g[idx(k)] as f64 - dot)) as f32;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split("softmax", x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0f32; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| src[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = (0..len).map(|k| ((src[idx(k)] - max) as f64).exp()).collect();
            let total: f64 = exps.iter().sum();
            for k in 0..len {
                out[idx(k)] = (exps[k] / total) as f32;
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        SoftmaxFn {
            x: x.clone(),
            outer,
            len,
            inner,
        },
    ))
}

struct ConcatFn {
    xs: Vec<Tensor>,
    outer: usize,
    inner: usize,
    lens: Vec<usize>,
}

impl GradFn for ConcatFn {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        self.xs.iter().collect()
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let total: usize = self.lens.iter().sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.xs.len());
        for (x, &len) in self.xs.iter().zip(&self.lens) {
            if x.requires_grad() {
                let block = len * self.inner;
                let mut dx = Vec::with_capacity(self.outer * block);
                for o in 0..self.outer {
                    let start = (o * total + offset) * self.inner;
                    dx.extend_from_slice(&g[start..start + block]);
                }
                grads.push(Some(dx));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        grads
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| arg_err("concat", "no inputs"))?;
    let (outer, _, inner) = axis_split("concat", first.shape(), axis)?;
    let mut lens = Vec::with_capacity(xs.len());
    for x in xs {
        let s = x.shape();
        if s.len() != first.ndim()
            || s[..axis] != first.shape()[..axis]
            || s[axis + 1..] != first.shape()[axis + 1..]
        {
            return Err(shape_err(
                "concat",
                format!("{:?} incompatible with {:?} on axis {axis}", s, first.shape()),
            ));
        }
        lens.push(s[axis]);
    }
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    let datas: Vec<_> = xs.iter().map(|x| x.data()).collect();
    for o in 0..outer {
        for (d, &len) in datas.iter().zip(&lens) {
            let block = len * inner;
            out.extend_from_slice(&d[o * block..(o + 1) * block]);
        }
    }
    drop(datas);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_op(
        shape,
        out,
        ConcatFn {
            xs: xs.to_vec(),
            outer,
            inner,
            lens,
        },
    ))
}
