//! Window pooling over the trailing spatial axes, plus global pooling.

use crate::error::{arg_err, shape_err, Result};
use crate::par;
use crate::tensor::{GradFn, Tensor};

#[derive(Debug, Clone, Copy)]
struct PoolGeom {
    planes: usize,
    input: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
    out: [usize; 3],
}

impl PoolGeom {
    fn in_len(&self) -> usize {
        self.input.iter().product()
    }
    fn out_len(&self) -> usize {
        self.out.iter().product()
    }
}

fn pool_geometry(op: &'static str, x: &Tensor, window: usize, stride: usize) -> Result<(PoolGeom, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 && s.len() != 5 {
        return Err(shape_err(op, format!("expected [B,C,H,W] or [B,C,T,H,W], got {s:?}")));
    }
    if window == 0 || stride == 0 {
        return Err(arg_err(op, "window and stride must be positive"));
    }
    let dims = s.len() - 2;
    let mut input = [1usize; 3];
    let mut win = [1usize; 3];
    let mut st = [1usize; 3];
    for d in 0..dims {
        input[3 - dims + d] = s[2 + d];
        win[3 - dims + d] = window;
        st[3 - dims + d] = stride;
    }
    let mut out = [1usize; 3];
    for d in 0..3 {
        if input[d] < win[d] {
            return Err(shape_err(op, format!("window {window} exceeds input {s:?}")));
        }
        out[d] = (input[d] - win[d]) / st[d] + 1;
    }
    let mut shape = s[..2].to_vec();
    shape.extend_from_slice(&out[3 - dims..]);
    Ok((
        PoolGeom {
            planes: s[0] * s[1],
            input,
            window: win,
            stride: st,
            out,
        },
        shape,
    ))
}

/// Calls `f(output_index, input_index)` for every window element in scan
/// order (temporal, then rows, then columns).
fn for_each_window(g: &PoolGeom, mut f: impl FnMut(usize, usize)) {
    let [_, h, w] = g.input;
    let [to, ho, wo] = g.out;
    let mut o = 0;
    for ot in 0..to {
        for oh in 0..ho {
            for ow in 0..wo {
                for kt in 0..g.window[0] {
                    let it = ot * g.stride[0] + kt;
                    for kh in 0..g.window[1] {
                        let ih = oh * g.stride[1] + kh;
                        let row = (it * h + ih) * w;
                        for kw in 0..g.window[2] {
                            f(o, row + ow * g.stride[2] + kw);
                        }
                    }
                }
                o += 1;
            }
        }
    }
}

struct MaxPoolFn {
    x: Tensor,
    argmax: Vec<u32>,
    geom: PoolGeom,
}

impl GradFn for MaxPoolFn {
    fn name(&self) -> &'static str {
        "max_pool"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (il, ol) = (self.geom.in_len(), self.geom.out_len());
        let argmax = &self.argmax;
        let mut dx = vec![0f32; self.geom.planes * il];
        par::for_each_chunk(&mut dx, il, |p, plane| {
            for o in 0..ol {
                plane[argmax[p * ol + o] as usize] += g[p * ol + o];
            }
        });
        vec![Some(dx)]
    }
}

/// Max pooling with a square (2D) or cubic (3D) window. Gradient flows to
/// the first maximal element of each window in scan order.
pub fn max_pool(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (geom, shape) = pool_geometry("max_pool", x, window, stride)?;
    let (il, ol) = (geom.in_len(), geom.out_len());
    let src = x.data();
    let mut out = vec![f32::NEG_INFINITY; geom.planes * ol];
    let mut argmax = vec![0u32; geom.planes * ol];
    for p in 0..geom.planes {
        let plane = &src[p * il..(p + 1) * il];
        let vals = &mut out[p * ol..(p + 1) * ol];
        let idx = &mut argmax[p * ol..(p + 1) * ol];
        let mut current = usize::MAX;
        for_each_window(&geom, |o, i| {
            if o != current {
                current = o;
                vals[o] = plane[i];
                idx[o] = i as u32;
            } else if plane[i] > vals[o] {
                vals[o] = plane[i];
                idx[o] = i as u32;
            }
        });
    }
    drop(src);
    Ok(Tensor::from_op(shape, out, MaxPoolFn { x: x.clone(), argmax, geom }))
}

struct AvgPoolFn {
    x: Tensor,
    geom: PoolGeom,
}

impl GradFn for AvgPoolFn {
    fn name(&self) -> &'static str {
        "avg_pool"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let geom = self.geom;
        let (il, ol) = (geom.in_len(), geom.out_len());
        let scale = 1.0 / geom.window.iter().product::<usize>() as f32;
        let mut dx = vec![0f32; geom.planes * il];
        par::for_each_chunk(&mut dx, il, |p, plane| {
            for_each_window(&geom, |o, i| plane[i] += g[p * ol + o] * scale);
        });
        vec![Some(dx)]
    }
}

/// Average pooling with a square (2D) or cubic (3D) window.
pub fn avg_pool(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (geom, shape) = pool_geometry("avg_pool", x, window, stride)?;
    let (il, ol) = (geom.in_len(), geom.out_len());
    let count = geom.window.iter().product::<usize>() as f64;
    let src = x.data();
    let mut out = vec![0f32; geom.planes * ol];
    let mut acc = vec![0f64; ol];
    for p in 0..geom.planes {
        let plane = &src[p * il..(p + 1) * il];
        acc.fill(0.0);
        for_each_window(&geom, |o, i| acc[o] += plane[i] as f64);
        for (dst, a) in out[p * ol..(p + 1) * ol].iter_mut().zip(&acc) {
            *dst = (a / count) as f32;
        }
    }
    drop(src);
    Ok(Tensor::from_op(shape, out, AvgPoolFn { x: x.clone(), geom }))
}

fn global_split(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(shape_err(op, format!("expected [B,C,spatial..], got {s:?}")));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

struct GlobalAvgFn {
    x: Tensor,
    spatial: usize,
}

impl GradFn for GlobalAvgFn {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let scale = 1.0 / self.spatial as f32;
        let mut dx = Vec::with_capacity(self.x.numel());
        for v in g {
            dx.extend(std::iter::repeat_n(v * scale, self.spatial));
        }
        vec![Some(dx)]
    }
}

/// Mean over all spatial positions: `[B, C, ...] -> [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, spatial) = global_split("global_avg_pool", x)?;
    let out = x
        .data()
        .chunks(spatial)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64) as f32)
        .collect();
    Ok(Tensor::from_op(vec![b, c], out, GlobalAvgFn { x: x.clone(), spatial }))
}

struct GlobalMaxFn {
    x: Tensor,
    spatial: usize,
    argmax: Vec<usize>,
}

impl GradFn for GlobalMaxFn {
    fn name(&self) -> &'static str {
        "global_max_pool"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let mut dx = vec![0f32; self.x.numel()];
        for (p, (&i, &v)) in self.argmax.iter().zip(g).enumerate() {
            dx[p * self.spatial + i] += v;
        }
        vec![Some(dx)]
    }
}

/// Max over all spatial positions: `[B, C, ...] -> [B, C]`.
pub fn global_max_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, spatial) = global_split("global_max_pool", x)?;
    let mut out = Vec::with_capacity(b * c);
    let mut argmax = Vec::with_capacity(b * c);
    for plane in x.data().chunks(spatial) {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        out.push(plane[best]);
        argmax.push(best);
    }
    Ok(Tensor::from_op(
        vec![b, c],
        out,
        GlobalMaxFn {
            x: x.clone(),
            spatial,
            argmax,
        },
    ))
}
