//! Grouped 2D/3D convolution via im2col + GEMM.
//!
//! A 2D convolution runs through the same kernels as a 3D one with a unit
//! temporal extent. Each image in the batch is processed independently, and
//! weight gradients are reduced over the batch in index order so the
//! parallel and sequential paths agree bitwise.

use crate::error::{arg_err, shape_err, Result};
use crate::par;
use crate::tensor::{GradFn, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geom {
    batch: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
    stride: usize,
    out: [usize; 3],
}

impl Geom {
    fn in_len(&self) -> usize {
        self.input.iter().product()
    }
    fn out_len(&self) -> usize {
        self.out.iter().product()
    }
    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }
    /// Rows of one group's column matrix.
    fn group_rows(&self) -> usize {
        self.cin / self.groups * self.kernel_len()
    }
    fn is_pointwise(&self) -> bool {
        self.kernel_len() == 1 && self.stride == 1 && self.pad == [0; 3]
    }
}

fn geometry(op: &'static str, x: &Tensor, w: &Tensor, stride: usize, padding: usize, groups: usize, dims: usize) -> Result<Geom> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != dims + 2 || ws.len() != dims + 2 {
        return Err(shape_err(op, format!("input {xs:?} / weight {ws:?} must have rank {}", dims + 2)));
    }
    if groups == 0 || stride == 0 {
        return Err(arg_err(op, "groups and stride must be positive"));
    }
    let (cin, cout) = (xs[1], ws[0]);
    if cin % groups != 0 || cout % groups != 0 {
        return Err(arg_err(op, format!("groups {groups} must divide in {cin} and out {cout} channels")));
    }
    if ws[1] != cin / groups {
        return Err(shape_err(op, format!("weight expects {} input channels per group, input gives {}", ws[1], cin / groups)));
    }
    let k = ws[2];
    if ws[2..].iter().any(|&d| d != k) {
        return Err(arg_err(op, format!("kernel must be square/cubic, got {:?}", &ws[2..])));
    }
    let mut input = [1usize; 3];
    let mut kernel = [1usize; 3];
    let mut pad = [0usize; 3];
    for d in 0..dims {
        input[3 - dims + d] = xs[2 + d];
        kernel[3 - dims + d] = k;
        pad[3 - dims + d] = padding;
    }
    let mut out = [1usize; 3];
    for d in 0..3 {
        let span = input[d] + 2 * pad[d];
        if span < kernel[d] {
            return Err(shape_err(op, format!("kernel {k} larger than padded input {xs:?}")));
        }
        // The unit temporal axis of a 2D conv is never strided.
        let s = if kernel[d] == 1 && input[d] == 1 && pad[d] == 0 { 1 } else { stride };
        out[d] = (span - kernel[d]) / s + 1;
    }
    Ok(Geom {
        batch: xs[0],
        cin,
        cout,
        groups,
        input,
        kernel,
        pad,
        stride,
        out,
    })
}

fn stride_for(g: &Geom, d: usize) -> usize {
    if g.kernel[d] == 1 && g.input[d] == 1 && g.pad[d] == 0 {
        1
    } else {
        g.stride
    }
}

/// Range of output positions along one axis whose input index
/// `o * s + k - p` falls inside `[0, n)`.
fn valid_range(out: usize, n: usize, k: usize, p: usize, s: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(x: &[f32], g: &Geom, col: &mut [f32]) {
    let [t, h, w] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.out;
    let (st, sh, sw) = (stride_for(g, 0), stride_for(g, 1), stride_for(g, 2));
    let p = g.out_len();
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * t * h * w..(c + 1) * t * h * w];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let (wlo, whi) = valid_range(wo, w, dw, g.pad[2], sw);
                    let mut idx = 0;
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - g.pad[0] as isize;
                        if it < 0 || it >= t as isize {
                            dst[idx..idx + ho * wo].fill(0.0);
                            idx += ho * wo;
                            continue;
                        }
                        for oh in 0..ho {
                            let ih = (oh * sh + dh) as isize - g.pad[1] as isize;
                            let seg = &mut dst[idx..idx + wo];
                            idx += wo;
                            if ih < 0 || ih >= h as isize {
                                seg.fill(0.0);
                                continue;
                            }
                            let base = (it as usize * h + ih as usize) * w;
                            seg[..wlo].fill(0.0);
                            seg[whi..].fill(0.0);
                            if sw == 1 {
                                let start = base + wlo + dw - g.pad[2];
                                seg[wlo..whi].copy_from_slice(&xc[start..start + (whi - wlo)]);
                            } else {
                                for (ow, v) in seg.iter_mut().enumerate().take(whi).skip(wlo) {
                                    *v = xc[base + ow * sw + dw - g.pad[2]];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &Geom, dx: &mut [f32]) {
    let [t, h, w] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [to, ho, wo] = g.out;
    let (st, sh, sw) = (stride_for(g, 0), stride_for(g, 1), stride_for(g, 2));
    let p = g.out_len();
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &mut dx[c * t * h * w..(c + 1) * t * h * w];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let (wlo, whi) = valid_range(wo, w, dw, g.pad[2], sw);
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - g.pad[0] as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for oh in 0..ho {
                            let ih = (oh * sh + dh) as isize - g.pad[1] as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let seg = &src[(ot * ho + oh) * wo..(ot * ho + oh + 1) * wo];
                            let base = (it as usize * h + ih as usize) * w;
                            for ow in wlo..whi {
                                xc[base + ow * sw + dw - g.pad[2]] += seg[ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `c = a · b (+ c if accumulate)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    c_row_stride: isize,
    accumulate: bool,
) {
    debug_assert!(m == 0 || k == 0 || a.len() >= (m - 1) * a_strides.0.max(0) as usize + 1);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices that cover every strided element of the
    // m×k, k×n and m×n operands; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_row_stride,
            1,
        );
    }
}

fn forward(x: &[f32], w: &[f32], g: &Geom) -> Vec<f32> {
    let p = g.out_len();
    let kg = g.group_rows();
    let cog = g.cout / g.groups;
    let in_len = g.cin * g.in_len();
    let mut y = vec![0f32; g.batch * g.cout * p];
    par::for_each_chunk(&mut y, g.cout * p, |b, yb| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let owned;
        let col: &[f32] = if g.is_pointwise() {
            xb
        } else {
            let mut buf = vec![0f32; g.cin * g.kernel_len() * p];
            im2col(xb, g, &mut buf);
            owned = buf;
            &owned
        };
        for gi in 0..g.groups {
            gemm(
                cog,
                kg,
                p,
                &w[gi * cog * kg..],
                (kg as isize, 1),
                &col[gi * kg * p..],
                (p as isize, 1),
                &mut yb[gi * cog * p..],
                p as isize,
                false,
            );
        }
    });
    y
}

struct ConvFn {
    x: Tensor,
    w: Tensor,
    geom: Geom,
}

impl GradFn for ConvFn {
    fn name(&self) -> &'static str {
        "conv"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x, &self.w]
    }
    fn backward(&self, dy: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let g = self.geom;
        let x = self.x.data();
        let w = self.w.data();
        let want_dx = self.x.requires_grad();
        let want_dw = self.w.requires_grad();
        let p = g.out_len();
        let kg = g.group_rows();
        let cog = g.cout / g.groups;
        let in_len = g.cin * g.in_len();
        let x: &[f32] = &x;
        let w: &[f32] = &w;

        let per_image: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = par::map_range(g.batch, |b| {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let dyb = &dy[b * g.cout * p..(b + 1) * g.cout * p];
            let pointwise = g.is_pointwise();
            let dw_part = want_dw.then(|| {
                let owned;
                let col: &[f32] = if pointwise {
                    xb
                } else {
                    let mut buf = vec![0f32; g.cin * g.kernel_len() * p];
                    im2col(xb, &g, &mut buf);
                    owned = buf;
                    &owned
                };
                let mut dw = vec![0f32; g.cout * kg];
                for gi in 0..g.groups {
                    gemm(
                        cog,
                        p,
                        kg,
                        &dyb[gi * cog * p..],
                        (p as isize, 1),
                        &col[gi * kg * p..],
                        (1, p as isize),
                        &mut dw[gi * cog * kg..],
                        kg as isize,
                        false,
                    );
                }
                dw
            });
            let dx_img = want_dx.then(|| {
                let mut dcol = vec![0f32; g.cin * g.kernel_len() * p];
                for gi in 0..g.groups {
                    gemm(
                        kg,
                        cog,
                        p,
                        &w[gi * cog * kg..],
                        (1, kg as isize),
                        &dyb[gi * cog * p..],
                        (p as isize, 1),
                        &mut dcol[gi * kg * p..],
                        p as isize,
                        false,
                    );
                }
                if pointwise {
                    dcol
                } else {
                    let mut dxb = vec![0f32; in_len];
                    col2im(&dcol, &g, &mut dxb);
                    dxb
                }
            });
            (dx_img, dw_part)
        });

        let mut dx = want_dx.then(|| Vec::with_capacity(g.batch * in_len));
        let mut dw: Option<Vec<f32>> = None;
        for (dx_img, dw_part) in per_image {
            if let (Some(acc), Some(img)) = (dx.as_mut(), dx_img) {
                acc.extend_from_slice(&img);
            }
            if let Some(part) = dw_part {
                match dw.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&part).for_each(|(a, b)| *a += b),
                    None => dw = Some(part),
                }
            }
        }
        vec![dx, dw]
    }
}

fn conv(op: &'static str, x: &Tensor, w: &Tensor, stride: usize, padding: usize, groups: usize, dims: usize) -> Result<Tensor> {
    let geom = geometry(op, x, w, stride, padding, groups, dims)?;
    let y = forward(&x.data(), &w.data(), &geom);
    let mut shape = vec![geom.batch, geom.cout];
    shape.extend_from_slice(&geom.out[3 - dims..]);
    Ok(Tensor::from_op(
        shape,
        y,
        ConvFn {
            x: x.clone(),
            w: w.clone(),
            geom,
        },
    ))
}

/// 2D convolution without bias. `x` is `[B, Cin, H, W]`, `w` is
/// `[Cout, Cin/groups, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, padding: usize, groups: usize) -> Result<Tensor> {
    conv("conv2d", x, w, stride, padding, groups, 2)
}

/// 3D convolution without bias. `x` is `[B, Cin, T, H, W]`, `w` is
/// `[Cout, Cin/groups, k, k, k]`.
pub fn conv3d(x: &Tensor, w: &Tensor, stride: usize, padding: usize, groups: usize) -> Result<Tensor> {
    conv("conv3d", x, w, stride, padding, groups, 3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for n in 1..9 {
            for k in 0..5 {
                for p in 0..4 {
                    for s in 1..3 {
                        if n + 2 * p < k + 1 {
                            continue;
                        }
                        let out = (n + 2 * p - (k + 1)) / s + 1;
                        let brute: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * s + k) as isize - p as isize;
                                i >= 0 && i < n as isize
                            })
                            .collect();
                        let (lo, hi) = valid_range(out, n, k, p, s);
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, brute, "n={n} k={k} p={p} s={s}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_groups() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[4, 1, 3, 3]);
        assert!(conv2d(&x, &w, 1, 1, 2).is_err());
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        assert!(conv2d(&x, &w, 1, 1, 1).is_err());
    }
}
