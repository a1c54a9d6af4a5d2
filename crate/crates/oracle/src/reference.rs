//! Direct-loop f64 kernels. Shapes are plain slices: `[B, C, H, W]` or
//! `[B, C, T, H, W]` for images, weights `[Cout, Cin/g, k, k(, k)]`.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Pads a 2D shape's spatial part to (T, H, W).
fn spatial3(shape: &[usize]) -> [usize; 3] {
    match shape.len() {
        4 => [1, shape[2], shape[3]],
        5 => [shape[2], shape[3], shape[4]],
        _ => panic!("unsupported rank {}", shape.len()),
    }
}

/// Direct grouped convolution, no bias.
pub fn conv(x: &[f64], xs: &[usize], w: &[f64], ws: &[usize], stride: usize, pad: usize, groups: usize) -> (Vec<f64>, Vec<usize>) {
    let dims = xs.len() - 2;
    let (b, cin) = (xs[0], xs[1]);
    let cout = ws[0];
    let cg = cin / groups;
    let cog = cout / groups;
    let k = ws[2];
    let [t, h, wd] = spatial3(xs);
    let (kt, tpad, tstride) = if dims == 3 { (k, pad, stride) } else { (1, 0, 1) };
    let out_dim = |n: usize, kk: usize, p: usize, s: usize| (n + 2 * p - kk) / s + 1;
    let to = out_dim(t, kt, tpad, tstride);
    let ho = out_dim(h, k, pad, stride);
    let wo = out_dim(wd, k, pad, stride);
    let mut y = vec![0f64; b * cout * to * ho * wo];
    for bi in 0..b {
        for co in 0..cout {
            let gi = co / cog;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            let c = gi * cg + ci;
                            for dt in 0..kt {
                                let it = (ot * tstride + dt) as isize - tpad as isize;
                                if it < 0 || it >= t as isize {
                                    continue;
                                }
                                for dh in 0..k {
                                    let ih = (oh * stride + dh) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for dw in 0..k {
                                        let iw = (ow * stride + dw) as isize - pad as isize;
                                        if iw < 0 || iw >= wd as isize {
                                            continue;
                                        }
                                        let xi = (((bi * cin + c) * t + it as usize) * h + ih as usize) * wd + iw as usize;
                                        let wi = (((co * cg + ci) * kt + dt) * k + dh) * k + dw;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[(((bi * cout + co) * to + ot) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
    }
    let shape = if dims == 3 { vec![b, cout, to, ho, wo] } else { vec![b, cout, ho, wo] };
    (y, shape)
}

/// Training-mode batch norm with biased batch variance.
pub fn batch_norm_train(x: &[f64], xs: &[usize], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (b, c) = (xs[0], xs[1]);
    let s: usize = xs[2..].iter().product();
    let n = (b * s) as f64;
    let mut y = vec![0f64; x.len()];
    for ch in 0..c {
        let vals = || (0..b).flat_map(move |bi| (0..s).map(move |i| (bi * c + ch) * s + i));
        let mean = vals().map(|i| x[i]).sum::<f64>() / n;
        let var = vals().map(|i| (x[i] - mean).powi(2)).sum::<f64>() / n;
        for i in vals() {
            y[i] = gamma[ch] * (x[i] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm_eval(x: &[f64], xs: &[usize], gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Vec<f64> {
    let c = xs[1];
    let s: usize = xs[2..].iter().product();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / s) % c;
            gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn pool(x: &[f64], xs: &[usize], window: usize, stride: usize, max: bool) -> (Vec<f64>, Vec<usize>) {
    let dims = xs.len() - 2;
    let planes = xs[0] * xs[1];
    let [t, h, w] = spatial3(xs);
    let (kt, st) = if dims == 3 { (window, stride) } else { (1, 1) };
    let to = (t - kt) / st + 1;
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut y = Vec::with_capacity(planes * to * ho * wo);
    for p in 0..planes {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut vals = Vec::new();
                    for dt in 0..kt {
                        for dh in 0..window {
                            for dw in 0..window {
                                let i = ((p * t + ot * st + dt) * h + oh * stride + dh) * w + ow * stride + dw;
                                vals.push(x[i]);
                            }
                        }
                    }
                    y.push(if max {
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    });
                }
            }
        }
    }
    let mut shape = xs[..2].to_vec();
    if dims == 3 {
        shape.push(to);
    }
    shape.extend([ho, wo]);
    (y, shape)
}

pub fn max_pool(x: &[f64], xs: &[usize], window: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    pool(x, xs, window, stride, true)
}

pub fn avg_pool(x: &[f64], xs: &[usize], window: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    pool(x, xs, window, stride, false)
}

pub fn global_avg_pool(x: &[f64], xs: &[usize]) -> Vec<f64> {
    let s: usize = xs[2..].iter().product();
    x.chunks(s).map(|p| p.iter().sum::<f64>() / s as f64).collect()
}

pub fn global_max_pool(x: &[f64], xs: &[usize]) -> Vec<f64> {
    let s: usize = xs[2..].iter().product();
    x.chunks(s).map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// `x [B, Din] · w [Din, Dout] + b`.
pub fn linear(x: &[f64], batch: usize, w: &[f64], din: usize, dout: usize, bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0f64; batch * dout];
    for i in 0..batch {
        for j in 0..dout {
            y[i * dout + j] = bias[j] + (0..din).map(|k| x[i * din + k] * w[k * dout + j]).sum::<f64>();
        }
    }
    y
}

pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut y = vec![0f64; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|k| (x[idx(k)] - m).exp()).sum();
            for k in 0..len {
                y[idx(k)] = (x[idx(k)] - m).exp() / z;
            }
        }
    }
    y
}

pub fn concat(parts: &[(&[f64], &[usize])], axis: usize) -> Vec<f64> {
    let shape0 = parts[0].1;
    let outer: usize = shape0[..axis].iter().product();
    let mut y = Vec::new();
    for o in 0..outer {
        for (data, shape) in parts {
            let block: usize = shape[axis..].iter().product();
            y.extend_from_slice(&data[o * block..(o + 1) * block]);
        }
    }
    y
}

/// Mean over rows of `-Σ_k t_k · ln(max(p_k, 1e-12))`.
pub fn cross_entropy(p: &[f64], truth: &[f64], classes: usize) -> f64 {
    let rows = p.len() / classes;
    let total: f64 = p
        .iter()
        .zip(truth)
        .map(|(&pk, &tk)| -tk * pk.max(1e-12).ln())
        .sum();
    total / rows as f64
}

pub fn mse(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
}
