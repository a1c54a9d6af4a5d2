use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Normalization statistics saved for the backward pass.
struct BatchNormFn {
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    x_hat: Vec<f32>,
    inv_std: Vec<f64>,
    channels: usize,
    spatial: usize,
    training: bool,
}

impl GradFn for BatchNormFn {
    fn name(&self) -> &'static str {
        "batch_norm"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x, &self.gamma, &self.beta]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (c, s) = (self.channels, self.spatial);
        let batch = g.len() / (c * s);
        let n = (batch * s) as f64;
        let gamma = self.gamma.data();
        let mut sum_g = vec![0f64; c];
        let mut sum_gx = vec![0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    sum_g[ch] += g[i] as f64;
                    sum_gx[ch] += g[i] as f64 * self.x_hat[i] as f64;
                }
            }
        }
        let dx = self.x.requires_grad().then(|| {
            let mut dx = vec![0f32; g.len()];
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    let k = gamma[ch] as f64 * self.inv_std[ch];
                    for i in base..base + s {
                        let v = if self.training {
                            k * (g[i] as f64 - sum_g[ch] / n - self.x_hat[i] as f64 * sum_gx[ch] / n)
                        } else {
                            k * g[i] as f64
                        };
                        dx[i] = v as f32;
                    }
                }
            }
            dx
        });
        let dgamma = self.gamma.requires_grad().then(|| sum_gx.iter().map(|&v| v as f32).collect());
        let dbeta = self.beta.requires_grad().then(|| sum_g.iter().map(|&v| v as f32).collect());
        vec![dx, dgamma, dbeta]
    }
}

/// Batch normalization over axis 1 of `[B, C, ...]`.
///
/// In training mode the batch statistics normalize the input and the
/// running statistics are updated in place with
/// `running = (1 - momentum) * running + momentum * batch` (unbiased
/// variance). In evaluation mode the running statistics are used.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    training: bool,
    eps: f32,
    momentum: f32,
) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(shape_err("batch_norm", format!("expected [B, C, ...], got {shape:?}")));
    }
    let c = shape[1];
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.numel() != c {
            return Err(shape_err("batch_norm", format!("{name} has {} entries for {c} channels", t.numel())));
        }
    }
    if eps <= 0.0 {
        return Err(arg_err("batch_norm", "eps must be positive"));
    }
    let batch = shape[0];
    let s: usize = shape[2..].iter().product();
    let n = batch * s;
    let src = x.data();

    let (mean, var): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                mean[ch] += src[base..base + s].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                var[ch] += src[base..base + s]
                    .iter()
                    .map(|&v| (v as f64 - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n as f64).collect();
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        let m = momentum as f64;
        let mut rm = running_mean.data_mut();
        let mut rv = running_var.data_mut();
        for ch in 0..c {
            rm[ch] = ((1.0 - m) * rm[ch] as f64 + m * mean[ch]) as f32;
            rv[ch] = ((1.0 - m) * rv[ch] as f64 + m * biased[ch] * unbias) as f32;
        }
        (mean, biased)
    } else {
        (
            running_mean.data().iter().map(|&v| v as f64).collect(),
            running_var.data().iter().map(|&v| v as f64).collect(),
        )
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps as f64).sqrt()).collect();
    let gm = gamma.data();
    let bt = beta.data();
    let mut x_hat = vec![0f32; src.len()];
    let mut out = vec![0f32; src.len()];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for i in base..base + s {
                let h = (src[i] as f64 - mean[ch]) * inv_std[ch];
                x_hat[i] = h as f32;
                out[i] = (gm[ch] as f64 * h + bt[ch] as f64) as f32;
            }
        }
    }
    drop((src, gm, bt));
    Ok(Tensor::from_op(
        shape.to_vec(),
        out,
        BatchNormFn {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            x_hat,
            inv_std,
            channels: c,
            spatial: s,
            training,
        },
    ))
}
