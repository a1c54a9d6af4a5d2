//! Loop-level reference of the four-block pyramidal-convolution student,
//! used for whole-network gradient and forward-equivalence checks.

use crate::reference as r;

#[derive(Debug, Clone)]
pub struct RefLevel {
    pub kernel: usize,
    pub out_channels: usize,
    pub groups: usize,
    /// `[out_channels, in/groups, k, k(, k)]`, row-major.
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RefBlock {
    pub levels: Vec<RefLevel>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Running statistics, used only in eval mode.
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub max_pool: bool,
}

#[derive(Debug, Clone)]
pub struct RefStudent {
    pub dims: usize,
    pub blocks: Vec<RefBlock>,
    /// `[Din, Dout]`.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub classes: usize,
    pub eps: f64,
}

impl RefStudent {
    /// Class probabilities `[B, K]` for input `x` of shape `xs`.
    pub fn forward(&self, x: &[f64], xs: &[usize], training: bool) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut shape = xs.to_vec();
        for block in &self.blocks {
            let cin = shape[1];
            let mut parts = Vec::new();
            for level in &block.levels {
                let mut ws = vec![level.out_channels, cin / level.groups];
                ws.extend(std::iter::repeat_n(level.kernel, self.dims));
                parts.push(r::conv(&cur, &shape, &level.weight, &ws, 1, (level.kernel - 1) / 2, level.groups));
            }
            let views: Vec<(&[f64], &[usize])> = parts.iter().map(|(d, s)| (d.as_slice(), s.as_slice())).collect();
            let mut cat_shape = parts[0].1.clone();
            cat_shape[1] = parts.iter().map(|(_, s)| s[1]).sum();
            let cat = r::concat(&views, 1);
            let normed = if training {
                r::batch_norm_train(&cat, &cat_shape, &block.gamma, &block.beta, self.eps)
            } else {
                r::batch_norm_eval(&cat, &cat_shape, &block.gamma, &block.beta, &block.running_mean, &block.running_var, self.eps)
            };
            let act = r::relu(&normed);
            let (pooled, ps) = if block.max_pool {
                r::max_pool(&act, &cat_shape, 2, 2)
            } else {
                r::avg_pool(&act, &cat_shape, 2, 2)
            };
            cur = pooled;
            shape = ps;
        }
        let feats = r::global_avg_pool(&cur, &shape);
        let logits = r::linear(&feats, shape[0], &self.fc_weight, shape[1], self.classes, &self.fc_bias);
        r::softmax(&logits, &[shape[0], self.classes], 1)
    }

    /// Mean cross-entropy against integer labels (training-mode BN).
    pub fn loss(&self, x: &[f64], xs: &[usize], labels: &[usize]) -> f64 {
        let p = self.forward(x, xs, true);
        let mut truth = vec![0f64; p.len()];
        for (i, &l) in labels.iter().enumerate() {
            truth[i * self.classes + l] = 1.0;
        }
        r::cross_entropy(&p, &truth, self.classes)
    }

    /// Every trainable buffer in a fixed order: per block the level
    /// weights then gamma and beta, then the FC weight and bias.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for level in &mut block.levels {
                out.push(&mut level.weight);
            }
            out.push(&mut block.gamma);
            out.push(&mut block.beta);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }
}
