use distilnas_tensor::{ops, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{join, Module, NamedTensor, Role};
use crate::arch::{Dims, FilterSpec, PyConvSpec};
use crate::error::Result;

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Bias-free convolution with stride 1 and same-size padding.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub spec: FilterSpec,
    pub dims: Dims,
    pub stride: usize,
}

impl Conv {
    /// He-uniform initialization over the fan-in.
    pub fn new(spec: FilterSpec, in_channels: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Conv> {
        Self::with_stride(spec, in_channels, dims, 1, rng)
    }

    pub fn with_stride(spec: FilterSpec, in_channels: usize, dims: Dims, stride: usize, rng: &mut ChaCha8Rng) -> Result<Conv> {
        spec.validate(in_channels)?;
        let mut shape = vec![spec.out_channels, in_channels / spec.groups];
        shape.extend(std::iter::repeat_n(spec.kernel, dims.spatial_rank()));
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f32).sqrt();
        let weight = Tensor::parameter(&shape, uniform(rng, shape.iter().product(), bound))?;
        Ok(Conv {
            weight,
            spec,
            dims,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (pad, g) = (self.spec.padding(), self.spec.groups);
        Ok(match self.dims {
            Dims::Two => ops::conv2d(x, &self.weight, self.stride, pad, g)?,
            Dims::Three => ops::conv3d(x, &self.weight, self.stride, pad, g)?,
        })
    }
}

impl Module for Conv {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor {
            name: join(prefix, "weight"),
            tensor: self.weight.clone(),
            role: Role::Parameter,
        });
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f32 = 1e-5;
    pub const DEFAULT_MOMENTUM: f32 = 0.1;

    pub fn new(channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: Tensor::parameter(&[channels], vec![1.0; channels]).expect("positive channel count"),
            beta: Tensor::parameter(&[channels], vec![0.0; channels]).expect("positive channel count"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(ops::batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            training,
            self.eps,
            self.momentum,
        )?)
    }
}

impl Module for BatchNorm {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (name, t, role) in [
            ("gamma", &self.gamma, Role::Parameter),
            ("beta", &self.beta, Role::Parameter),
            ("running_mean", &self.running_mean, Role::Buffer),
            ("running_var", &self.running_var, Role::Buffer),
        ] {
            out.push(NamedTensor {
                name: join(prefix, name),
                tensor: t.clone(),
                role,
            });
        }
    }
}

/// Fully connected layer `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Linear> {
        let bound = 1.0 / (input as f32).sqrt();
        Ok(Linear {
            weight: Tensor::parameter(&[input, output], uniform(rng, input * output, bound))?,
            bias: Tensor::parameter(&[output], uniform(rng, output, bound))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::linear(x, &self.weight, &self.bias)?)
    }
}

impl Module for Linear {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor {
            name: join(prefix, "weight"),
            tensor: self.weight.clone(),
            role: Role::Parameter,
        });
        out.push(NamedTensor {
            name: join(prefix, "bias"),
            tensor: self.bias.clone(),
            role: Role::Parameter,
        });
    }
}

/// Parallel convolution levels over one input, concatenated on channels.
#[derive(Debug, Clone)]
pub struct PyConv {
    pub levels: Vec<Conv>,
}

impl PyConv {
    pub fn new(spec: &PyConvSpec, in_channels: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<PyConv> {
        spec.validate(in_channels)?;
        let levels = spec
            .levels
            .iter()
            .map(|&l| Conv::new(l, in_channels, dims, rng))
            .collect::<Result<_>>()?;
        Ok(PyConv { levels })
    }

    pub fn out_channels(&self) -> usize {
        self.levels.iter().map(|l| l.spec.out_channels).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let parts = self.levels.iter().map(|l| l.forward(x)).collect::<Result<Vec<_>>>()?;
        if parts.len() == 1 {
            return Ok(parts.into_iter().next().expect("one level"));
        }
        Ok(ops::concat(&parts, 1)?)
    }
}

impl Module for PyConv {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, l) in self.levels.iter().enumerate() {
            l.collect(&join(prefix, &format!("level{}", i + 1)), out);
        }
    }
}
