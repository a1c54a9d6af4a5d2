use distilnas_tensor::{ops, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, Linear, PyConv};
use super::{join, Classifier, Module, NamedTensor};
use crate::arch::{ArchitectureSpec, BlockSpec, Dims, Pooling};
use crate::error::{spec_err, Result};

pub(crate) fn pool(x: &Tensor, pooling: Pooling) -> Result<Tensor> {
    Ok(match pooling {
        Pooling::Average => ops::avg_pool(x, 2, 2)?,
        Pooling::Max => ops::max_pool(x, 2, 2)?,
    })
}

/// pyconv → batch norm → ReLU → 2× down-sampling.
#[derive(Debug, Clone)]
pub struct Block {
    pub pyconv: PyConv,
    pub bn: BatchNorm,
    pub pooling: Pooling,
}

impl Block {
    pub fn new(spec: &BlockSpec, in_channels: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Block> {
        let pyconv = PyConv::new(&spec.pyconv, in_channels, dims, rng)?;
        let bn = BatchNorm::new(pyconv.out_channels());
        Ok(Block {
            pyconv,
            bn,
            pooling: spec.pooling,
        })
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let y = ops::relu(&self.bn.forward(&self.pyconv.forward(x)?, training)?);
        pool(&y, self.pooling)
    }
}

impl Module for Block {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.pyconv.collect(&join(prefix, "pyconv"), out);
        self.bn.collect(&join(prefix, "bn"), out);
    }
}

/// Four blocks, global average pooling and a fully connected head.
#[derive(Debug, Clone)]
pub struct Student {
    pub arch: ArchitectureSpec,
    pub blocks: Vec<Block>,
    pub fc: Linear,
}

impl Student {
    pub fn new(arch: &ArchitectureSpec, rng: &mut ChaCha8Rng) -> Result<Student> {
        arch.validate()?;
        let blocks = arch
            .blocks
            .iter()
            .enumerate()
            .map(|(b, spec)| Block::new(spec, arch.block_in_channels(b), arch.dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let fc = Linear::new(arch.feature_channels(), arch.num_classes, rng)?;
        Ok(Student {
            arch: arch.clone(),
            blocks,
            fc,
        })
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 2 + self.arch.dims.spatial_rank() || s[1] != self.arch.input_channels {
            return Err(spec_err(format!(
                "{} student with {} input channels cannot take input {s:?}",
                self.arch.dims, self.arch.input_channels
            )));
        }
        self.arch.check_input_extent(&s[2..])
    }

    pub fn logits(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, training)?;
        }
        self.fc.forward(&ops::global_avg_pool(&h)?)
    }

    pub fn probabilities(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(ops::softmax(&self.logits(x, training)?, 1)?)
    }
}

impl Module for Student {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (b, block) in self.blocks.iter().enumerate() {
            block.collect(&join(prefix, &format!("block{}", b + 1)), out);
        }
        self.fc.collect(&join(prefix, "fc"), out);
    }
}

impl Classifier for Student {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        distilnas_tensor::no_grad(|| self.logits(x, false))
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }
}
