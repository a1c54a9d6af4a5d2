use std::collections::HashMap;

use distilnas_tensor::{ops, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, Linear, PyConv};
use super::student::{pool, Student};
use super::{join, Classifier, Module, NamedTensor, Role};
use crate::arch::{ArchitectureSpec, CandidateSpace, Choice, Dims, MixWeights, Pooling};
use crate::error::{spec_err, Result};

/// Every candidate of one block. Each conv candidate owns its batch norm;
/// the ReLU outputs are mixed by `softmax(alpha)`, then pooled both ways
/// and mixed by `softmax(beta)`.
#[derive(Debug, Clone)]
pub struct SuperBlock {
    pub branches: Vec<(PyConv, BatchNorm)>,
    pub pools: Vec<Pooling>,
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl SuperBlock {
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let outs = self
            .branches
            .iter()
            .map(|(conv, bn)| Ok(ops::relu(&bn.forward(&conv.forward(x)?, training)?)))
            .collect::<Result<Vec<_>>>()?;
        let mixed = ops::weighted_sum(&outs, &ops::softmax(&self.alpha, 0)?)?;
        let pooled = self.pools.iter().map(|&p| pool(&mixed, p)).collect::<Result<Vec<_>>>()?;
        Ok(ops::weighted_sum(&pooled, &ops::softmax(&self.beta, 0)?)?)
    }
}

impl Module for SuperBlock {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (m, (conv, bn)) in self.branches.iter().enumerate() {
            let p = join(prefix, &format!("candidate{}", m + 1));
            conv.collect(&join(&p, "pyconv"), out);
            bn.collect(&join(&p, "bn"), out);
        }
        for (name, t) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            out.push(NamedTensor {
                name: join(prefix, name),
                tensor: t.clone(),
                role: Role::Parameter,
            });
        }
    }
}

/// The student network containing every candidate of the search space.
#[derive(Debug, Clone)]
pub struct Supernet {
    pub space: CandidateSpace,
    pub blocks: Vec<SuperBlock>,
    pub fc: Linear,
    pub num_classes: usize,
}

impl Supernet {
    pub fn new(space: &CandidateSpace, weights: &MixWeights, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Supernet> {
        space.validate()?;
        if !weights.matches(space) {
            return Err(spec_err("mixing weights do not match the search space"));
        }
        let mut cin = space.input_channels;
        let mut blocks = Vec::with_capacity(space.blocks.len());
        for (b, cands) in space.blocks.iter().enumerate() {
            let branches = cands
                .conv
                .iter()
                .map(|spec| {
                    let conv = PyConv::new(spec, cin, space.dims, rng)?;
                    let bn = BatchNorm::new(conv.out_channels());
                    Ok((conv, bn))
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(SuperBlock {
                branches,
                pools: cands.pool.clone(),
                alpha: Tensor::parameter(&[cands.conv.len()], weights.alpha[b].clone())?,
                beta: Tensor::parameter(&[cands.pool.len()], weights.beta[b].clone())?,
            });
            cin = cands.out_channels();
        }
        let fc = Linear::new(cin, num_classes, rng)?;
        Ok(Supernet {
            space: space.clone(),
            blocks,
            fc,
            num_classes,
        })
    }

    pub fn logits(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let s = x.shape();
        let rank = self.space.dims.spatial_rank();
        if s.len() != 2 + rank || s[1] != self.space.input_channels {
            return Err(spec_err(format!("supernet cannot take input {s:?}")));
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, training)?;
        }
        self.fc.forward(&ops::global_avg_pool(&h)?)
    }

    pub fn probabilities(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(ops::softmax(&self.logits(x, training)?, 1)?)
    }

    /// The mixing logits α̂ and β̂ of every block.
    pub fn arch_parameters(&self) -> Vec<Tensor> {
        self.blocks.iter().flat_map(|b| [b.alpha.clone(), b.beta.clone()]).collect()
    }

    /// Every trainable tensor except the mixing logits.
    pub fn weight_parameters(&self) -> Vec<Tensor> {
        let arch = self.arch_parameters();
        self.parameters()
            .into_iter()
            .filter(|p| !arch.iter().any(|a| a.same_storage(p)))
            .collect()
    }

    pub fn mix_weights(&self) -> MixWeights {
        MixWeights {
            alpha: self.blocks.iter().map(|b| b.alpha.to_vec()).collect(),
            beta: self.blocks.iter().map(|b| b.beta.to_vec()).collect(),
        }
    }

    pub fn set_mix_weights(&self, weights: &MixWeights) -> Result<()> {
        if !weights.matches(&self.space) {
            return Err(spec_err("mixing weights do not match the search space"));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            block.alpha.data_mut().copy_from_slice(&weights.alpha[b]);
            block.beta.data_mut().copy_from_slice(&weights.beta[b]);
        }
        Ok(())
    }

    /// The pruned student for `choice`, carrying over the chosen branches'
    /// convolution and batch-norm tensors and the classifier head.
    pub fn extract_student(&self, choice: &Choice) -> Result<Student> {
        let arch: ArchitectureSpec = self.space.instantiate(choice, self.num_classes)?;
        let student = Student::new(&arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        let source: HashMap<String, Tensor> = self.named_tensors().into_iter().map(|t| (t.name, t.tensor)).collect();
        let mut state = HashMap::new();
        for t in student.named_tensors() {
            let from = match t.name.split_once('.') {
                Some((block, rest)) if block.starts_with("block") => {
                    let b: usize = block[5..].parse().expect("block index");
                    format!("{block}.candidate{}.{rest}", choice.conv[b - 1] + 1)
                }
                _ => t.name.clone(),
            };
            let src = source
                .get(&from)
                .ok_or_else(|| spec_err(format!("supernet has no tensor {from}")))?;
            state.insert(t.name, (src.shape().to_vec(), src.to_vec()));
        }
        student.load_state(&state)?;
        Ok(student)
    }

    pub fn dims(&self) -> Dims {
        self.space.dims
    }
}

impl Module for Supernet {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (b, block) in self.blocks.iter().enumerate() {
            block.collect(&join(prefix, &format!("block{}", b + 1)), out);
        }
        self.fc.collect(&join(prefix, "fc"), out);
    }
}

impl Classifier for Supernet {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        distilnas_tensor::no_grad(|| self.logits(x, false))
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}
