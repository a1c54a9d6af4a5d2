//! Executable networks built from architecture descriptions.

mod layers;
mod student;
mod supernet;
mod teacher;

use std::collections::HashMap;

use distilnas_tensor::Tensor;

use crate::error::{Error, Result};

pub use layers::{BatchNorm, Conv, Linear, PyConv};
pub use student::{Block, Student};
pub use supernet::{SuperBlock, Supernet};
pub use teacher::{Backbone, BackboneClassifier, PlainCnnBackbone, StageClassifier, StageDescriptor, TeacherModel};

/// Whether a tensor is trained or only carried along (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    pub role: Role,
}

/// Anything that owns tensors worth saving.
pub trait Module {
    /// Appends every owned tensor under `prefix` in a fixed order.
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>);

    fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.named_tensors()
            .into_iter()
            .filter(|t| t.role == Role::Parameter)
            .map(|t| t.tensor)
            .collect()
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Overwrites every tensor from `state`, which must name each of them
    /// with a matching shape.
    fn load_state(&self, state: &HashMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for t in self.named_tensors() {
            let (shape, data) = state
                .get(&t.name)
                .ok_or_else(|| Error::State(format!("missing tensor {}", t.name)))?;
            if shape.as_slice() != t.tensor.shape() {
                return Err(Error::State(format!(
                    "tensor {} has shape {:?}, stored {:?}",
                    t.name,
                    t.tensor.shape(),
                    shape
                )));
            }
            t.tensor.data_mut().copy_from_slice(data);
        }
        Ok(())
    }

    /// Name → (shape, values) snapshot of every tensor.
    fn state(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.named_tensors()
            .into_iter()
            .map(|t| (t.name, t.tensor.shape().to_vec(), t.tensor.to_vec()))
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that maps a batch to class probabilities.
pub trait Classifier {
    /// Unnormalized class scores `[B, K]` in evaluation mode, without
    /// recording a graph.
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor>;

    /// Class probabilities `[B, K]` in evaluation mode.
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(distilnas_tensor::ops::softmax(&self.predict_logits(x)?, 1)?)
    }

    fn num_classes(&self) -> usize;
}

/// Copies every tensor of `src` into `dst`; both must share names and
/// shapes.
pub fn copy_state(src: &dyn Module, dst: &dyn Module) -> Result<()> {
    let map = src
        .state()
        .into_iter()
        .map(|(n, s, d)| (n, (s, d)))
        .collect::<HashMap<_, _>>();
    dst.load_state(&map)
}
