//! Network-level checks shared by the unit-style tests and the acceptance
//! run: supernet collapse and whole-student gradients against the f64
//! oracle.

use std::collections::HashMap;

use distilnas_core::arch::{ArchitectureSpec, BlockSpec, CandidateSpace, Choice, Dims, FilterSpec, MixWeights, Pooling, PyConvSpec};
use distilnas_core::nn::{Module, Role, Student, Supernet};
use distilnas_core::train::{cross_entropy, one_hot};
use distilnas_oracle::fd::{central_difference, max_relative_error, TestRng};
use distilnas_oracle::student::{RefBlock, RefLevel, RefStudent};
use distilnas_tensor::{ops, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Overwrites every tensor with fresh values: weights and shifts around
/// zero, scales and running variances around one.
pub fn randomize(module: &dyn Module, rng: &mut TestRng) {
    for t in module.named_tensors() {
        let n = t.tensor.numel();
        let values: Vec<f32> = if t.name.ends_with("gamma") || t.name.ends_with("running_var") {
            rng.vec(n, 0.5, 1.5)
        } else if t.role == Role::Buffer {
            rng.vec(n, -0.3, 0.3)
        } else {
            rng.vec(n, -0.4, 0.4)
        }
        .into_iter()
        .map(|v| v as f32)
        .collect();
        t.tensor.data_mut().copy_from_slice(&values);
    }
}

pub fn random_input(shape: &[usize], rng: &mut TestRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rng.vec(n, -1.0, 1.0).into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Configurations that, between them, pair every conv candidate of every
/// block with every pooling candidate.
pub fn covering_choices(space: &CandidateSpace) -> Vec<Choice> {
    let n = space.blocks.iter().map(|b| b.conv.len() * b.pool.len()).max().unwrap();
    (0..n)
        .map(|i| Choice {
            conv: space.blocks.iter().map(|b| i % b.conv.len()).collect(),
            pool: space.blocks.iter().map(|b| (i / b.conv.len()) % b.pool.len()).collect(),
        })
        .collect()
}

/// Logits whose softmax is exactly one-hot on `choice` in f32.
pub fn one_hot_weights(space: &CandidateSpace, choice: &Choice) -> MixWeights {
    let row = |n: usize, k: usize| (0..n).map(|i| if i == k { 0.0 } else { -1e4 }).collect();
    MixWeights {
        alpha: space.blocks.iter().zip(&choice.conv).map(|(b, &k)| row(b.conv.len(), k)).collect(),
        beta: space.blocks.iter().zip(&choice.pool).map(|(b, &k)| row(b.pool.len(), k)).collect(),
    }
}

/// Largest absolute gap between a one-hot supernet and the student pruned
/// from it, on a batch of `inputs` random samples per configuration, in both
/// batch-norm modes. Returns `(configurations, max_abs_error)`.
pub fn supernet_collapse_error(space: &CandidateSpace, side: usize, inputs: usize, seed: u64) -> (usize, f32) {
    let mut rng = TestRng::new(seed);
    let classes = 5;
    let supernet = Supernet::new(space, &MixWeights::uniform(space), classes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    randomize(&supernet, &mut rng);
    let choices = covering_choices(space);
    let mut shape = vec![inputs, space.input_channels];
    shape.extend(std::iter::repeat_n(side, space.dims.spatial_rank()));
    let mut worst = 0f32;
    for choice in &choices {
        supernet.set_mix_weights(&one_hot_weights(space, choice)).unwrap();
        let student = supernet.extract_student(choice).unwrap();
        let x = random_input(&shape, &mut rng);
        for training in [false, true] {
            let (a, b) = distilnas_tensor::no_grad(|| (supernet.logits(&x, training).unwrap(), student.logits(&x, training).unwrap()));
            for (u, v) in a.to_vec().iter().zip(b.to_vec()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    (choices.len(), worst)
}

/// A narrow student: two pyramid levels per block with mixed groups.
pub fn small_student(dims: Dims, classes: usize) -> ArchitectureSpec {
    let block = |levels: [(usize, usize, usize); 2], pooling| BlockSpec {
        pyconv: PyConvSpec::new(levels.iter().map(|&(k, c, g)| FilterSpec::new(k, c, g)).collect()),
        pooling,
    };
    ArchitectureSpec {
        blocks: vec![
            block([(5, 4, 1), (3, 2, 2)], Pooling::Max),
            block([(3, 4, 2), (1, 4, 1)], Pooling::Average),
            block([(3, 4, 1), (1, 2, 2)], Pooling::Max),
            block([(1, 4, 2), (3, 2, 1)], Pooling::Average),
        ],
        num_classes: classes,
        input_channels: 2,
        dims,
    }
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// The oracle twin of `student`, sharing its current tensors.
pub fn reference_of(student: &Student) -> RefStudent {
    let state: HashMap<String, Vec<f32>> = student.state().into_iter().map(|(n, _, d)| (n, d)).collect();
    let get = |name: String| f64s(&state[&name]);
    let arch = &student.arch;
    RefStudent {
        dims: arch.dims.spatial_rank(),
        blocks: arch
            .blocks
            .iter()
            .enumerate()
            .map(|(b, spec)| {
                let p = format!("block{}", b + 1);
                RefBlock {
                    levels: spec
                        .pyconv
                        .levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| RefLevel {
                            kernel: l.kernel,
                            out_channels: l.out_channels,
                            groups: l.groups,
                            weight: get(format!("{p}.pyconv.level{}.weight", i + 1)),
                        })
                        .collect(),
                    gamma: get(format!("{p}.bn.gamma")),
                    beta: get(format!("{p}.bn.beta")),
                    running_mean: get(format!("{p}.bn.running_mean")),
                    running_var: get(format!("{p}.bn.running_var")),
                    max_pool: spec.pooling == Pooling::Max,
                }
            })
            .collect(),
        fc_weight: get("fc.weight".into()),
        fc_bias: get("fc.bias".into()),
        classes: arch.num_classes,
        eps: 1e-5,
    }
}

/// Forward gap (both batch-norm modes) and worst relative gradient error
/// of the whole student against central differences of the oracle loss.
pub struct StudentCheck {
    pub forward_abs_err: f64,
    pub grad_rel_err: f64,
    pub coordinates: usize,
}

pub fn check_student(dims: Dims, side: usize, seed: u64) -> StudentCheck {
    let mut rng = TestRng::new(seed);
    let arch = small_student(dims, 3);
    let student = Student::new(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    randomize(&student, &mut rng);
    let batch = 3;
    let mut shape = vec![batch, arch.input_channels];
    shape.extend(std::iter::repeat_n(side, dims.spatial_rank()));
    let x = random_input(&shape, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(arch.num_classes)).collect();
    let xs = f64s(&x.to_vec());

    let mut oracle = reference_of(&student);
    let mut forward_abs_err = 0f64;
    for training in [false, true] {
        let ours = distilnas_tensor::no_grad(|| student.probabilities(&x, training).unwrap()).to_vec();
        let theirs = oracle.forward(&xs, &shape, training);
        for (a, b) in ours.iter().zip(&theirs) {
            forward_abs_err = forward_abs_err.max((*a as f64 - b).abs());
        }
    }

    let p = ops::softmax(&student.logits(&x, true).unwrap(), 1).unwrap();
    let loss = cross_entropy(&p, &one_hot(&labels, arch.num_classes).unwrap()).unwrap();
    let oracle_loss = oracle.loss(&xs, &shape, &labels);
    forward_abs_err = forward_abs_err.max((loss.item() as f64 - oracle_loss).abs());
    loss.backward().unwrap();

    // Analytic gradients of every trainable tensor, flattened in the
    // oracle's parameter order.
    let params: Vec<Tensor> = student.parameters();
    let analytic: Vec<f64> = params.iter().flat_map(|t| f64s(&t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))).collect();
    let sizes: Vec<usize> = oracle.params_mut().iter().map(|v| v.len()).collect();
    assert_eq!(sizes, params.iter().map(|t| t.numel()).collect::<Vec<_>>());
    let flat: Vec<f64> = oracle.params_mut().iter().flat_map(|v| v.iter().copied()).collect();

    // A few coordinates from every tensor.
    let mut indices = Vec::new();
    let mut offset = 0;
    for &n in &sizes {
        for _ in 0..3.min(n) {
            indices.push(offset + rng.below(n));
        }
        offset += n;
    }
    let mut probe = oracle.clone();
    let numeric = central_difference(
        |theta| {
            let mut at = 0;
            for buf in probe.params_mut() {
                let n = buf.len();
                buf.copy_from_slice(&theta[at..at + n]);
                at += n;
            }
            probe.loss(&xs, &shape, &labels)
        },
        &flat,
        &indices,
        1e-5,
    );
    let picked: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
    StudentCheck {
        forward_abs_err,
        grad_rel_err: max_relative_error(&picked, &numeric),
        coordinates: indices.len(),
    }
}
