//! Finite-difference gradient checks of every differentiable op against the
//! f64 reference kernels. Shared by the tensor tests and the acceptance
//! suite.

#![allow(dead_code)]

use distilnas_oracle::fd::{central_difference, max_relative_error, TestRng};
use distilnas_oracle::reference as r;
use distilnas_tensor::{ops, Tensor};

pub const FD_STEP: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-3;
pub const SHAPES_PER_OP: usize = 20;

type EngineFn = Box<dyn Fn(&[Tensor]) -> Tensor>;
type RefFn = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct Case {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub engine: EngineFn,
    pub reference: RefFn,
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.shapes >= SHAPES_PER_OP && self.max_rel_err <= MAX_REL_ERR
    }
}

/// Worst relative error over all inputs of one case.
pub fn check_case(case: &Case, rng: &mut TestRng) -> f64 {
    // Evaluate both sides at the same f32-representable point.
    let inputs: Vec<Vec<f64>> = case
        .inputs
        .iter()
        .map(|(_, d)| d.iter().map(|&v| v as f32 as f64).collect())
        .collect();
    let tensors: Vec<Tensor> = case
        .inputs
        .iter()
        .zip(&inputs)
        .map(|((s, _), d)| Tensor::parameter(s, d.iter().map(|&v| v as f32).collect()).unwrap())
        .collect();
    let y = (case.engine)(&tensors);
    let reference_out = (case.reference)(&inputs);
    assert_eq!(y.numel(), reference_out.len(), "engine/reference output size");
    let proj = rng.vec(y.numel(), -1.0, 1.0);
    let proj_t = Tensor::from_vec(y.shape(), proj.iter().map(|&v| v as f32).collect()).unwrap();
    ops::sum(&ops::mul(&y, &proj_t).unwrap()).backward().unwrap();

    let mut worst: f64 = 0.0;
    for (i, t) in tensors.iter().enumerate() {
        let analytic: Vec<f64> = t
            .grad()
            .unwrap_or_else(|| vec![0.0; t.numel()])
            .iter()
            .map(|&v| v as f64)
            .collect();
        let idx: Vec<usize> = (0..inputs[i].len()).collect();
        let numeric = central_difference(
            |xi| {
                let mut all = inputs.clone();
                all[i] = xi.to_vec();
                (case.reference)(&all).iter().zip(&proj).map(|(a, b)| a * b).sum()
            },
            &inputs[i],
            &idx,
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

fn run(op: &'static str, rng: &mut TestRng, mut make: impl FnMut(&mut TestRng) -> Case) -> OpReport {
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..SHAPES_PER_OP {
        let case = make(rng);
        max_rel_err = max_rel_err.max(check_case(&case, rng));
    }
    OpReport {
        op,
        shapes: SHAPES_PER_OP,
        max_rel_err,
    }
}

fn conv_case(rng: &mut TestRng, dims: usize) -> Case {
    let groups = [1, 2][rng.below(2)];
    let cin = groups * (1 + rng.below(2));
    let cout = groups * (1 + rng.below(2));
    let k = [1, 3, 5][rng.below(if dims == 3 { 2 } else { 3 })];
    let stride = 1 + rng.below(2);
    let pad = rng.below(k / 2 + 1);
    let b = 1 + rng.below(2);
    let extent = |rng: &mut TestRng| k.max(2) + rng.below(if dims == 3 { 2 } else { 4 });
    let mut xs = vec![b, cin];
    let mut ws = vec![cout, cin / groups];
    for _ in 0..dims {
        xs.push(extent(rng));
        ws.push(k);
    }
    let x = rng.vec(r::numel(&xs), -1.0, 1.0);
    let w = rng.vec(r::numel(&ws), -1.0, 1.0);
    let (xs2, ws2) = (xs.clone(), ws.clone());
    Case {
        inputs: vec![(xs, x), (ws, w)],
        engine: Box::new(move |t| {
            if dims == 3 {
                ops::conv3d(&t[0], &t[1], stride, pad, groups).unwrap()
            } else {
                ops::conv2d(&t[0], &t[1], stride, pad, groups).unwrap()
            }
        }),
        reference: Box::new(move |v| r::conv(&v[0], &xs2, &v[1], &ws2, stride, pad, groups).0),
    }
}

fn image_shape(rng: &mut TestRng, min_extent: usize) -> Vec<usize> {
    let b = 1 + rng.below(3);
    let c = 1 + rng.below(3);
    vec![b, c, min_extent + rng.below(4), min_extent + rng.below(4)]
}

fn bn_case(rng: &mut TestRng, training: bool) -> Case {
    let xs = if rng.below(3) == 0 {
        // Two rows normalize to ±1 whatever the input, leaving only f32 noise
        // in dx; start at three.
        vec![3 + rng.below(6), 1 + rng.below(4)]
    } else {
        let mut s = image_shape(rng, 2);
        s[0] += 1;
        s
    };
    let c = xs[1];
    let x = rng.vec(r::numel(&xs), -2.0, 2.0);
    let gamma = rng.vec(c, 0.5, 1.5);
    let beta = rng.vec(c, -0.5, 0.5);
    let rm: Vec<f64> = rng.vec(c, -0.3, 0.3).iter().map(|&v| v as f32 as f64).collect();
    let rv: Vec<f64> = rng.vec(c, 0.5, 2.0).iter().map(|&v| v as f32 as f64).collect();
    let xs2 = xs.clone();
    let (rm2, rv2) = (rm.clone(), rv.clone());
    Case {
        inputs: vec![(xs, x), (vec![c], gamma), (vec![c], beta)],
        engine: Box::new(move |t| {
            let rm_t = Tensor::from_vec(&[c], rm.iter().map(|&v| v as f32).collect()).unwrap();
            let rv_t = Tensor::from_vec(&[c], rv.iter().map(|&v| v as f32).collect()).unwrap();
            ops::batch_norm(&t[0], &t[1], &t[2], &rm_t, &rv_t, training, 1e-5, 0.1).unwrap()
        }),
        reference: Box::new(move |v| {
            if training {
                r::batch_norm_train(&v[0], &xs2, &v[1], &v[2], 1e-5)
            } else {
                r::batch_norm_eval(&v[0], &xs2, &v[1], &v[2], &rm2, &rv2, 1e-5)
            }
        }),
    }
}

fn pool_case(rng: &mut TestRng, max: bool) -> Case {
    let three_d = rng.below(3) == 0;
    let mut xs = image_shape(rng, 3);
    if three_d {
        xs.insert(2, 2 + rng.below(3));
    }
    let window = if three_d { 2 } else { 2 + rng.below(2) };
    let stride = if rng.below(2) == 0 { window } else { 1 };
    let x = rng.distinct(r::numel(&xs), 0.01);
    let xs2 = xs.clone();
    Case {
        inputs: vec![(xs, x)],
        engine: Box::new(move |t| {
            if max {
                ops::max_pool(&t[0], window, stride).unwrap()
            } else {
                ops::avg_pool(&t[0], window, stride).unwrap()
            }
        }),
        reference: Box::new(move |v| {
            if max {
                r::max_pool(&v[0], &xs2, window, stride).0
            } else {
                r::avg_pool(&v[0], &xs2, window, stride).0
            }
        }),
    }
}

fn global_case(rng: &mut TestRng, max: bool) -> Case {
    let mut xs = image_shape(rng, 1);
    if rng.below(3) == 0 {
        xs.insert(2, 1 + rng.below(3));
    }
    let x = rng.distinct(r::numel(&xs), 0.01);
    let xs2 = xs.clone();
    Case {
        inputs: vec![(xs, x)],
        engine: Box::new(move |t| {
            if max {
                ops::global_max_pool(&t[0]).unwrap()
            } else {
                ops::global_avg_pool(&t[0]).unwrap()
            }
        }),
        reference: Box::new(move |v| {
            if max {
                r::global_max_pool(&v[0], &xs2)
            } else {
                r::global_avg_pool(&v[0], &xs2)
            }
        }),
    }
}

fn linear_case(rng: &mut TestRng) -> Case {
    let (b, din, dout) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
    Case {
        inputs: vec![
            (vec![b, din], rng.vec(b * din, -1.0, 1.0)),
            (vec![din, dout], rng.vec(din * dout, -1.0, 1.0)),
            (vec![dout], rng.vec(dout, -1.0, 1.0)),
        ],
        engine: Box::new(|t| ops::linear(&t[0], &t[1], &t[2]).unwrap()),
        reference: Box::new(move |v| r::linear(&v[0], b, &v[1], din, dout, &v[2])),
    }
}

fn softmax_case(rng: &mut TestRng) -> Case {
    let rank = 1 + rng.below(3);
    let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(5)).collect();
    let axis = rng.below(rank);
    let x = rng.vec(r::numel(&shape), -3.0, 3.0);
    let s2 = shape.clone();
    Case {
        inputs: vec![(shape, x)],
        engine: Box::new(move |t| ops::softmax(&t[0], axis).unwrap()),
        reference: Box::new(move |v| r::softmax(&v[0], &s2, axis)),
    }
}

fn concat_case(rng: &mut TestRng) -> Case {
    let rank = 1 + rng.below(3);
    let base: Vec<usize> = (0..rank).map(|_| 1 + rng.below(4)).collect();
    let axis = rng.below(rank);
    let parts = 2 + rng.below(2);
    let mut inputs = Vec::new();
    for _ in 0..parts {
        let mut s = base.clone();
        s[axis] = 1 + rng.below(3);
        let d = rng.vec(r::numel(&s), -1.0, 1.0);
        inputs.push((s, d));
    }
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|(s, _)| s.clone()).collect();
    Case {
        inputs,
        engine: Box::new(move |t| ops::concat(t, axis).unwrap()),
        reference: Box::new(move |v| {
            let views: Vec<(&[f64], &[usize])> = v.iter().zip(&shapes).map(|(d, s)| (d.as_slice(), s.as_slice())).collect();
            r::concat(&views, axis)
        }),
    }
}

fn weighted_sum_case(rng: &mut TestRng) -> Case {
    let m = 1 + rng.below(4);
    let shape: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(4)).collect();
    let mut inputs: Vec<(Vec<usize>, Vec<f64>)> = (0..m)
        .map(|_| (shape.clone(), rng.vec(r::numel(&shape), -1.0, 1.0)))
        .collect();
    inputs.push((vec![m], rng.vec(m, 0.0, 1.0)));
    Case {
        inputs,
        engine: Box::new(move |t| ops::weighted_sum(&t[..m], &t[m]).unwrap()),
        reference: Box::new(move |v| {
            let n = v[0].len();
            (0..n).map(|i| (0..m).map(|k| v[m][k] * v[k][i]).sum()).collect()
        }),
    }
}

fn relu_case(rng: &mut TestRng) -> Case {
    let shape = image_shape(rng, 1);
    let x = rng.signed_away_from_zero(r::numel(&shape));
    Case {
        inputs: vec![(shape, x)],
        engine: Box::new(|t| ops::relu(&t[0])),
        reference: Box::new(|v| r::relu(&v[0])),
    }
}

fn elementwise_case(rng: &mut TestRng, which: usize) -> Case {
    let shape: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(5)).collect();
    let n = r::numel(&shape);
    let a = rng.vec(n, 0.1, 2.0);
    let b = rng.vec(n, -2.0, 2.0);
    let c = rng.range(-2.0, 2.0) as f32;
    let target = vec![shape.iter().product::<usize>()];
    Case {
        inputs: vec![(shape.clone(), a), (shape, b)],
        engine: Box::new(move |t| match which {
            0 => ops::add(&t[0], &t[1]).unwrap(),
            1 => ops::sub(&t[0], &t[1]).unwrap(),
            2 => ops::mul(&t[0], &t[1]).unwrap(),
            3 => ops::add(&ops::scale(&t[0], c), &ops::ln_clamped(&t[0], 1e-12)).unwrap(),
            4 => ops::reshape(&ops::mul(&t[0], &t[1]).unwrap(), &target).unwrap(),
            _ => {
                let s = ops::sum(&t[1]);
                let m = ops::mean(&t[0]);
                ops::reshape(&ops::concat(&[ops::reshape(&s, &[1]).unwrap(), ops::reshape(&m, &[1]).unwrap()], 0).unwrap(), &[2]).unwrap()
            }
        }),
        reference: Box::new(move |v| match which {
            0 => v[0].iter().zip(&v[1]).map(|(a, b)| a + b).collect(),
            1 => v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect(),
            2 | 4 => v[0].iter().zip(&v[1]).map(|(a, b)| a * b).collect(),
            3 => v[0].iter().map(|a| c as f64 * a + a.max(1e-12).ln()).collect(),
            _ => vec![v[1].iter().sum(), v[0].iter().sum::<f64>() / v[0].len() as f64],
        }),
    }
}

/// Runs the full per-op suite.
pub fn check_all_ops(seed: u64) -> Vec<OpReport> {
    let mut rng = TestRng::new(seed);
    let rng = &mut rng;
    vec![
        run("conv2d", rng, |r| conv_case(r, 2)),
        run("conv3d", rng, |r| conv_case(r, 3)),
        run("batch_norm(train)", rng, |r| bn_case(r, true)),
        run("batch_norm(eval)", rng, |r| bn_case(r, false)),
        run("relu", rng, relu_case),
        run("max_pool", rng, |r| pool_case(r, true)),
        run("avg_pool", rng, |r| pool_case(r, false)),
        run("global_avg_pool", rng, |r| global_case(r, false)),
        run("global_max_pool", rng, |r| global_case(r, true)),
        run("linear", rng, linear_case),
        run("softmax", rng, softmax_case),
        run("concat", rng, concat_case),
        run("weighted_sum", rng, weighted_sum_case),
        run("add", rng, |r| elementwise_case(r, 0)),
        run("sub", rng, |r| elementwise_case(r, 1)),
        run("mul", rng, |r| elementwise_case(r, 2)),
        run("scale+ln_clamped", rng, |r| elementwise_case(r, 3)),
        run("reshape", rng, |r| elementwise_case(r, 4)),
        run("sum/mean", rng, |r| elementwise_case(r, 5)),
    ]
}
