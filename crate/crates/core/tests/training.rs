use std::cell::RefCell;

use distilnas_core::arch::{ArchitectureSpec, CandidateSpace, Dims, MixWeights};
use distilnas_core::data::{batches, generate_synthetic, Dataset, Split, SyntheticConfig};
use distilnas_core::nn::{BackboneClassifier, Classifier, Module, PlainCnnBackbone, Student, Supernet, TeacherModel};
use distilnas_core::train::{
    aggregate_step, brightness_augment, cross_entropy, evaluate, f1_score, mse, one_hot, run_search, run_transfer, search_loss,
    stage_step, train_backbone_baseline, train_student, train_supernet, train_teacher_progressive, transfer_loss, EpochMetrics, Hooks, Init,
    MetricsReport, PhaseResult, TrainConfig,
};
use distilnas_core::{Error, Result};
use distilnas_tensor::optim::{Sgd, SgdConfig};
use distilnas_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_data(seed: u64) -> (Dataset, Dataset) {
    let d = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        train_per_class: 4,
        test_per_class: 2,
        image_size: 32,
        seed,
        ..Default::default()
    })
    .unwrap();
    (d.train, d.test)
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 5,
        learning_rate: 0.01,
        seed: 3,
        ..Default::default()
    }
}

fn tiny_teacher(classes: usize, seed: u64) -> TeacherModel {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let bb = PlainCnnBackbone::new(3, &[4, 6, 8], Dims::Two, rng).unwrap();
    TeacherModel::new(Box::new(bb), 8, classes, Dims::Two, rng).unwrap()
}

fn bits(m: &dyn Module) -> Vec<(String, Vec<u32>)> {
    m.state().into_iter().map(|(n, _, d)| (n, d.iter().map(|v| v.to_bits()).collect())).collect()
}

fn tensor_bits(ts: &[Tensor]) -> Vec<Vec<u32>> {
    ts.iter().map(|t| t.to_vec().iter().map(|v| v.to_bits()).collect()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn scalar(t: Result<Tensor>) -> f64 {
    t.unwrap().item() as f64
}

fn probs(rows: &[&[f32]]) -> Tensor {
    let k = rows[0].len();
    Tensor::from_vec(&[rows.len(), k], rows.concat()).unwrap()
}

#[test]
fn loss_examples() {
    let uniform = probs(&[&[0.1; 10]]);
    let truth = one_hot(&[4], 10).unwrap();
    assert!(close(scalar(cross_entropy(&uniform, &truth)), 10f64.ln(), 1e-6));
    assert!(close(scalar(cross_entropy(&truth, &truth)), 0.0, 1e-9));
    let p = probs(&[&[0.7, 0.3]]);
    assert!(close(scalar(cross_entropy(&p, &one_hot(&[0], 2).unwrap())), 0.356675, 1e-6));
    assert!(close(scalar(mse(&probs(&[&[1.0, 0.0]]), &probs(&[&[0.0, 1.0]]))), 1.0, 1e-9));
    for loss in [search_loss, transfer_loss] {
        assert!(close(scalar(loss(&uniform, &uniform, &truth, 0.7)), 0.3 * 10f64.ln(), 1e-6));
        assert!(close(scalar(loss(&uniform, &p_other(), &truth, 0.0)), 10f64.ln(), 1e-6));
        assert!(close(scalar(loss(&uniform, &uniform, &truth, 1.0)), 0.0, 1e-9));
        assert!(loss(&uniform, &uniform, &truth, 1.5).is_err());
    }
    assert!(cross_entropy(&p, &truth).is_err());
}

fn p_other() -> Tensor {
    let mut row = [0.05f32; 10];
    row[0] = 0.55;
    probs(&[&row])
}

#[test]
fn mse_matches_a_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<f32> = (0..24).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
    let b: Vec<f32> = (0..24).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
    let want = a.iter().zip(&b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / 24.0;
    let got = scalar(mse(&Tensor::from_vec(&[4, 6], a).unwrap(), &Tensor::from_vec(&[4, 6], b).unwrap()));
    assert!(close(got, want, 1e-7), "{got} vs {want}");
}

#[test]
fn brightness_examples() {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    let img = Tensor::full(&[2, 3, 4, 4], 0.8);
    assert_eq!(brightness_augment(&img, (1.0, 1.0), rng).unwrap().to_vec(), img.to_vec());
    assert!(brightness_augment(&img, (0.5, 0.5), rng).unwrap().to_vec().iter().all(|&v| close(v as f64, 0.4, 1e-6)));
    assert!(brightness_augment(&img, (2.0, 2.0), rng).unwrap().to_vec().iter().all(|&v| v == 1.0));
    // Factors are drawn per image, and afresh on every call.
    let a = brightness_augment(&img, (0.5, 1.5), rng).unwrap().to_vec();
    let b = brightness_augment(&img, (0.5, 1.5), rng).unwrap().to_vec();
    assert_ne!(a[0], a[48]);
    assert_ne!(a, b);
}

#[test]
fn metric_examples() {
    assert!(close(f1_score(0.8, 0.5), 8.0 / 13.0, 1e-12));
    let truth: Vec<usize> = (0..50).map(|i| i % 10).collect();
    let perfect = MetricsReport::from_predictions(&truth, &truth, 10).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    assert!(perfect.per_class.iter().all(|c| c.f1 == 1.0));
    assert_eq!(perfect.macro_f1, 1.0);
    let constant = MetricsReport::from_predictions(&[3; 50], &truth, 10).unwrap();
    assert!(close(constant.accuracy, 0.1, 1e-12));
    assert_eq!(constant.confusion[7][3], 5);
    assert!(MetricsReport::from_predictions(&[], &[], 10).is_err());
}

/// Predicts the class written into the first pixel of each sample.
struct PixelOracle(usize);

impl Classifier for PixelOracle {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        let per = x.numel() / x.shape()[0];
        let data = x.to_vec();
        let rows: Vec<f32> = data
            .chunks(per)
            .flat_map(|s| (0..self.0).map(move |k| if k == s[0] as usize { 5.0 } else { 0.0 }))
            .collect();
        Ok(Tensor::from_vec(&[x.shape()[0], self.0], rows)?)
    }

    fn num_classes(&self) -> usize {
        self.0
    }
}

#[test]
fn evaluate_reports_perfect_and_chance_predictors() {
    let labels: Vec<usize> = (0..30).map(|i| i % 10).collect();
    let data = Dataset {
        split: Split::Test,
        sample_shape: vec![1, 2, 2],
        class_names: (0..10).map(|c| format!("c{c}")).collect(),
        images: labels.iter().map(|&l| vec![l as f32, 0.0, 0.0, 0.0]).collect(),
        labels: labels.clone(),
    };
    assert_eq!(evaluate(&PixelOracle(10), &data, 7).unwrap().accuracy, 1.0);
    let mut shifted = data.clone();
    shifted.images.iter_mut().for_each(|img| img[0] = 0.0);
    assert!(close(evaluate(&PixelOracle(10), &shifted, 7).unwrap().accuracy, 0.1, 1e-12));
    let empty = Dataset {
        images: vec![],
        labels: vec![],
        ..data.clone()
    };
    assert!(evaluate(&PixelOracle(10), &empty, 7).is_err());
    assert!(evaluate(&PixelOracle(4), &data, 7).is_err());
}

#[test]
fn progressive_training_takes_n_plus_one_steps_per_batch() {
    let (train, _) = tiny_data(0);
    let teacher = tiny_teacher(3, 1);
    let cfg = tiny_cfg(2);
    let per_epoch = batches(&(0..train.len()).collect::<Vec<_>>(), cfg.batch_size).len();
    assert_eq!(per_epoch, 3);
    let seen = RefCell::new(Vec::new());
    let hooks = Hooks {
        eval: None,
        on_epoch: Some(Box::new(|m: &EpochMetrics| {
            seen.borrow_mut().push(m.steps);
            Ok(())
        })),
    };
    let r = train_teacher_progressive(&teacher, &train, &cfg, hooks).unwrap();
    let n = teacher.num_stages() as u64;
    assert_eq!(n, 3);
    assert_eq!(r.steps, 2 * per_epoch as u64 * (n + 1));
    assert_eq!(*seen.borrow(), vec![per_epoch as u64 * (n + 1); 2]);
    assert_eq!(r.metrics.len(), 2);
    let names: Vec<&str> = r.metrics[0].losses.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(names, ["aggregate", "stage1", "stage2", "stage3"]);
}

#[test]
fn stage_updates_leave_deeper_segments_untouched() {
    let (train, _) = tiny_data(0);
    let teacher = tiny_teacher(3, 2);
    let (x, labels) = train.batch(&[0, 1, 2, 3, 4, 5]).unwrap();
    let truth = one_hot(&labels, 3).unwrap();
    let mut opt = Sgd::new(
        teacher.parameters(),
        SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        },
    )
    .unwrap();
    let stages = teacher.num_stages();
    for n in 0..stages {
        let before: Vec<_> = (0..stages).map(|m| tensor_bits(&teacher.segment_parameters(m))).collect();
        let heads_before: Vec<_> = (0..stages).map(|m| bits(&teacher.classifiers[m])).collect();
        let agg_before = bits(&teacher.aggregate);
        stage_step(&teacher, &mut opt, n, &x, &truth).unwrap();
        for m in 0..stages {
            let same = tensor_bits(&teacher.segment_parameters(m)) == before[m];
            assert_eq!(same, m > n, "stage {} step, segment {}", n + 1, m + 1);
            assert_eq!(bits(&teacher.classifiers[m]) == heads_before[m], m != n);
        }
        assert_eq!(bits(&teacher.aggregate), agg_before);
    }
    let before: Vec<_> = (0..stages).map(|m| tensor_bits(&teacher.segment_parameters(m))).collect();
    aggregate_step(&teacher, &mut opt, &x, &truth).unwrap();
    for (m, b) in before.iter().enumerate() {
        assert_ne!(&tensor_bits(&teacher.segment_parameters(m)), b, "aggregation must reach segment {}", m + 1);
    }
    assert_eq!(opt.steps(), stages as u64 + 1);
}

#[test]
fn teacher_is_bitwise_frozen_through_search_and_transfer() {
    let (train, _) = tiny_data(1);
    let teacher = tiny_teacher(3, 4);
    train_teacher_progressive(&teacher, &train, &tiny_cfg(1), Hooks::default()).unwrap();
    let frozen = bits(&teacher);
    let cfg = tiny_cfg(1);
    let out = run_search(&CandidateSpace::standard(), &teacher, &train, &cfg, Hooks::default()).unwrap();
    assert_eq!(bits(&teacher), frozen);
    run_transfer(&out.architecture, Some(&teacher), &train, &cfg, Init::Fresh, Hooks::default()).unwrap();
    assert_eq!(bits(&teacher), frozen);
    let inherit = Init::Inherit {
        supernet: &out.supernet,
        choice: &out.choice,
    };
    run_transfer(&out.architecture, Some(&teacher), &train, &cfg, inherit, Hooks::default()).unwrap();
    assert_eq!(bits(&teacher), frozen);
}

#[test]
fn search_starts_uniform_and_stays_a_distribution() {
    let (train, _) = tiny_data(2);
    let space = CandidateSpace::standard();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..tiny_cfg(1)
    };
    let supernet = Supernet::new(&space, &MixWeights::uniform(&space), 3, &mut cfg.init_rng()).unwrap();
    for row in supernet.mix_weights().alpha_probabilities() {
        assert!(row.iter().all(|&p| close(p as f64, 1.0 / row.len() as f64, 1e-6)));
    }
    let checks = RefCell::new(0);
    let hooks = Hooks {
        eval: None,
        on_epoch: Some(Box::new(|_: &EpochMetrics| {
            let w = supernet.mix_weights();
            for row in w.alpha_probabilities().iter().chain(&w.beta_probabilities()) {
                assert!(close(row.iter().map(|&p| p as f64).sum(), 1.0, 1e-5));
                assert!(row.iter().all(|&p| p > 0.0));
            }
            *checks.borrow_mut() += 1;
            Ok(())
        })),
    };
    let r = train_supernet(&supernet, None, &train, &cfg, hooks).unwrap();
    assert_eq!(*checks.borrow(), 1);
    assert_eq!(r.steps, 3);
    assert_ne!(supernet.mix_weights(), MixWeights::uniform(&space), "mixing logits must train");
}

#[test]
fn distillation_needs_a_teacher_unless_lambda_is_zero() {
    let (train, _) = tiny_data(0);
    let arch = ArchitectureSpec::reference_student(3);
    let err = run_transfer(&arch, None, &train, &tiny_cfg(1), Init::Fresh, Hooks::default()).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    let cfg = TrainConfig {
        lambda: 0.0,
        ..tiny_cfg(1)
    };
    let (_, r) = run_transfer(&arch, None, &train, &cfg, Init::Fresh, Hooks::default()).unwrap();
    let names: Vec<&str> = r.metrics[0].losses.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(names, ["total", "ce"]);
}

#[test]
fn inheriting_a_mismatched_architecture_is_rejected() {
    let (train, _) = tiny_data(0);
    let space = CandidateSpace::standard();
    let supernet = Supernet::new(&space, &MixWeights::uniform(&space), 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let choice = MixWeights::uniform(&space).choice().unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..tiny_cfg(1)
    };
    let init = Init::Inherit {
        supernet: &supernet,
        choice: &choice,
    };
    let err = run_transfer(&ArchitectureSpec::reference_student(3), None, &train, &cfg, init, Hooks::default()).err().unwrap();
    assert!(matches!(err, Error::State(_)), "{err:?}");
}

fn final_state(seed: u64) -> (Vec<(String, Vec<u32>)>, PhaseResult) {
    let (train, test) = tiny_data(0);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let bb = PlainCnnBackbone::new(3, &[4, 6, 8], Dims::Two, rng).unwrap();
    let model = BackboneClassifier::new(Box::new(bb), 3, rng).unwrap();
    let cfg = TrainConfig { seed, ..tiny_cfg(2) };
    let r = train_backbone_baseline(&model, &train, &cfg, Hooks::with_eval(&test)).unwrap();
    (bits(&model), r)
}

#[test]
fn identical_seeds_give_identical_weights() {
    let (a, ra) = final_state(9);
    let (b, rb) = final_state(9);
    assert_eq!(a, b);
    assert_eq!(ra.metrics, rb.metrics);
    let (c, _) = final_state(10);
    assert_ne!(a, c);
}

#[test]
fn non_finite_losses_abort_with_the_epoch() {
    let (train, _) = tiny_data(0);
    let cfg = TrainConfig {
        lambda: 0.0,
        ..tiny_cfg(2)
    };
    let student = Student::new(&ArchitectureSpec::reference_student(3), &mut cfg.init_rng()).unwrap();
    student.fc.bias.data_mut()[1] = f32::NAN;
    let err = train_student(&student, None, &train, &cfg, Hooks::default())
        .err()
        .expect("a NaN parameter must stop training");
    assert!(matches!(err, Error::Diverged(_)), "{err:?}");
    assert!(err.to_string().contains("epoch 1"), "{err}");
}

#[test]
fn config_validation_and_3d_defaults() {
    let cfg = TrainConfig {
        schedule: distilnas_core::train::Schedule::Plateau { patience: 1, factor: 0.1 },
        ..tiny_cfg(3)
    };
    cfg.validate().unwrap();
    assert!(TrainConfig { lambda: 1.5, ..tiny_cfg(1) }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..tiny_cfg(1) }.validate().is_err());
    assert!(TrainConfig {
        brightness_range: (1.5, 0.5),
        ..tiny_cfg(1)
    }
    .validate()
    .is_err());
    let three_d = TrainConfig::for_3d();
    assert_eq!(three_d.learning_rate, 0.001);
    assert_eq!(three_d.weight_decay, 1e-5);
}
