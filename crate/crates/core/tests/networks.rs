mod support;

use distilnas_core::arch::{ArchitectureSpec, CandidateSpace, Dims, MixWeights};
use distilnas_core::nn::{Classifier, Module, Student, Supernet};
use distilnas_oracle::fd::TestRng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::networks::{check_student, covering_choices, random_input, supernet_collapse_error};

#[test]
fn one_hot_supernet_matches_the_pruned_student() {
    let (configs, err) = supernet_collapse_error(&CandidateSpace::standard(), 32, 10, 11);
    assert_eq!(configs, 18);
    assert!(err <= 1e-5, "max abs error {err}");
}

#[test]
fn one_hot_3d_supernet_matches_the_pruned_student() {
    // Only the first configurations: cubic kernels make the full cover slow.
    let mut space = CandidateSpace::standard().extend_to_3d().unwrap();
    for block in &mut space.blocks {
        block.conv.truncate(2);
    }
    let (configs, err) = supernet_collapse_error(&space, 16, 2, 12);
    assert_eq!(configs, 4);
    assert!(err <= 1e-5, "max abs error {err}");
}

#[test]
fn covering_choices_reach_every_candidate_pair() {
    let space = CandidateSpace::standard();
    let choices = covering_choices(&space);
    for (b, block) in space.blocks.iter().enumerate() {
        for c in 0..block.conv.len() {
            for p in 0..block.pool.len() {
                assert!(choices.iter().any(|ch| ch.conv[b] == c && ch.pool[b] == p), "block{} ({c},{p})", b + 1);
            }
        }
    }
}

#[test]
fn student_matches_the_oracle_forward_and_gradient_2d() {
    let r = check_student(Dims::Two, 16, 3);
    assert!(r.forward_abs_err < 1e-5, "forward {}", r.forward_abs_err);
    assert!(r.grad_rel_err <= 1e-3, "gradient {} over {} coordinates", r.grad_rel_err, r.coordinates);
}

#[test]
fn student_matches_the_oracle_forward_and_gradient_3d() {
    let r = check_student(Dims::Three, 16, 4);
    assert!(r.forward_abs_err < 1e-5, "forward {}", r.forward_abs_err);
    assert!(r.grad_rel_err <= 1e-3, "gradient {} over {} coordinates", r.grad_rel_err, r.coordinates);
}

#[test]
fn extracted_student_owns_its_tensors() {
    let space = CandidateSpace::standard();
    let supernet = Supernet::new(&space, &MixWeights::uniform(&space), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let choice = covering_choices(&space)[3].clone();
    let student = supernet.extract_student(&choice).unwrap();
    let before = student.state();
    for t in supernet.parameters() {
        t.data_mut().iter_mut().for_each(|v| *v += 1.0);
    }
    assert_eq!(student.state(), before);
}

#[test]
fn predictions_are_distributions() {
    let arch = ArchitectureSpec::reference_student(6);
    let student = Student::new(&arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = random_input(&[4, 3, 32, 32], &mut TestRng::new(2));
    let p = student.predict(&x).unwrap();
    assert_eq!(p.shape(), &[4, 6]);
    for row in p.to_vec().chunks(6) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
    assert!(student.predict(&random_input(&[1, 3, 24, 32], &mut TestRng::new(3))).is_err());
    assert!(student.predict(&random_input(&[1, 1, 32, 32], &mut TestRng::new(3))).is_err());
}
