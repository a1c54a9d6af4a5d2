use std::collections::HashSet;
use std::fs;

use distilnas_core::data::{
    crop_offset, export_dataset, generate_synthetic, load_clip_directory, load_image_directory, preprocess, resize_bilinear, sample_clip,
    write_ppm, Image, Mode, Split, SyntheticConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_classes: 4,
        train_per_class: 6,
        test_per_class: 3,
        image_size: 32,
        seed,
        ..Default::default()
    }
}

#[test]
fn desk_sizes_are_1600_and_800() {
    let d = generate_synthetic(&SyntheticConfig {
        image_size: 16,
        ..Default::default()
    })
    .unwrap();
    assert_eq!((d.train.len(), d.test.len()), (1600, 800));
    assert_eq!(d.train.class_counts(), vec![200; 8]);
    assert_eq!(d.test.class_counts(), vec![100; 8]);
}

#[test]
fn generation_is_deterministic_and_seed_dependent() {
    assert_eq!(generate_synthetic(&small(3)).unwrap(), generate_synthetic(&small(3)).unwrap());
    assert_ne!(generate_synthetic(&small(3)).unwrap().train.images, generate_synthetic(&small(4)).unwrap().train.images);
}

#[test]
fn splits_are_disjoint_and_in_range() {
    let d = generate_synthetic(&small(0)).unwrap();
    let key = |img: &Vec<f32>| img.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let train: HashSet<_> = d.train.images.iter().map(key).collect();
    assert_eq!(train.len(), d.train.len());
    assert!(d.test.images.iter().all(|img| !train.contains(&key(img))));
    for img in d.train.images.iter().chain(&d.test.images) {
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn cue_areas_vary_at_least_fourfold_per_class() {
    let cfg = SyntheticConfig {
        num_classes: 4,
        train_per_class: 40,
        test_per_class: 1,
        image_size: 64,
        cue_size_range: (0.05, 0.4),
        ..Default::default()
    };
    let d = generate_synthetic(&cfg).unwrap();
    for c in 0..cfg.num_classes {
        let areas: Vec<usize> = d.train_cues.iter().zip(&d.train.labels).filter(|(_, &l)| l == c).map(|(b, _)| b.area()).collect();
        let (lo, hi) = (*areas.iter().min().unwrap(), *areas.iter().max().unwrap());
        assert!(hi >= 4 * lo, "class {c}: areas {lo}..{hi}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SyntheticConfig { num_classes: 1, ..small(0) },
        SyntheticConfig {
            cue_size_range: (0.0, 0.3),
            ..small(0)
        },
        SyntheticConfig {
            cue_size_range: (0.2, 1.0),
            ..small(0)
        },
        SyntheticConfig {
            illumination_range: (1.2, 0.8),
            ..small(0)
        },
    ] {
        assert!(generate_synthetic(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn export_then_load_round_trips_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_synthetic(&small(1)).unwrap();
    export_dataset(&d.train, dir.path()).unwrap();
    let files: usize = fs::read_dir(dir.path()).unwrap().map(|e| fs::read_dir(e.unwrap().path()).unwrap().count()).sum();
    let back = load_image_directory(dir.path(), 32, Split::Train).unwrap();
    assert_eq!(back.len(), files);
    assert_eq!(back.class_names, d.train.class_names);
    // Files are listed per class, so compare as multisets per class.
    for c in 0..4 {
        let mut want: Vec<Vec<u8>> = d.train.images.iter().zip(&d.train.labels).filter(|(_, &l)| l == c).map(|(i, _)| quantize(i)).collect();
        let mut got: Vec<Vec<u8>> = back.images.iter().zip(&back.labels).filter(|(_, &l)| l == c).map(|(i, _)| quantize(i)).collect();
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }
}

fn quantize(img: &[f32]) -> Vec<u8> {
    img.iter().map(|v| (v * 255.0).round() as u8).collect()
}

#[test]
fn ppm_header_carries_the_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    write_ppm(&path, &Image::filled(3, 5, 7, 0.5)).unwrap();
    let bytes = fs::read(&path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..16]);
    assert!(header.starts_with("P6"), "{header}");
    assert!(header.contains('7') && header.contains('5') && header.contains("255"), "{header}");
    assert!(bytes.ends_with(&[128; 105]));
}

#[test]
fn loader_labels_follow_directory_order_and_skip_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    for c in (0..10).rev() {
        let class = dir.path().join(format!("c{c}"));
        fs::create_dir(&class).unwrap();
        write_ppm(&class.join("a.ppm"), &Image::filled(3, 8, 8, c as f32 / 10.0)).unwrap();
    }
    fs::write(dir.path().join("c3").join("broken.ppm"), b"not an image").unwrap();
    let ds = load_image_directory(dir.path(), 4, Split::Test).unwrap();
    assert_eq!(ds.num_classes(), 10);
    assert_eq!(ds.labels, (0..10).collect::<Vec<_>>());
    assert!((ds.images[3][0] - 0.3).abs() < 0.01);

    let empty = tempfile::tempdir().unwrap();
    assert!(load_image_directory(empty.path(), 4, Split::Test).is_err());
    fs::create_dir(empty.path().join("lonely")).unwrap();
    assert!(load_image_directory(empty.path(), 4, Split::Test).is_err());
}

#[test]
fn clip_directories_become_cubes() {
    let dir = tempfile::tempdir().unwrap();
    for c in 0..2 {
        let clip = dir.path().join(format!("k{c}")).join("clip0");
        fs::create_dir_all(&clip).unwrap();
        for f in 0..4 {
            write_ppm(&clip.join(format!("{f}.ppm")), &Image::filled(3, 8, 8, f as f32 / 4.0)).unwrap();
        }
    }
    let ds = load_clip_directory(dir.path(), 16, 16, Split::Train).unwrap();
    assert_eq!(ds.sample_shape, vec![3, 16, 16, 16]);
    // Four frames stretched over sixteen: each repeats four times.
    let plane = 256;
    let firsts: Vec<f32> = (0..16).map(|t| ds.images[0][t * plane]).collect();
    for (t, v) in firsts.iter().enumerate() {
        assert!((v - (t / 4) as f32 / 4.0).abs() < 0.01, "frame {t}: {v}");
    }
    assert!(sample_clip(&[], 16, 16).is_err());
}

#[test]
fn preprocessing_examples() {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    assert_eq!(crop_offset(Mode::Test, 256, 224, rng).unwrap(), (16, 16));
    for _ in 0..200 {
        let (t, l) = crop_offset(Mode::Train, 256, 224, rng).unwrap();
        assert!(t <= 32 && l <= 32);
    }
    assert!(crop_offset(Mode::Test, 200, 224, rng).is_err());
    let constant = resize_bilinear(&Image::filled(3, 13, 29, 0.25), 256, 256).unwrap();
    assert!(constant.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    let img = Image::new(3, 20, 20, (0..1200).map(|i| i as f32 / 1200.0).collect()).unwrap();
    let a = preprocess(&img, Mode::Train, 16, 8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = preprocess(&img, Mode::Train, 16, 8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.height, a.width), (8, 8));
}

proptest! {
    #[test]
    fn resized_values_stay_within_the_source_range(h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..3 * h * w).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let (lo, hi) = data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = resize_bilinear(&Image::new(3, h, w, data).unwrap(), oh, ow).unwrap();
        prop_assert_eq!(out.data.len(), 3 * oh * ow);
        prop_assert!(out.data.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}
