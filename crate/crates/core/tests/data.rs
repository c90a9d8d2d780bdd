use proptest::prelude::*;

use panet::data::{
    augment_all, decode_gray8, elastic_deform, encode_pgm, kfold, load_image, load_mask, read_dataset, read_manifest,
    save_image, save_mask, synth_dataset, synth_phantom, write_dataset, AugTag, AugmentConfig, ElasticParams,
    GrayImage, PhantomConfig,
};
use panet::postprocess::label_components;
use panet::BinaryMask;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgm_roundtrip_is_exact(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
        let mut rng = panet::rng::SplitMix64::new(seed);
        let bytes: Vec<u8> = (0..h * w).map(|_| rng.below(256) as u8).collect();
        let img = GrayImage::from_u8(h, w, &bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.pgm", "a.png"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            prop_assert_eq!(back.to_u8(), bytes.clone());
            prop_assert_eq!(&back, &img);
        }
    }
}

#[test]
fn masks_load_as_zero_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let raw: Vec<u8> = (0..12).map(|i| if i % 3 == 0 { 255 } else { 0 }).collect();
    std::fs::write(&path, encode_pgm(3, 4, &raw)).unwrap();
    let m = load_mask(&path).unwrap();
    assert_eq!(m.data(), &raw.iter().map(|&v| (v == 255) as u8).collect::<Vec<_>>()[..]);
    let out = dir.path().join("n.pgm");
    save_mask(&m, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn sixteen_bit_input_is_rejected() {
    let mut bytes = b"P5\n2 2\n65535\n".to_vec();
    bytes.extend_from_slice(&[0u8; 8]);
    let err = decode_gray8(&bytes, "x.pgm".as_ref()).unwrap_err().to_string();
    assert!(err.contains("16-bit"), "{err}");
    assert!(decode_gray8(b"P2\n1 1\n255\n0\n", "x.pgm".as_ref()).is_err());
    assert!(decode_gray8(b"P5\n4 4\n255\n\x00\x00", "x.pgm".as_ref()).is_err());
}

fn phantom(seed: u64, count: Option<usize>) -> panet::data::Sample {
    let cfg = PhantomConfig {
        plaque_count: count,
        seed,
        ..Default::default()
    };
    synth_phantom(&cfg, "p").unwrap()
}

#[test]
fn elastic_deformation_keeps_mask_area() {
    let params = ElasticParams::for_width(128);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let s = phantom(i, None);
        let d = elastic_deform(&s, params, 1000 + i).unwrap();
        let (a, b) = (s.mask.count() as f64, d.mask.count() as f64);
        worst = worst.max((b - a).abs() / a);
    }
    assert!(worst < 0.3, "largest relative area change {worst}");
}

#[test]
fn elastic_identity_and_determinism() {
    let s = phantom(3, None);
    let still = elastic_deform(&s, ElasticParams { alpha: 0.0, sigma: 6.0 }, 5).unwrap();
    assert_eq!(still.image, s.image);
    assert_eq!(still.mask, s.mask);
    let p = ElasticParams::for_width(128);
    assert_eq!(elastic_deform(&s, p, 9).unwrap(), elastic_deform(&s, p, 9).unwrap());
    assert_ne!(elastic_deform(&s, p, 9).unwrap().image, elastic_deform(&s, p, 10).unwrap().image);
    assert!(elastic_deform(&s, ElasticParams { alpha: -1.0, sigma: 6.0 }, 0).is_err());
    assert!(elastic_deform(&s, ElasticParams { alpha: 1.0, sigma: 0.0 }, 0).is_err());
}

#[test]
fn phantoms_are_deterministic() {
    assert_eq!(phantom(17, None), phantom(17, None));
    assert_ne!(phantom(17, None).image, phantom(18, None).image);
    let cfg = PhantomConfig::default();
    assert_eq!(synth_dataset(&cfg, 4, 2).unwrap(), synth_dataset(&cfg, 4, 2).unwrap());
}

#[test]
fn two_plaques_sit_on_opposite_walls() {
    for seed in 0..20 {
        let s = phantom(seed, Some(2));
        let lc = label_components(&s.mask);
        assert_eq!(lc.num(), 2, "seed {seed}");
        let (h, w) = s.mask.dims();
        // Mean intensity of the row just outside each plaque's wall-side
        // edge, averaged over the plaque's columns: bright wall expected.
        let wall_side = |label: u32, from_top: bool| {
            let (mut sum, mut n) = (0.0, 0);
            for c in 0..w {
                let rows: Vec<usize> = (0..h).filter(|&r| lc.labels[r * w + c] == label).collect();
                let probe = match (rows.first(), rows.last()) {
                    (Some(&lo), _) if from_top && lo > 0 => lo - 1,
                    (_, Some(&hi)) if !from_top && hi + 1 < h => hi + 1,
                    _ => continue,
                };
                sum += s.image.get(probe, c) as f64;
                n += 1;
            }
            sum / n as f64
        };
        let first_row = |label: u32| lc.labels.iter().position(|&l| l == label).unwrap() / w;
        let (upper, lower) = if first_row(1) < first_row(2) { (1, 2) } else { (2, 1) };
        let (a, b) = (wall_side(upper, true), wall_side(lower, false));
        assert!(a > 0.6 && b > 0.6, "seed {seed}: wall-side intensities {a} and {b}");
        let ratio = lc.areas[0].max(lc.areas[1]) as f64 / lc.areas[0].min(lc.areas[1]) as f64;
        assert!(ratio <= 5.0);
    }
}

#[test]
fn phantom_foreground_fraction() {
    for seed in 0..50 {
        let s = phantom(seed, None);
        let frac = s.mask.count() as f64 / 128.0 / 128.0;
        assert!((0.02..=0.2).contains(&frac), "seed {seed}: {frac}");
        assert!((1..=2).contains(&label_components(&s.mask).num()));
    }
    let bad = PhantomConfig {
        plaque_count: Some(3),
        ..Default::default()
    };
    assert!(synth_phantom(&bad, "p").is_err());
}

#[test]
fn augmented_set_and_fold_sizes() {
    let cfg = PhantomConfig {
        height: 32,
        width: 32,
        ..Default::default()
    };
    let originals = synth_dataset(&cfg, 30, 1).unwrap();
    let aug = augment_all(&originals, &AugmentConfig::default(), 2).unwrap();
    assert_eq!(aug.len(), 180);
    assert!(aug.iter().all(|s| s.tag != AugTag::None));
    assert_eq!(aug[0].id, "p000_hflip");
    let with_orig = AugmentConfig {
        include_original: true,
        ..Default::default()
    };
    assert_eq!(augment_all(&originals, &with_orig, 2).unwrap().len(), 210);

    let ids: Vec<String> = originals.iter().map(|s| s.id.clone()).collect();
    let split = kfold(&ids, 10, 3).unwrap();
    for f in &split.folds {
        assert_eq!((f.test.len(), f.train.len()), (3, 27));
    }
    assert!(kfold(&ids, 1, 3).is_err());
    assert!(kfold(&ids, 31, 3).is_err());
}

#[test]
fn dataset_roundtrip() {
    let cfg = PhantomConfig {
        height: 32,
        width: 32,
        ..Default::default()
    };
    let originals = synth_dataset(&cfg, 3, 4).unwrap();
    let mut samples = originals.clone();
    samples.extend(augment_all(&originals, &AugmentConfig::default(), 5).unwrap());
    let seeds: Vec<u64> = (0..samples.len() as u64).collect();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &samples, &seeds).unwrap();
    let rows = read_manifest(dir.path()).unwrap();
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0].split, "original");
    assert_eq!(rows[5].split, "augmented");
    let back = read_dataset(dir.path()).unwrap();
    for ((row, s), (orig, seed)) in back.iter().zip(samples.iter().zip(&seeds)) {
        // Files hold 8-bit pixels; phantoms are already quantized.
        assert_eq!(s.image.to_u8(), orig.image.to_u8());
        assert_eq!(s.mask, orig.mask);
        if orig.tag == AugTag::None {
            assert_eq!(s, orig);
        }
        assert_eq!(row.seed, *seed);
        assert_eq!(row.tag, orig.tag);
    }
    let bad = vec![panet::data::Sample::new("../x", GrayImage::zeros(4, 4), BinaryMask::zeros(4, 4)).unwrap()];
    assert!(write_dataset(dir.path().join("b"), &bad, &[0]).is_err());
}
