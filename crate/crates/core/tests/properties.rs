use proptest::prelude::*;

use panet::autograd::Tape;
use panet::data::{augment, hflip, kfold, rot180, vflip, AugmentConfig, GrayImage, Sample};
use panet::metrics::{boundary, evaluate, mhd};
use panet::nn::upsample2x;
use panet::postprocess::{fill_holes, label_components, postprocess, retained_ranks, PostprocessConfig};
use panet::{BinaryMask, Tensor};

fn mask_strategy(max_side: usize) -> impl Strategy<Value = BinaryMask> {
    (2..=max_side, 2..=max_side, 0.05f64..0.95).prop_flat_map(|(h, w, p)| {
        prop::collection::vec(prop::bool::weighted(p), h * w)
            .prop_map(move |bits| BinaryMask::from_fn(h, w, |r, c| bits[r * w + c]))
    })
}

fn pair_strategy(max_side: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(h, w)| {
        let one = move || {
            (0.05f64..0.95).prop_flat_map(move |p| {
                prop::collection::vec(prop::bool::weighted(p), h * w)
                    .prop_map(move |bits| BinaryMask::from_fn(h, w, |r, c| bits[r * w + c]))
            })
        };
        (one(), one())
    })
}

fn sample_strategy() -> impl Strategy<Value = Sample> {
    (4usize..20, 4usize..20).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0u8..=255, h * w),
            prop::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(px, bits)| {
                let img = GrayImage::from_u8(h, w, &px).unwrap();
                let mask = BinaryMask::from_fn(h, w, |r, c| bits[r * w + c]);
                Sample::new("s", img, mask).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dice_iou_identity((a, b) in pair_strategy(24)) {
        let r = evaluate(&a, &b).unwrap();
        if !r.degenerate {
            prop_assert!((r.dice - 2.0 * r.iou / (1.0 + r.iou)).abs() < 1e-9);
        }
        prop_assert!((0.0..=1.0).contains(&r.dice) && (0.0..=1.0).contains(&r.acc));
    }

    #[test]
    fn mhd_symmetric_and_zero_on_self((a, b) in pair_strategy(20)) {
        let (ba, bb) = (boundary(&a), boundary(&b));
        if !ba.is_empty() && !bb.is_empty() {
            prop_assert_eq!(mhd(&ba, &bb).unwrap(), mhd(&bb, &ba).unwrap());
            prop_assert_eq!(mhd(&ba, &ba).unwrap(), 0.0);
        }
    }

    #[test]
    fn flips_preserve_overlap_metrics((a, b) in pair_strategy(16)) {
        let base = evaluate(&a, &b).unwrap();
        let h = evaluate(&a.flip_horizontal(), &b.flip_horizontal()).unwrap();
        let v = evaluate(&a.flip_vertical(), &b.flip_vertical()).unwrap();
        let r = evaluate(&a.flip_horizontal().flip_vertical(), &b.flip_horizontal().flip_vertical()).unwrap();
        for t in [h, v, r] {
            prop_assert_eq!((t.dice, t.iou, t.acc), (base.dice, base.iou, base.acc));
        }
    }

    #[test]
    fn postprocess_invariants(m in mask_strategy(32)) {
        let cfg = PostprocessConfig::default();
        let out = postprocess(&m, &cfg);
        prop_assert!(label_components(&out.mask).num() <= 2);
        prop_assert!(out.mask.is_subset_of(&fill_holes(&m)));
        prop_assert!(out.retained_areas.len() <= 2);
        prop_assert_eq!(out.mask.dims(), m.dims());
        // Idempotent on its own output's component count.
        prop_assert!(label_components(&postprocess(&out.mask, &cfg).mask).num() <= 2);
    }

    #[test]
    fn retained_rank_rule(mut areas in prop::collection::vec(1usize..500, 0..6), ratio in 1.5f64..8.0) {
        areas.sort_unstable_by(|a, b| b.cmp(a));
        let keep = retained_ranks(&areas, ratio);
        match areas.len() {
            0 => prop_assert!(keep.is_empty()),
            1 => prop_assert_eq!(keep, vec![0]),
            _ => {
                let both = areas[0] as f64 <= ratio * areas[1] as f64;
                prop_assert_eq!(keep, if both { vec![0, 1] } else { vec![0] });
            }
        }
    }

    #[test]
    fn augment_preserves_shape_and_binarity(s in sample_strategy(), seed in any::<u64>()) {
        let out = augment(&s, &AugmentConfig::default(), seed).unwrap();
        prop_assert_eq!(out.len(), 6);
        for t in &out {
            prop_assert_eq!(t.image.dims(), s.image.dims());
            prop_assert_eq!(t.mask.dims(), s.mask.dims());
            prop_assert!(t.mask.data().iter().all(|&v| v <= 1));
            prop_assert!(t.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn flip_algebra(s in sample_strategy()) {
        let hh = hflip(&hflip(&s));
        prop_assert_eq!(&hh.image, &s.image);
        prop_assert_eq!(&hh.mask, &s.mask);
        let vv = vflip(&vflip(&s));
        prop_assert_eq!(&vv.image, &s.image);
        let hv = hflip(&vflip(&s));
        let r = rot180(&s);
        prop_assert_eq!(&hv.image, &r.image);
        prop_assert_eq!(&hv.mask, &r.mask);
    }

    #[test]
    fn kfold_partitions(n in 2usize..60, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let split = kfold(&ids, k, seed).unwrap();
        prop_assert_eq!(split.folds.len(), k);
        let mut seen: Vec<String> = split.folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort();
        let mut all = ids.clone();
        all.sort();
        prop_assert_eq!(seen, all);
        for f in &split.folds {
            prop_assert!(f.test.len() == n / k || f.test.len() == n / k + 1);
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            prop_assert!(f.train.iter().all(|id| !f.test.contains(id)));
        }
        prop_assert_eq!(kfold(&ids, k, seed).unwrap(), split);
    }

    #[test]
    fn softmax_channels_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 2 * 3 * 4 * 5)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 3, 4, 5], vals).unwrap());
        let p = tape.softmax_channels(x).unwrap();
        let d = tape.value(p).data();
        for b in 0..2 {
            for i in 0..20 {
                let s: f64 = (0..3).map(|c| d[(b * 3 + c) * 20 + i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_undoes_nearest_upsampling(vals in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 4 * 4)) {
        // A transposed conv with weight δ(cin, cout) on every tap replicates
        // each pixel into its 2×2 block; pooling that block returns it.
        let mut tape = Tape::new();
        let x = Tensor::new(&[2, 3, 4, 4], vals).unwrap();
        let xn = tape.constant(x.clone());
        let w = tape.constant(Tensor::from_fn(&[3, 3, 2, 2], |i| ((i / 4) / 3 == (i / 4) % 3) as u8 as f64).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]).unwrap());
        let up = upsample2x(&mut tape, xn, w, b).unwrap();
        prop_assert_eq!(tape.shape(up), &[2, 3, 8, 8]);
        let back = tape.maxpool2d(up).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }
}

#[test]
fn table_rule_cases() {
    assert_eq!(retained_ranks(&[100, 30], 5.0), vec![0, 1]);
    assert_eq!(retained_ranks(&[100, 10], 5.0), vec![0]);
    assert_eq!(retained_ranks(&[50, 10], 5.0), vec![0, 1]);
    assert_eq!(retained_ranks(&[100, 30, 5], 5.0).len(), 2);
    assert_eq!(retained_ranks(&[42], 5.0), vec![0]);
}
