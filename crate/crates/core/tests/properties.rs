//! Property tests for invariants of the losses, metrics, schedule, data
//! order, augmentation, depth IO and configuration hashing.

use proptest::prelude::*;
use tch::Tensor;

use bronchodepth::config::ExperimentConfig;
use bronchodepth::evalmetrics::{abs_rel, delta_accuracy, rmse, MetricAccumulator};
use bronchodepth::losses::{berhu, gradient_loss};
use bronchodepth::pipeline::augment::{AugmentConfig, Augmentation};
use bronchodepth::pipeline::order::{permutation, BatchStream};
use bronchodepth::pipeline::schedule::{milestones, milestones_valid, step_lr};
use bronchodepth::synthdata::{read_pfm, write_pfm, DepthMap};

fn depth_map() -> impl Strategy<Value = (u32, u32, Vec<f32>)> {
    (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(0.5f32..200.0, (w * h) as usize),
        )
    })
}

fn map_pair() -> impl Strategy<Value = (DepthMap, DepthMap)> {
    depth_map().prop_flat_map(|(w, h, gt)| {
        let n = gt.len();
        (
            Just(w),
            Just(h),
            Just(gt),
            prop::collection::vec(0.5f32..200.0, n),
        )
            .prop_map(|(w, h, gt, pred)| {
                (
                    DepthMap::new(w, h, gt).unwrap(),
                    DepthMap::new(w, h, pred).unwrap(),
                )
            })
    })
}

fn tensor(values: &[f64], shape: &[i64]) -> Tensor {
    Tensor::from_slice(values).view(shape)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_accuracy_is_monotone_in_threshold((gt, pred) in map_pair(), a in 1.0f64..3.0, b in 1.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(delta_accuracy(&gt, &pred, lo).unwrap() <= delta_accuracy(&gt, &pred, hi).unwrap());
    }

    #[test]
    fn delta_accuracy_is_symmetric((gt, pred) in map_pair(), tau in 1.0f64..3.0) {
        prop_assert_eq!(delta_accuracy(&gt, &pred, tau).unwrap(), delta_accuracy(&pred, &gt, tau).unwrap());
    }

    #[test]
    fn identical_maps_score_perfectly((gt, _) in map_pair()) {
        prop_assert_eq!(abs_rel(&gt, &gt).unwrap(), 0.0);
        prop_assert_eq!(rmse(&gt, &gt).unwrap(), 0.0);
        prop_assert_eq!(delta_accuracy(&gt, &gt, 1.25).unwrap(), 1.0);
    }

    #[test]
    fn errors_vanish_only_for_identical_maps((gt, pred) in map_pair()) {
        let same = gt.data() == pred.data();
        prop_assert_eq!(abs_rel(&gt, &pred).unwrap() == 0.0, same);
        prop_assert_eq!(rmse(&gt, &pred).unwrap() == 0.0, same);
    }

    #[test]
    fn aggregation_ignores_frame_order(frames in prop::collection::vec(map_pair(), 1..6), seed in any::<u64>()) {
        let mut forward = MetricAccumulator::new();
        for (g, p) in &frames {
            forward.add(g, p).unwrap();
        }
        let order = permutation(frames.len(), seed, "frames", 0);
        let mut shuffled = MetricAccumulator::new();
        for i in order {
            shuffled.add(&frames[i].0, &frames[i].1).unwrap();
        }
        prop_assert_eq!(forward.report().unwrap(), shuffled.report().unwrap());
    }

    #[test]
    fn berhu_dominates_l1_and_grows(e in prop::collection::vec(0.0f64..50.0, 1..32), c in 0.01f64..20.0) {
        let x = tensor(&e, &[e.len() as i64]);
        let y: Vec<f64> = Vec::try_from(berhu(&x, c)).unwrap();
        let mut pairs: Vec<(f64, f64)> = e.iter().copied().zip(y.iter().copied()).collect();
        for &(err, val) in &pairs {
            prop_assert!(val >= err - 1e-12);
            if err <= c {
                prop_assert_eq!(val, err);
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn gradient_loss_is_scale_invariant_and_zero_on_self(
        values in prop::collection::vec(0.5f64..100.0, 2 * 10 * 10),
        s in 0.1f64..20.0,
        h in prop::sample::select(vec![1i64, 2, 4, 8]),
    ) {
        let d = tensor(&values, &[2, 1, 10, 10]);
        prop_assert_eq!(gradient_loss(&d, &d, h).unwrap().double_value(&[]), 0.0);
        prop_assert!(gradient_loss(&d, &(&d * s), h).unwrap().double_value(&[]) < 1e-6);
    }

    #[test]
    fn gradient_loss_is_symmetric(
        a in prop::collection::vec(0.5f64..100.0, 64),
        b in prop::collection::vec(0.5f64..100.0, 64),
    ) {
        let (a, b) = (tensor(&a, &[1, 1, 8, 8]), tensor(&b, &[1, 1, 8, 8]));
        let ab = gradient_loss(&a, &b, 1).unwrap().double_value(&[]);
        let ba = gradient_loss(&b, &a, 1).unwrap().double_value(&[]);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn schedule_is_a_two_step_decay(n in 5u64..100_000, base in 1e-7f64..1.0) {
        let (a, b) = milestones(n);
        prop_assert!(milestones_valid(n));
        prop_assert!(a < b);
        for it in [0, a - 1, a, b - 1, b, n - 1] {
            let lr = step_lr(base, it, n);
            let expect = if it < a { base } else if it < b { base / 2.0 } else { base / 4.0 };
            prop_assert_eq!(lr, expect);
        }
    }

    #[test]
    fn permutations_are_complete_and_reproducible(n in 0usize..300, seed in any::<u64>(), epoch in 0u64..50) {
        let p = permutation(n, seed, "train", epoch);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(p, permutation(n, seed, "train", epoch));
    }

    #[test]
    fn batch_stream_is_position_addressable(n in 1usize..40, batch in 1usize..9, seed in any::<u64>(), it in 0u64..200) {
        let mut sequential = BatchStream::new(n, batch, seed, "s");
        let mut expected = Vec::new();
        for i in 0..=it {
            expected = sequential.batch(i);
        }
        let mut direct = BatchStream::new(n, batch, seed, "s");
        prop_assert_eq!(direct.batch(it), expected.clone());
        prop_assert_eq!(expected.len(), batch);
        prop_assert!(expected.iter().all(|&i| i < n));
    }

    #[test]
    fn jittered_colour_stays_in_range(pixels in prop::collection::vec(0.0f32..=1.0, 3 * 4 * 5), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let aug = Augmentation::sample(&AugmentConfig::default(), &mut rng);
        let img = Tensor::from_slice(&pixels).view([3, 4, 5]);
        let out = aug.apply_color(&img);
        prop_assert_eq!(out.size(), vec![3, 4, 5]);
        prop_assert!(out.min().double_value(&[]) >= 0.0);
        prop_assert!(out.max().double_value(&[]) <= 1.0);
    }

    #[test]
    fn flips_match_depth_map_mirroring((w, h, values) in depth_map(), hflip in any::<bool>(), vflip in any::<bool>()) {
        let map = DepthMap::new(w, h, values.clone()).unwrap();
        let aug = Augmentation { hflip, vflip, jitter: None };
        let t = Tensor::from_slice(&values).view([1, i64::from(h), i64::from(w)]);
        let flipped: Vec<f32> = Vec::try_from(aug.apply_depth(&t).flatten(0, -1)).unwrap();
        let mut expect = map.clone();
        if hflip {
            expect = expect.flip_horizontal();
        }
        if vflip {
            expect = expect.flip_vertical();
        }
        prop_assert_eq!(flipped.as_slice(), expect.data());
        let twice = aug.apply_depth(&aug.apply_depth(&t));
        prop_assert!(twice.equal(&t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pfm_round_trip_is_bit_exact((w, h, _) in depth_map(), bits in prop::collection::vec(any::<u32>(), 144)) {
        let data: Vec<f32> = bits
            .iter()
            .take((w * h) as usize)
            .map(|&b| f32::from_bits(b))
            .map(|v| if v.is_finite() { v } else { 1.5 })
            .collect();
        let map = DepthMap::new(w, h, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        prop_assert_eq!((back.width(), back.height()), (w, h));
        let a: Vec<u32> = map.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn config_hash_ignores_key_order_and_whitespace(lr in 1e-6f64..1.0, seed in any::<u32>(), batch in 1usize..128) {
        let forward = format!(
            r#"{{"supervised": {{"lr": {lr:e}, "batch_size": {batch}, "seed": {seed}}}, "adapt": {{"seed": {seed}}}}}"#
        );
        let backward = format!(
            "{{\n  \"adapt\":{{\"seed\":{seed}}},\n  \"supervised\":{{\"seed\":{seed},\"batch_size\":{batch},\"lr\":{lr:e}}}\n}}"
        );
        let a = ExperimentConfig::from_json(&forward).unwrap();
        let b = ExperimentConfig::from_json(&backward).unwrap();
        prop_assert_eq!(a.config_hash(), b.config_hash());
        let reparsed = ExperimentConfig::from_json(&a.to_pretty_json()).unwrap();
        prop_assert_eq!(reparsed.config_hash(), a.config_hash());
        let other = ExperimentConfig::from_json(&forward.replace(&format!("\"batch_size\": {batch}"), &format!("\"batch_size\": {}", batch + 1))).unwrap();
        prop_assert_ne!(other.config_hash(), a.config_hash());
    }
}

#[test]
fn depth_maps_need_matching_dimensions() {
    assert!(DepthMap::new(3, 2, vec![1.0; 5]).is_err());
}
