use std::time::Instant;

use clutterkit::fusion::gradcheck::{fuse_check_with, grad_check, ComposedGraph};
use clutterkit::fusion::ops::multiply_broadcast;
use clutterkit::fusion::{
    concat, fuse_check, fuse_level, fuse_pyramid, resize_bilinear, toy_backbone, ConfidenceEstimator, FeaturePyramid,
    FusionModule, Tensor,
};
use clutterkit::fusion::model::{PYRAMID_CHANNELS, PYRAMID_STRIDES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::random_uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn pyramid(h: usize, w: usize, seed: u64) -> FeaturePyramid {
    FeaturePyramid {
        levels: PYRAMID_STRIDES
            .iter()
            .zip(PYRAMID_CHANNELS)
            .enumerate()
            .map(|(i, (&s, c))| random(&[c, h / s, w / s], seed + i as u64))
            .collect(),
    }
}

#[test]
fn fuse_check_passes_at_both_sizes() {
    let start = Instant::now();
    for (h, w) in [(8, 8), (16, 16)] {
        let r = fuse_check(h, w, 7, 1e-3).unwrap();
        for op in r.ops.iter().chain([&r.composed]) {
            assert!(op.max_rel_error < 1e-3, "{} at {h}x{w}: {}", op.op, op.max_rel_error);
            assert!(op.checked > 0);
        }
        assert!(r.composed.checked > r.composed.excluded);
    }
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn fuse_check_with_random_probe_and_full_coverage() {
    let r = fuse_check_with(8, 8, 3, 1e-3, Some(5), None).unwrap();
    assert!(r.max_rel_error < 1e-3, "{}", r.max_rel_error);
    // Every entry of every tensor was either checked or excluded.
    for p in r.ops.iter().chain([&r.composed]).flat_map(|o| &o.params) {
        assert_eq!(p.checked + p.excluded, p.size, "{}", p.name);
    }
}

#[test]
fn composed_graph_is_deterministic() {
    let g = ComposedGraph::random(8, 8, 4, 2, None).unwrap();
    let a = grad_check(&g, 1e-3, Some(16), 1).unwrap();
    let b = grad_check(&g, 1e-3, Some(16), 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn confidence_shapes_and_range() {
    let est = ConfidenceEstimator::default_random(4);
    for (h, w) in [(8, 8), (17, 23)] {
        let d = random(&[1, h, w], 1).map(|v| 0.5 + 0.2 * v);
        let v = Tensor::filled(&[1, h, w], 1.0);
        assert_eq!(est.estimate(&d, &v).unwrap().shape(), &[1, h, w]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let scale = 10f64.powi(rng.random_range(-2..3));
        let d = random(&[1, h, w], i).map(|v| v * scale);
        let v = random(&[1, h, w], 1000 + i).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let c = ConfidenceEstimator::default_random(i).estimate(&d, &v).unwrap();
        // Large inputs can saturate the sigmoid to exactly 0 or 1 in f64.
        assert!(c.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        if scale <= 1.0 {
            assert!(c.data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}

#[test]
fn forward_is_bit_stable() {
    let est = ConfidenceEstimator::default_random(9);
    let d = random(&[1, 16, 16], 1);
    let v = Tensor::filled(&[1, 16, 16], 1.0);
    let a = est.estimate(&d, &v).unwrap();
    let b = est.estimate(&d, &v).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn confidence_one_is_plain_concat_fusion() {
    let fm = FusionModule::random(&[8], 1);
    let rgb = random(&[8, 6, 5], 2);
    let depth = random(&[8, 6, 5], 3);
    let out = fuse_level(&fm.levels[0], &rgb, &depth, &Tensor::filled(&[1, 24, 20], 1.0)).unwrap();
    let plain = fm.levels[0].forward(&concat(&rgb, &depth).unwrap()).unwrap();
    assert_eq!(out, plain);
}

#[test]
fn confidence_zero_suppresses_depth() {
    let fm = FusionModule::random(&[8], 1);
    let rgb = random(&[8, 6, 5], 2);
    let zero = Tensor::zeros(&[1, 24, 20]);
    let a = fuse_level(&fm.levels[0], &rgb, &random(&[8, 6, 5], 3), &zero).unwrap();
    let b = fuse_level(&fm.levels[0], &rgb, &random(&[8, 6, 5], 4), &zero).unwrap();
    assert_eq!(a, b);
    let reference = fm.levels[0].forward(&concat(&rgb, &Tensor::zeros(&[8, 6, 5])).unwrap()).unwrap();
    assert_eq!(a, reference);
}

#[test]
fn attention_is_linear_in_depth_features() {
    let conf = resize_bilinear(&random(&[1, 12, 10], 5).map(|v| 0.5 + 0.5 * v), 6, 5).unwrap();
    let depth = random(&[8, 6, 5], 3);
    let a = multiply_broadcast(&depth, &conf).unwrap();
    let b = multiply_broadcast(&depth.map(|v| 2.0 * v), &conf).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn attention_locality() {
    // After resizing to 4x4 the confidence is zero on columns 0 and 1.
    let conf = Tensor::from_fn3(1, 8, 8, |_, _, x| if x < 4 { 0.0 } else { 0.7 });
    let fm = FusionModule::random(&[4], 2);
    let rgb = random(&[4, 4, 4], 1);
    let base = random(&[4, 4, 4], 2);
    let shifted = |cols: std::ops::Range<usize>| {
        Tensor::from_fn3(4, 4, 4, |c, y, x| base.at3(c, y, x) + if cols.contains(&x) { 3.0 } else { 0.0 })
    };
    let a = fuse_level(&fm.levels[0], &rgb, &base, &conf).unwrap();
    let left = fuse_level(&fm.levels[0], &rgb, &shifted(0..2), &conf).unwrap();
    assert_eq!(a, left);
    let right = fuse_level(&fm.levels[0], &rgb, &shifted(2..4), &conf).unwrap();
    for c in 0..4 {
        for y in 0..4 {
            assert_eq!(a.at3(c, y, 0), right.at3(c, y, 0));
            assert_ne!(a.at3(c, y, 3), right.at3(c, y, 3));
        }
    }
}

#[test]
fn pyramid_fusion_halves_channels_and_keeps_shapes() {
    let (h, w) = (64, 96);
    let fm = FusionModule::random(&PYRAMID_CHANNELS, 3);
    for (l, c) in fm.levels.iter().zip(PYRAMID_CHANNELS) {
        assert_eq!(l.in_channels(), 2 * c);
        assert_eq!(l.out_channels(), l.in_channels() / 2);
    }
    let rgb = pyramid(h, w, 10);
    let depth = pyramid(h, w, 20);
    let conf = random(&[1, h, w], 1).map(|v| 0.5 + 0.4 * v);
    let out = fuse_pyramid(&fm, &rgb, &depth, &conf).unwrap();
    assert_eq!(out.shapes(), rgb.shapes());

    let zero = Tensor::zeros(&[1, h, w]);
    let a = fuse_pyramid(&fm, &rgb, &depth, &zero).unwrap();
    let b = fuse_pyramid(&fm, &rgb, &pyramid(h, w, 30), &zero).unwrap();
    assert_eq!(a, b);

    let mut perturbed = depth.clone();
    perturbed.levels[1] = perturbed.levels[1].map(|v| v + 0.25);
    let p = fuse_pyramid(&fm, &rgb, &perturbed, &conf).unwrap();
    for i in 0..4 {
        assert_eq!(p.levels[i] == out.levels[i], i != 1, "level {i}");
    }

    let short = FeaturePyramid { levels: rgb.levels[..3].to_vec() };
    assert!(fuse_pyramid(&fm, &short, &depth, &conf).is_err());
}

#[test]
fn backbone_is_seeded_and_input_sensitive() {
    let x = random(&[3, 64, 64], 1);
    let a = toy_backbone(&x, 5).unwrap();
    assert_eq!(a, toy_backbone(&x, 5).unwrap());
    let dims: Vec<_> = a.levels.iter().map(|t| t.shape()[1]).collect();
    assert_eq!(dims, vec![16, 8, 4, 2]);
    let b = toy_backbone(&random(&[3, 64, 64], 2), 5).unwrap();
    assert_ne!(a.levels[0], b.levels[0]);
    let depth = toy_backbone(&random(&[1, 64, 64], 3), 6).unwrap();
    let fm = FusionModule::random(&PYRAMID_CHANNELS, 1);
    let conf = ConfidenceEstimator::default_random(1)
        .estimate(&random(&[1, 64, 64], 4), &Tensor::filled(&[1, 64, 64], 1.0))
        .unwrap();
    assert_eq!(fuse_pyramid(&fm, &a, &depth, &conf).unwrap().shapes(), a.shapes());
}
