//! Property tests for the invariants of each module.

use std::collections::BTreeSet;

use proptest::prelude::*;

use focusflow::eval::{aepe, lc_from_features};
use focusflow::io::{decode_flo, encode_flo};
use focusflow::keypoints::{random_points, GoodFeatures, KeyPoint, KeyPointSet};
use focusflow::losses::{alpha_weights, cpcl, mix_loss, photometric_loss, LossConfig, LossKind};
use focusflow::masks::{make_mask, MaskPattern};
use focusflow::{backward, FlowField, Init, Tensor};

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Uniform { low: lo, high: hi, seed }).unwrap()
}

fn field(h: usize, w: usize, seed: u64) -> FlowField<f64> {
    FlowField::new(uniform(&[2, h, w], -4.0, 4.0, seed)).unwrap()
}

/// 8-bit quantised noise: dyadic offsets and power-of-two contrast changes are
/// exact on it, so response ties resolve identically before and after.
fn quantised(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let noise = uniform(&[h, w], 0.0, 1.0, seed);
    Tensor::from_vec(&[h, w], noise.data().iter().map(|v| (v * 255.0).round() / 256.0).collect()).unwrap()
}

fn point_set(points: &[(f64, f64)], h: usize, w: usize) -> KeyPointSet {
    KeyPointSet::new(points.iter().map(|&(x, y)| KeyPoint { x, y, score: 1.0 }).collect(), h, w, "test")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // ---------------------------------------------------------------- tensor

    #[test]
    fn zero_kernel_convolution_is_zero(seed in 0u64..1000, cin in 1usize..4, cout in 1usize..4, stride in 1usize..3) {
        let x = uniform(&[cin, 7, 6], -5.0, 5.0, seed);
        let k = Tensor::<f64>::zeros(&[cout, cin, 3, 3]).unwrap();
        let y = x.conv2d(&k, stride, 1).unwrap();
        prop_assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in 0u64..1000) {
        let x = Tensor::param(&[3, 4], uniform(&[3, 4], -1.0, 1.0, seed).to_vec()).unwrap();
        let a = x.mul(&x).unwrap().sum();
        let b = x.relu().scale(3.0).sum();
        let ga = backward(&a).unwrap().wrt(&x);
        let gb = backward(&b).unwrap().wrt(&x);
        let gab = backward(&a.add(&b).unwrap()).unwrap().wrt(&x);
        for ((p, q), s) in ga.data().iter().zip(gb.data()).zip(gab.data()) {
            prop_assert!((p + q - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn seeded_creation_is_bitwise_reproducible(seed in any::<u64>()) {
        let a = Tensor::<f64>::create(&[5, 3], Init::Normal { mean: 0.0, std: 2.0, seed }).unwrap();
        let b = Tensor::<f64>::create(&[5, 3], Init::Normal { mean: 0.0, std: 2.0, seed }).unwrap();
        prop_assert!(a.bitwise_eq(&b));
    }

    // ---------------------------------------------------------------- key points

    #[test]
    fn detection_ignores_brightness_offset(seed in 0u64..1000, steps in -128i32..128) {
        let img = quantised(20, 24, seed);
        let shifted = img.add(&Tensor::full(&[20, 24], steps as f64 / 256.0).unwrap()).unwrap();
        let det = GoodFeatures::default();
        let (a, b) = (det.detect(&img).unwrap(), det.detect(&shifted).unwrap());
        prop_assert_eq!(
            a.points.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>(),
            b.points.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn contrast_scaling_scales_responses_and_keeps_points(seed in 0u64..1000, power in -3i32..4) {
        let c = 2f64.powi(power);
        let img = quantised(20, 24, seed);
        let det = GoodFeatures::default();
        let a = det.detect(&img).unwrap();
        let b = det.detect(&img.scale(c)).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert_eq!((p.x, p.y), (q.x, q.y));
            prop_assert_eq!(q.score, c * c * p.score);
        }
    }

    #[test]
    fn detections_respect_spacing_budget_and_bounds(seed in 0u64..1000, max_corners in 1usize..40, min_distance in 1.0f64..6.0) {
        let img = uniform(&[18, 22], 0.0, 1.0, seed);
        let det = GoodFeatures { max_corners, quality_level: 0.01, min_distance };
        let kps = det.detect(&img).unwrap();
        prop_assert!(kps.len() <= max_corners);
        for (i, p) in kps.points.iter().enumerate() {
            prop_assert!(p.x >= 0.0 && p.x < 22.0 && p.y >= 0.0 && p.y < 18.0);
            for q in &kps.points[..i] {
                prop_assert!(((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() >= min_distance);
            }
        }
    }

    // ---------------------------------------------------------------- masks

    #[test]
    fn point_mask_counts_distinct_pixels(seed in 0u64..1000, n in 1usize..12) {
        let (h, w) = (11, 13);
        let raw = uniform(&[n, 2], 0.0, 1.0, seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (raw.data()[2 * i] * 12.9, raw.data()[2 * i + 1] * 10.9)).collect();
        let kps = point_set(&pts, h, w);
        let distinct: BTreeSet<_> = kps.points.iter().map(|p| p.pixel(h, w)).collect();
        let m = make_mask(&kps, (h, w), MaskPattern::Point, 1, 1.0, None).unwrap();
        prop_assert!(m.values.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(m.values.data().iter().filter(|&&v| v == 1.0).count(), distinct.len());
        let r = make_mask(&kps, (h, w), MaskPattern::Reference, 1, 1.0, None).unwrap();
        prop_assert!(r.values.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gaussian_mask_peaks_at_points_and_vanishes_outside(seed in 0u64..1000, half in 0usize..4, sigma in 0.3f64..3.0) {
        let (h, w) = (14, 15);
        let kps = random_points(h, w, 3, seed).unwrap();
        let diameter = 2 * half + 1;
        let g = make_mask(&kps, (h, w), MaskPattern::NeighborG, diameter, sigma, None).unwrap();
        let e = make_mask(&kps, (h, w), MaskPattern::NeighborE, diameter, sigma, None).unwrap();
        for (gv, ev) in g.values.data().iter().zip(e.values.data()) {
            if *ev == 1.0 {
                prop_assert!(*gv > 0.0 && *gv <= 1.0);
            } else {
                prop_assert_eq!(*gv, 0.0);
            }
        }
        for p in &kps.points {
            let (r, c) = p.pixel(h, w);
            prop_assert_eq!(g.values.data()[r * w + c], 1.0);
        }
    }

    #[test]
    fn duplicating_key_points_changes_no_mask(seed in 0u64..1000) {
        let (h, w) = (12, 12);
        let kps = random_points(h, w, 4, seed).unwrap();
        let mut doubled = kps.points.clone();
        doubled.extend(kps.points.iter().copied());
        let dup = KeyPointSet::new(doubled, h, w, "test");
        let img = uniform(&[h, w], 0.0, 1.0, seed);
        for pattern in [MaskPattern::Point, MaskPattern::NeighborE, MaskPattern::NeighborG, MaskPattern::Context] {
            let a = make_mask(&kps, (h, w), pattern, 5, 1.0, Some(&img)).unwrap();
            let b = make_mask(&dup, (h, w), pattern, 5, 1.0, Some(&img)).unwrap();
            prop_assert!(a.values.bitwise_eq(&b.values));
        }
    }

    // ---------------------------------------------------------------- losses

    #[test]
    fn weights_vanish_beyond_the_neighbourhood(seed in 0u64..1000, half in 0usize..4, n in 1usize..5) {
        let (h, w) = (13, 12);
        let kps = random_points(h, w, n, seed).unwrap();
        let alpha = alpha_weights(&kps, (h, w), 2 * half + 1, 1.0).unwrap();
        prop_assert!(alpha.total() > 0.0);
        for r in 0..h {
            for c in 0..w {
                let v = alpha.values.data()[r * w + c];
                prop_assert!(v >= 0.0);
                let near = kps.points.iter().any(|p| {
                    let (pr, pc) = p.pixel(h, w);
                    ((r as f64 - pr as f64).powi(2) + (c as f64 - pc as f64).powi(2)).sqrt() <= half as f64
                });
                if !near {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn losses_are_nonnegative_and_zero_on_exact_fields(seed in 0u64..1000, p in 1u8..3) {
        let (h, w) = (6, 8);
        let (f, g) = (field(h, w, seed), field(h, w, seed + 1));
        let alpha = alpha_weights(&random_points(h, w, 3, seed).unwrap(), (h, w), 3, 1.0).unwrap();
        let cfg = LossConfig { kind: LossKind::Mix, lambda: 2.0, p, ..LossConfig::default() };
        prop_assert!(photometric_loss(&f, &g, p).unwrap().item().unwrap() >= 0.0);
        prop_assert!(cpcl(&f, &g, &alpha, p).unwrap().item().unwrap() >= 0.0);
        prop_assert!(mix_loss(&f, &g, &alpha, &cfg).unwrap().item().unwrap() >= 0.0);
        prop_assert_eq!(mix_loss(&f, &f, &alpha, &cfg).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn mix_loss_is_affine_in_lambda(seed in 0u64..1000, lambda in 0.0f64..50.0) {
        let (h, w) = (5, 7);
        let (f, g) = (field(h, w, seed), field(h, w, seed + 3));
        let alpha = alpha_weights(&random_points(h, w, 2, seed).unwrap(), (h, w), 3, 1.0).unwrap();
        let lp = photometric_loss(&f, &g, 1).unwrap().item().unwrap();
        let c = cpcl(&f, &g, &alpha, 1).unwrap().item().unwrap();
        let cfg = LossConfig { kind: LossKind::Mix, lambda, p: 1, ..LossConfig::default() };
        let mix = mix_loss(&f, &g, &alpha, &cfg).unwrap().item().unwrap();
        prop_assert!((mix - (lp + lambda * c)).abs() <= 1e-12 * mix.max(1.0));
    }

    #[test]
    fn weighted_term_has_no_gradient_off_support(seed in 0u64..1000) {
        let (h, w) = (9, 9);
        let gt = field(h, w, seed);
        let pred = FlowField::new(Tensor::param(&[2, h, w], uniform(&[2, h, w], -4.0, 4.0, seed + 9).to_vec()).unwrap()).unwrap();
        let alpha = alpha_weights(&random_points(h, w, 2, seed).unwrap(), (h, w), 3, 1.0).unwrap();
        let g = backward(&cpcl(&gt, &pred, &alpha, 2).unwrap()).unwrap().wrt(pred.tensor());
        for i in 0..h * w {
            if alpha.values.data()[i] == 0.0 {
                prop_assert_eq!(g.data()[i], 0.0);
                prop_assert_eq!(g.data()[h * w + i], 0.0);
            }
        }
    }

    // ---------------------------------------------------------------- evaluation

    #[test]
    fn full_frame_aepe_matches_the_two_norm_loss(seed in 0u64..1000) {
        let (f, g) = (field(7, 9, seed), field(7, 9, seed + 5));
        let ones = Tensor::full(&[7, 9], 1.0).unwrap();
        let a = aepe(&f, &g, None, Some(&ones)).unwrap();
        let l = photometric_loss(&f, &g, 2).unwrap().item().unwrap();
        prop_assert!((a - l).abs() <= 1e-12);
    }

    #[test]
    fn lc_is_invariant_to_rotation_and_permutation(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU) {
        let raw = uniform(&[16, 2], -3.0, 3.0, seed);
        let rows: Vec<Vec<f64>> = raw.data().chunks(2).map(|r| r.to_vec()).collect();
        let (key, rand) = (rows[..8].to_vec(), rows[8..].to_vec());
        let base = lc_from_features(&key, &rand, 2).unwrap();
        let (s, c) = angle.sin_cos();
        let rot = |v: &Vec<Vec<f64>>| v.iter().map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect::<Vec<_>>();
        let rotated = lc_from_features(&rot(&key), &rot(&rand), 2).unwrap();
        prop_assert!((base - rotated).abs() <= 1e-9);
        let mut shuffled = key.clone();
        shuffled.reverse();
        prop_assert!((base - lc_from_features(&shuffled, &rand, 2).unwrap()).abs() <= 1e-9);
    }

    // ---------------------------------------------------------------- files

    #[test]
    fn flo_round_trip_and_truncation(h in 1usize..9, w in 1usize..9, seed in 0u64..1000) {
        let f32s = uniform(&[2, h, w], -50.0, 50.0, seed).to_vec().into_iter().map(|v| v as f32).collect();
        let flow = FlowField::new(Tensor::<f32>::from_vec(&[2, h, w], f32s).unwrap()).unwrap();
        let bytes = encode_flo(&flow).unwrap();
        prop_assert!(decode_flo(&bytes).unwrap().tensor().bitwise_eq(flow.tensor()));
        for n in 0..bytes.len() {
            prop_assert!(decode_flo(&bytes[..n]).is_err());
        }
    }
}
