mod common;

use std::collections::BTreeMap;

use focusflow::keypoints::{min_eigen_response, GoodFeatures};
use focusflow::synth::{gen_dataset, gen_sample, SceneConfig};

#[test]
fn noise_free_samples_pass_the_inverse_warp_oracle() {
    let cfg = SceneConfig::default();
    for seed in 0..100u64 {
        let s = gen_sample(&cfg, seed).unwrap();
        let (worst, invalid_consistent, valid) = common::warp_residual(&s);
        assert!(worst <= 1e-6, "seed {seed}: residual {worst}");
        // The valid mask is exactly the set of warp-consistent pixels.
        assert_eq!(invalid_consistent, 0, "seed {seed}");
        assert!(valid > 0);
    }
}

#[test]
fn displacement_histogram_is_symmetric() {
    let ds = gen_dataset(&SceneConfig::default(), 500, 2024).unwrap();
    for channel in 0..2 {
        let mut hist: BTreeMap<i64, f64> = BTreeMap::new();
        let mut total = 0.0;
        for s in &ds {
            let n = s.dims().0 * s.dims().1;
            for (i, &v) in s.valid.data().iter().enumerate() {
                if v == 1.0 {
                    *hist.entry(s.gt_flow.tensor().data()[channel * n + i] as i64).or_default() += 1.0;
                    total += 1.0;
                }
            }
        }
        for (&d, &count) in &hist {
            let mirrored = hist.get(&-d).copied().unwrap_or(0.0);
            let diff = (count - mirrored).abs() / total;
            assert!(diff <= 0.05, "channel {channel} bin {d}: {count} vs {mirrored} ({diff})");
        }
    }
}

#[test]
fn sprites_carry_detectable_corners() {
    let cfg = SceneConfig::default();
    for seed in 0..20u64 {
        let s = gen_sample(&cfg, seed).unwrap();
        let kps = GoodFeatures::default().detect(&s.i1).unwrap();
        assert!(kps.len() >= 4, "seed {seed}: only {} key points", kps.len());
        // Every sprite carries corner energy somewhere inside its in-frame box.
        let (h, w) = s.dims();
        let response = min_eigen_response(&s.i1).unwrap();
        for (k, sp) in s.layout.sprites.iter().enumerate() {
            let rows = sp.top.max(0)..(sp.top + sp.height as i64).min(h as i64);
            let cols = sp.left.max(0)..(sp.left + sp.width as i64).min(w as i64);
            if rows.is_empty() || cols.is_empty() {
                continue;
            }
            let energy: f64 = rows
                .flat_map(|r| cols.clone().map(move |c| (r as usize) * w + c as usize))
                .map(|i| response[i])
                .sum();
            assert!(energy > 0.0, "seed {seed}: sprite {k} has no corner energy");
        }
    }
}
