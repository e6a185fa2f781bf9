//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use focusflow::synth::Sample;

/// Largest `|i1(p) - i2(p + flow(p))|` over pixels marked valid, and the
/// number of invalid pixels that nevertheless satisfy the warp exactly.
pub fn warp_residual(s: &Sample) -> (f64, usize, usize) {
    let (h, w) = s.dims();
    let (i1, i2, valid) = (s.i1.data(), s.i2.data(), s.valid.data());
    let mut worst: f64 = 0.0;
    let mut invalid_consistent = 0;
    let mut valid_count = 0;
    for r in 0..h {
        for c in 0..w {
            let (u, v) = s.gt_flow.at(r, c);
            let (tr, tc) = (r as i64 + v.round() as i64, c as i64 + u.round() as i64);
            let inside = tr >= 0 && tc >= 0 && tr < h as i64 && tc < w as i64;
            let i = r * w + c;
            if valid[i] == 1.0 {
                valid_count += 1;
                assert!(inside, "valid pixel ({r},{c}) maps outside the frame");
                worst = worst.max((i1[i] - i2[tr as usize * w + tc as usize]).abs());
            } else if inside && i1[i] == i2[tr as usize * w + tc as usize] {
                invalid_consistent += 1;
            }
        }
    }
    (worst, invalid_consistent, valid_count)
}
