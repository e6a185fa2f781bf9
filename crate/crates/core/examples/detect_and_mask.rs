//! Detect key points on a synthetic frame and build every condition mask.
//!
//! `cargo run --release --example detect_and_mask [out_dir]`

use focusflow::io::write_pgm;
use focusflow::keypoints::GoodFeatures;
use focusflow::losses::alpha_weights;
use focusflow::masks::{make_mask, MaskPattern};
use focusflow::synth::{gen_sample, SceneConfig};

fn main() -> focusflow::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example-masks".into()));
    std::fs::create_dir_all(&out)?;

    let s = gen_sample(&SceneConfig::default(), 3)?;
    let dims = s.dims();
    let kps = GoodFeatures::default().detect(&s.i1)?;
    println!("{} key points; strongest five:", kps.len());
    for p in kps.points.iter().take(5) {
        println!("  (x {:.0}, y {:.0}) score {:.4}", p.x, p.y, p.score);
    }

    let patterns = [
        MaskPattern::Point,
        MaskPattern::NeighborE,
        MaskPattern::NeighborG,
        MaskPattern::Context,
        MaskPattern::Frame,
        MaskPattern::Reference,
    ];
    for pattern in patterns {
        let mask = make_mask(&kps, dims, pattern, 5, 1.0, Some(&s.i1))?;
        let lit = mask.values.data().iter().filter(|&&v| v > 0.0).count();
        println!("{pattern:>10}: {lit} nonzero pixels");
        write_pgm(&mask.values, out.join(format!("mask_{pattern}.pgm")))?;
    }

    // Loss weights concentrate supervision on the same neighbourhoods.
    let alpha = alpha_weights(&kps, dims, 5, 2.0 / 3.0)?;
    let support = alpha.values.data().iter().filter(|&&v| v > 0.0).count();
    println!("loss weights: {support} supported pixels, total weight {:.3}", alpha.total());
    println!("masks written to {}", out.display());
    Ok(())
}
