//! Generate a few synthetic frame pairs and write them to disk.
//!
//! `cargo run --release --example generate_data [out_dir] [count]`

use focusflow::io::{write_flo, write_pgm};
use focusflow::keypoints::GoodFeatures;
use focusflow::synth::{FlowDataset, SceneConfig, SyntheticSet};

fn main() -> focusflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "runs/example-data".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    std::fs::create_dir_all(&out)?;

    let (set, _) = SyntheticSet::split(&SceneConfig::default(), 7, count, 1)?;
    let detector = GoodFeatures::default();
    for i in 0..set.len() {
        let s = set.sample(i)?;
        let (h, w) = s.dims();
        let valid = s.valid.data().iter().filter(|&&v| v > 0.5).count();
        let kps = detector.detect(&s.i1)?;
        println!(
            "sample {i}: {h}x{w}, {} sprites, {:.1}% valid flow, {} key points",
            s.layout.sprites.len(),
            100.0 * valid as f64 / (h * w) as f64,
            kps.len()
        );
        write_pgm(&s.i1, out.join(format!("{i:03}_i1.pgm")))?;
        write_pgm(&s.i2, out.join(format!("{i:03}_i2.pgm")))?;
        write_flo(&s.gt_flow, out.join(format!("{i:03}_flow.flo")))?;
        write_pgm(&s.valid, out.join(format!("{i:03}_valid.pgm")))?;
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}
