//! Sweep one ablation axis at a small budget and print per-arm medians.
//!
//! `cargo run --release --example ablate [axis] [seeds] [iterations]`
//! where axis is one of pattern, loss, lambda, mu, fusion, init.

use focusflow::ablation::{run_ablation, AblationConfig, Axis};
use focusflow::eval::EvalConfig;
use focusflow::model::ModelSpec;
use focusflow::synth::SceneConfig;
use focusflow::train::TrainConfig;

fn main() -> focusflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: Axis = args.next().unwrap_or_else(|| "pattern".into()).parse()?;
    let seeds: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);

    let work = std::path::PathBuf::from("runs/example-ablate");
    let cfg = AblationConfig {
        axis,
        arms: vec![],
        first_seed: 1,
        seeds,
        scene: SceneConfig::default(),
        train_samples: 500,
        val_samples: 16,
        spec: ModelSpec::default(),
        train: TrainConfig { iterations, ..TrainConfig::default() },
        eval: EvalConfig::default(),
        work_dir: Some(work.join("backbones")),
    };
    let result = run_ablation(&cfg, |r| {
        println!("{:<16} seed {}: aepe_all {:.4} aepe_kp {:.4} l_c {:.4}", r.variant, r.seed, r.aepe_all, r.aepe_kp, r.l_c)
    })?;
    println!();
    print!("{}", result.summary_csv());
    let (rows, medians) = result.write(&work)?;
    println!("rows -> {}\nmedians -> {}", rows.display(), medians.display());
    Ok(())
}
