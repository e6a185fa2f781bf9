//! Train a small model on synthetic data and print the loss curve.
//!
//! `cargo run --release --example train_model [iterations] [out.ckpt]`

use focusflow::io::save_checkpoint;
use focusflow::model::ModelSpec;
use focusflow::synth::{FlowDataset, SceneConfig, SyntheticSet};
use focusflow::train::{apply_init_mode, train, InitMode, TrainConfig};

fn main() -> focusflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "runs/example-model.ckpt".into()));

    let (train_set, val_set) = SyntheticSet::split(&SceneConfig::default(), 1, 1000, 16)?;
    let cfg = TrainConfig { iterations, log_every: (iterations / 10).max(1), eval_samples: 8, seed: 1, ..TrainConfig::default() };
    let (net, frozen) = apply_init_mode(&ModelSpec::default(), InitMode::Scratch, cfg.seed, None)?;
    println!("{} parameters", net.param_count());

    let held_out: &dyn FlowDataset = &val_set;
    let (net, history) = train(net, frozen, &train_set, Some(held_out), &cfg)?;
    for r in &history.records {
        println!(
            "step {:>5}  lr {:.2e}  mix {:.4}  lp {:.4}  held-out aepe {}",
            r.step,
            r.lr,
            r.mix,
            r.lp,
            r.aepe_all.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&net, &out)?;
    println!("checkpoint -> {}", out.display());
    Ok(())
}
