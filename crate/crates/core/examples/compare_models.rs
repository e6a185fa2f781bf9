//! Train a baseline and a key-point focused model briefly, then compare them.
//!
//! `cargo run --release --example compare_models [iterations] [out_dir]`

use focusflow::eval::{compare, config_digest, EvalConfig};
use focusflow::losses::{LossConfig, LossKind};
use focusflow::model::ModelSpec;
use focusflow::synth::{SceneConfig, SyntheticSet};
use focusflow::train::{apply_init_mode, train, InitMode, TrainConfig};

fn main() -> focusflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "runs/example-compare".into()));

    let (train_set, val_set) = SyntheticSet::split(&SceneConfig::default(), 101, 1000, 32)?;
    let arms = [
        ("baseline", ModelSpec::baseline(), LossKind::Photometric),
        ("focus", ModelSpec::default(), LossKind::Mix),
    ];
    let mut models = Vec::new();
    for (tag, spec, kind) in arms {
        let cfg = TrainConfig { iterations, seed: 1, loss: LossConfig { kind, ..LossConfig::default() }, ..TrainConfig::default() };
        let (net, frozen) = apply_init_mode(&spec, InitMode::Scratch, cfg.seed, None)?;
        let (net, _) = train(net, frozen, &train_set, None, &cfg)?;
        println!("trained {tag} ({} parameters)", net.param_count());
        let digest = config_digest(&format!("{}\n{kind:?}", spec.describe()));
        models.push((tag.to_string(), net, digest));
    }

    let report = compare(&models, &val_set, &EvalConfig::default())?;
    print!("{}", report.to_csv());
    std::fs::create_dir_all(&out)?;
    report.write_all(&out)?;
    println!("report.csv / report.json / report.svg -> {}", out.display());
    Ok(())
}
