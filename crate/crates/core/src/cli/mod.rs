//! Batch command-line front end.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, CONFIG_FORMAT, OUT_ROOT_ENV};

use crate::ablation::{run_ablation, AblationConfig, Axis};
use crate::error::{Error, Result};
use crate::eval::{compare, config_digest};
use crate::gradsuite::{run_grad_suite, SUITE_TOLERANCE};
use crate::io::{load_checkpoint, read_pgm, save_checkpoint, write_flo, write_pgm};
use crate::keypoints::{load_keypoints, write_keypoints};
use crate::masks::{make_mask, MaskPattern};
use crate::model::FlowNet;
use crate::synth::FlowDataset;
use crate::train::{apply_init_mode, train};

#[derive(Debug, Parser)]
#[command(name = "focusflow", version, about = "Key-point focused optical flow at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config sources shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Config file(s) of `key = value` lines, applied in order.
    #[arg(long = "config", short = 'c')]
    pub config: Vec<PathBuf>,
    /// `key=value` override applied after the files; repeatable.
    #[arg(long = "set", short = 's')]
    pub set: Vec<String>,
    /// Output directory (overrides the `out` key).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed (overrides the `seed` key).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(o) = &self.out {
            overrides.push(format!("out={}", o.display()));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        RunConfig::resolve(&self.config, &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic frame pairs, flows, validity masks and key points.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of samples (default: data.train).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Detect Shi–Tomasi key points on a PGM image and write them as CSV.
    Detect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        /// Output CSV (default: <out>/keypoints.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a condition mask for an image and write it as PGM.
    MakeMask {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        /// Key-point CSV; detected on the image when omitted.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        /// Pattern (default: mask.pattern).
        #[arg(long)]
        pattern: Option<String>,
        /// Output PGM (default: <out>/mask.pgm).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model; writes model.ckpt, history.csv and the resolved config.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate one checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Model name in the report.
        #[arg(long, default_value = "model")]
        tag: String,
    },
    /// Evaluate several checkpoints (`tag=path`) on the same validation split.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "model", short = 'm', required = true)]
        models: Vec<String>,
    },
    /// Sweep one axis across seeds; writes per-seed rows and medians.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// pattern | loss | lambda | mu | fusion | init
        #[arg(long)]
        axis: String,
        /// Number of seeds, starting at the run seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Comma-separated subset of arm names.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<String>,
    },
    /// Run the finite-difference gradient suite and report the worst error.
    GradCheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 20)]
        count: u64,
    },
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    execute(cli.command)
}

/// Process entry point: prints clap help/version as clap does, diagnostics on
/// stderr, and maps failures to a nonzero status.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir(command);
    cfg.write_resolved(&dir)?;
    Ok(dir)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { cfg, count } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "gen-data")?;
            let n = count.unwrap_or(cfg.train_samples);
            let (set, _) = crate::synth::SyntheticSet::split(&cfg.scene, cfg.seed, n.max(1), 1)?;
            let detector = cfg.detector();
            for i in 0..n {
                let s = set.sample(i)?;
                let stem = dir.join(format!("{i:05}"));
                let with = |suffix: &str| PathBuf::from(format!("{}_{suffix}", stem.display()));
                write_pgm(&s.i1, with("i1.pgm"))?;
                write_pgm(&s.i2, with("i2.pgm"))?;
                write_flo(&s.gt_flow, with("flow.flo"))?;
                write_pgm(&s.valid, with("valid.pgm"))?;
                write_keypoints(&detector.detect(&s.i1)?, with("kps.csv"))?;
            }
            println!("wrote {n} samples to {}", dir.display());
        }
        Command::Detect { cfg, image, output } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "detect")?;
            let img = read_pgm(&image)?;
            let kps = cfg.detector().detect(&img)?;
            let path = output.unwrap_or_else(|| dir.join("keypoints.csv"));
            write_keypoints(&kps, &path)?;
            println!("{} key points -> {}", kps.len(), path.display());
        }
        Command::MakeMask { cfg, image, keypoints, pattern, output } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "make-mask")?;
            let img = read_pgm(&image)?;
            let dims = (img.shape()[0], img.shape()[1]);
            let kps = match keypoints {
                Some(p) => load_keypoints(p, dims)?,
                None => cfg.detector().detect(&img)?,
            };
            let pattern: MaskPattern = match pattern {
                Some(p) => p.parse()?,
                None => cfg.mask().pattern,
            };
            let m = cfg.mask();
            let mask = make_mask(&kps, dims, pattern, m.diameter, m.sigma, Some(&img))?;
            let path = output.unwrap_or_else(|| dir.join("mask.pgm"));
            write_pgm(&mask.values.reshape(&[dims.0, dims.1])?, &path)?;
            println!("{pattern} mask from {} key points -> {}", kps.len(), path.display());
        }
        Command::Train { cfg } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "train")?;
            let (train_set, val_set) = cfg.datasets()?;
            let t = cfg.train_config();
            let (net, frozen) = apply_init_mode(&cfg.model, t.init, cfg.seed, t.checkpoint.as_deref())?;
            let held_out: Option<&dyn FlowDataset> = (t.eval_samples > 0).then_some(&val_set as &dyn FlowDataset);
            let (net, history) = train(net, frozen, &train_set, held_out, &t)?;
            save_checkpoint(&net, &dir.join("model.ckpt"))?;
            history.write_csv(&dir.join("history.csv"))?;
            if let Some(last) = history.records.last() {
                println!("step {} mix {:.4} lp {:.4}", last.step, last.mix, last.lp);
            }
            println!("checkpoint -> {}", dir.join("model.ckpt").display());
        }
        Command::Eval { cfg, checkpoint, tag } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "eval")?;
            report_models(&cfg, &dir, &[(tag, checkpoint)])?;
        }
        Command::Compare { cfg, models } => {
            let cfg = cfg.resolve()?;
            let dir = prepare_out(&cfg, "compare")?;
            let pairs = models
                .iter()
                .map(|m| {
                    m.split_once('=')
                        .map(|(t, p)| (t.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| Error::InvalidArgument(format!("--model expects tag=path, got {m:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            report_models(&cfg, &dir, &pairs)?;
        }
        Command::Ablate { cfg, axis, seeds, arms } => {
            let cfg = cfg.resolve()?;
            let axis: Axis = axis.parse()?;
            let dir = prepare_out(&cfg, "ablate")?;
            let ab = AblationConfig {
                axis,
                arms,
                first_seed: cfg.seed,
                seeds,
                scene: cfg.scene.clone(),
                train_samples: cfg.train_samples,
                val_samples: cfg.val_samples,
                spec: cfg.model.clone(),
                train: cfg.train_config(),
                eval: cfg.eval_config(),
                work_dir: Some(dir.join("backbones")),
            };
            let result = run_ablation(&ab, |r| {
                println!("{} seed {}: aepe_all {:.4} aepe_kp {:.4} l_c {:.4}", r.variant, r.seed, r.aepe_all, r.aepe_kp, r.l_c)
            })?;
            let (rows, medians) = result.write(&dir)?;
            print!("{}", result.summary_csv());
            println!("rows -> {}\nmedians -> {}", rows.display(), medians.display());
        }
        Command::GradCheck { seed, count } => {
            let report = run_grad_suite(seed..seed + count)?;
            let worst = report.worst().ok_or_else(|| Error::InvalidArgument("no seeds to check".into()))?;
            println!(
                "{} cases over {count} seed(s); worst relative error {:.3e} ({}, seed {})",
                report.cases.len(),
                worst.report.max_rel_error,
                worst.name,
                worst.seed
            );
            if !report.passed(SUITE_TOLERANCE) {
                return Err(Error::InvalidArgument(format!(
                    "gradient suite exceeds tolerance {SUITE_TOLERANCE:e}: {} at seed {}",
                    worst.name, worst.seed
                )));
            }
        }
    }
    Ok(())
}

fn report_models(cfg: &RunConfig, dir: &Path, models: &[(String, PathBuf)]) -> Result<()> {
    let (_, val_set) = cfg.datasets()?;
    let loaded = models
        .iter()
        .map(|(tag, path)| {
            let net: FlowNet<f32> = load_checkpoint(path, None)?;
            let digest = config_digest(&format!("{}\n{}", net.spec().describe(), cfg.to_text()));
            Ok((tag.clone(), net, digest))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = compare(&loaded, &val_set, &cfg.eval_config())?;
    report.write_all(dir)?;
    print!("{}", report.to_csv());
    Ok(())
}
