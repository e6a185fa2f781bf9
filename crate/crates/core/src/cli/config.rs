//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, dotted keys name
//! nested settings (`loss.lambda = 1.0`). Unknown keys are errors.
//! Resolution order, later wins: built-in defaults, config file (in the order
//! given), `--set key=value` flags (in the order given).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::keypoints::GoodFeatures;
use crate::losses::{LossConfig, LossKind};
use crate::masks::{MaskConfig, MaskPattern};
use crate::model::{FusionKind, ModelSpec};
use crate::synth::{SceneConfig, SyntheticSet, TexturePolicy};
use crate::train::{OptimizerKind, TrainConfig};

/// Tag written into every resolved config; bump when keys change meaning.
pub const CONFIG_FORMAT: &str = "focusflow-run/1";

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "FOCUSFLOW_OUT_ROOT";

/// Everything one CLI run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `None` means `<out root>/<subcommand>`.
    pub out: Option<PathBuf>,
    pub scene: SceneConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval_pca_dim: usize,
    pub eval_lc_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            scene: SceneConfig::default(),
            train_samples: 4000,
            val_samples: 100,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval_pca_dim: 2,
            eval_lc_samples: 32,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key} = {value:?}: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn pair<T: FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)>
where
    T::Err: std::fmt::Display,
{
    match value.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] => Ok((num(key, a)?, num(key, b)?)),
        _ => Err(bad(key, value, "expected two comma-separated values")),
    }
}

fn optional_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn parsed<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every recognised key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.scene;
        let m = &self.model;
        let t = &self.train;
        let optimizer: Vec<(&'static str, String)> = match t.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => vec![
                ("train.optimizer", "adam".to_string()),
                ("train.beta1", beta1.to_string()),
                ("train.beta2", beta2.to_string()),
                ("train.eps", eps.to_string()),
            ],
            OptimizerKind::Sgd { momentum } => {
                vec![("train.optimizer", "sgd".to_string()), ("train.momentum", momentum.to_string())]
            }
        };
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("scene.height", s.height.to_string()),
            ("scene.width", s.width.to_string()),
            ("scene.sprites", format!("{},{}", s.sprites.0, s.sprites.1)),
            ("scene.sprite_size", format!("{},{}", s.sprite_size.0, s.sprite_size.1)),
            ("scene.max_displacement", s.max_displacement.to_string()),
            ("scene.background_shift", s.background_shift.to_string()),
            (
                "scene.textures",
                match s.textures {
                    TexturePolicy::PerSample => "per-sample".to_string(),
                    TexturePolicy::Fixed(seed) => seed.to_string(),
                },
            ),
            ("scene.background_smoothing", s.background_smoothing.to_string()),
            ("scene.background_range", format!("{},{}", s.background_range.0, s.background_range.1)),
            ("scene.noise_std", s.noise_std.to_string()),
            ("data.train", self.train_samples.to_string()),
            ("data.val", self.val_samples.to_string()),
            ("model.widths", join(&m.widths)),
            ("model.strides", join(&m.strides)),
            ("model.fusion", m.fusion.to_string()),
            ("model.corr_radius", m.corr_radius.to_string()),
            ("model.refine_convs", m.refine_convs.to_string()),
            ("model.refine_corr_radius", m.refine_corr_radius.to_string()),
            ("model.use_cfe", m.use_cfe.to_string()),
            ("model.image_channels", m.image_channels.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_lr", t.max_lr.to_string()),
            ("train.warmup", t.warmup.to_string()),
            ("train.clip_norm", t.clip_norm.map_or("none".to_string(), |c| c.to_string())),
            ("train.init", t.init.to_string()),
            ("train.checkpoint", t.checkpoint.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("train.cache_keypoints", t.cache_keypoints.to_string()),
            ("train.log_every", t.log_every.to_string()),
            ("train.eval_samples", t.eval_samples.to_string()),
            ("loss.kind", t.loss.kind.to_string()),
            ("loss.p", t.loss.p.to_string()),
            ("loss.lambda", t.loss.lambda.to_string()),
            ("loss.mu", t.loss.mu.to_string()),
            ("loss.sigma", t.loss.sigma.to_string()),
            ("mask.pattern", t.mask.pattern.to_string()),
            ("mask.diameter", t.mask.diameter.to_string()),
            ("mask.sigma", t.mask.sigma.to_string()),
            ("detector.max_corners", t.detector.max_corners.to_string()),
            ("detector.quality_level", t.detector.quality_level.to_string()),
            ("detector.min_distance", t.detector.min_distance.to_string()),
            ("eval.pca_dim", self.eval_pca_dim.to_string()),
            ("eval.lc_samples", self.eval_lc_samples.to_string()),
        ];
        let at = out.iter().position(|(k, _)| *k == "train.clip_norm").expect("clip key present");
        out.splice(at..at, optimizer);
        out
    }

    /// Sets one key; unknown keys and malformed values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.scene;
        let m = &mut self.model;
        let t = &mut self.train;
        match key.trim() {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "scene.height" => s.height = num(key, v)?,
            "scene.width" => s.width = num(key, v)?,
            "scene.sprites" => s.sprites = pair(key, v)?,
            "scene.sprite_size" => s.sprite_size = pair(key, v)?,
            "scene.max_displacement" => s.max_displacement = num(key, v)?,
            "scene.background_shift" => s.background_shift = num(key, v)?,
            "scene.textures" => {
                s.textures = if v == "per-sample" { TexturePolicy::PerSample } else { TexturePolicy::Fixed(num(key, v)?) }
            }
            "scene.background_smoothing" => s.background_smoothing = num(key, v)?,
            "scene.background_range" => s.background_range = pair(key, v)?,
            "scene.noise_std" => s.noise_std = num(key, v)?,
            "data.train" => self.train_samples = num(key, v)?,
            "data.val" => self.val_samples = num(key, v)?,
            "model.widths" => m.widths = list(key, v)?,
            "model.strides" => m.strides = list(key, v)?,
            "model.fusion" => m.fusion = parsed(key, v)?,
            "model.corr_radius" => m.corr_radius = num(key, v)?,
            "model.refine_convs" => m.refine_convs = num(key, v)?,
            "model.refine_corr_radius" => m.refine_corr_radius = num(key, v)?,
            "model.use_cfe" => m.use_cfe = boolean(key, v)?,
            "model.image_channels" => m.image_channels = num(key, v)?,
            "train.iterations" => t.iterations = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.max_lr" => t.max_lr = num(key, v)?,
            "train.warmup" => t.warmup = num(key, v)?,
            "train.optimizer" => {
                t.optimizer = match v {
                    "adam" => match t.optimizer {
                        OptimizerKind::Adam { .. } => t.optimizer,
                        OptimizerKind::Sgd { .. } => OptimizerKind::default(),
                    },
                    "sgd" => match t.optimizer {
                        OptimizerKind::Sgd { .. } => t.optimizer,
                        OptimizerKind::Adam { .. } => OptimizerKind::Sgd { momentum: 0.9 },
                    },
                    _ => return Err(bad(key, v, "expected adam or sgd")),
                }
            }
            "train.beta1" | "train.beta2" | "train.eps" => {
                let x: f64 = num(key, v)?;
                match &mut t.optimizer {
                    OptimizerKind::Adam { beta1, beta2, eps } => match key.trim() {
                        "train.beta1" => *beta1 = x,
                        "train.beta2" => *beta2 = x,
                        _ => *eps = x,
                    },
                    OptimizerKind::Sgd { .. } => return Err(bad(key, v, "only meaningful with train.optimizer = adam")),
                }
            }
            "train.momentum" => match &mut t.optimizer {
                OptimizerKind::Sgd { momentum } => *momentum = num(key, v)?,
                OptimizerKind::Adam { .. } => return Err(bad(key, v, "only meaningful with train.optimizer = sgd")),
            },
            "train.clip_norm" => t.clip_norm = optional_f64(key, v)?,
            "train.init" => t.init = parsed(key, v)?,
            "train.checkpoint" => t.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train.cache_keypoints" => t.cache_keypoints = boolean(key, v)?,
            "train.log_every" => t.log_every = num(key, v)?,
            "train.eval_samples" => t.eval_samples = num(key, v)?,
            "loss.kind" => t.loss.kind = parsed::<LossKind>(key, v)?,
            "loss.p" => t.loss.p = num(key, v)?,
            "loss.lambda" => t.loss.lambda = num(key, v)?,
            "loss.mu" => t.loss.mu = num(key, v)?,
            "loss.sigma" => t.loss.sigma = num(key, v)?,
            "mask.pattern" => t.mask.pattern = parsed::<MaskPattern>(key, v)?,
            "mask.diameter" => t.mask.diameter = num(key, v)?,
            "mask.sigma" => t.mask.sigma = num(key, v)?,
            "detector.max_corners" => t.detector.max_corners = num(key, v)?,
            "detector.quality_level" => t.detector.quality_level = num(key, v)?,
            "detector.min_distance" => t.detector.min_distance = num(key, v)?,
            "eval.pca_dim" => self.eval_pca_dim = num(key, v)?,
            "eval.lc_samples" => self.eval_lc_samples = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies config-file text. Errors name the offending line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            // `format` is informational on read-back; anything else must be known.
            if key.trim() == "format" {
                if value.trim() != CONFIG_FORMAT {
                    return Err(Error::Config(format!("line {}: unsupported config format {:?}", n + 1, value.trim())));
                }
                continue;
            }
            self.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(key, value)
    }

    /// Defaults, then each file, then each override.
    pub fn resolve(files: &[PathBuf], overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for f in files {
            let text = std::fs::read_to_string(f).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
            cfg.apply_text(&text).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.train_samples == 0 || self.val_samples == 0 {
            return Err(Error::Config("data.train and data.val must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical text: format tag plus every key, one per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("format = {CONFIG_FORMAT}\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Output directory for `command`, honouring `out` and the environment.
    pub fn out_dir(&self, command: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                root.join(command)
            }
        }
    }

    /// Writes the resolved config (which carries the seed and format tag).
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::write_atomic(&dir.join("config.resolved"), self.to_text().as_bytes())
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn loss(&self) -> LossConfig {
        self.train.loss
    }

    pub fn mask(&self) -> MaskConfig {
        self.train.mask
    }

    pub fn detector(&self) -> GoodFeatures {
        self.train.detector
    }

    pub fn fusion(&self) -> FusionKind {
        self.model.fusion
    }

    /// Evaluation settings matching the training condition and detector.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            detectors: vec![("gf".to_string(), self.detector())],
            mask: self.mask(),
            pca_dim: self.eval_pca_dim,
            lc_samples: self.eval_lc_samples,
            seed: self.seed,
        }
    }

    /// Training and validation sets for this run's seed.
    pub fn datasets(&self) -> Result<(SyntheticSet, SyntheticSet)> {
        SyntheticSet::split(&self.scene, self.seed, self.train_samples, self.val_samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut a = RunConfig::default();
        a.apply_text("seed = 9\ntrain.optimizer = sgd\ntrain.momentum = 0.5\nloss.lambda = 10 # heavier\nmodel.widths = 8,12\nmodel.strides = 2,2\ntrain.clip_norm = none\n")
            .unwrap();
        let mut b = RunConfig::default();
        b.apply_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.seed, 9);
        assert_eq!(b.train.loss.lambda, 10.0);
        assert_eq!(b.train.clip_norm, None);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_errors() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("loss.lamda = 1").unwrap_err().to_string().contains("lamda"));
        assert!(c.apply_text("seed 3").unwrap_err().to_string().contains("line 1"));
        assert!(c.apply_override("train.iterations=ten").is_err());
    }

    #[test]
    fn overrides_win_over_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "train.iterations = 10\nseed = 4\n").unwrap();
        let c = RunConfig::resolve(&[f], &["train.iterations=3".to_string()]).unwrap();
        assert_eq!((c.train.iterations, c.seed), (3, 4));
    }
}
