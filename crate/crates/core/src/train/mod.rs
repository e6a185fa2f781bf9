//! Training: one-cycle schedule, optimizers, initialization regimes, and the
//! deterministic training loop.

mod init;
mod optim;
mod schedule;

pub use init::{apply_init_mode, copy_frame_encoder_into_condition, load_backbone, InitMode};
pub use optim::{clip_global_norm, global_norm, Optimizer, OptimizerKind};
pub use schedule::{one_cycle_lr, peak_step, END_DIVISOR, START_DIVISOR};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Error, Result};
use crate::eval::{epe_sum, EpeSum};
use crate::flow::FlowField;
use crate::io::write_atomic;
use crate::keypoints::{GoodFeatures, KeyPointSet};
use crate::losses::{alpha_weights, loss_terms, multiscale_loss, LossConfig, LossKind, WeightMap};
use crate::masks::{make_mask, reference_mask, MaskConfig};
use crate::model::FlowNet;
use crate::seed::named_seed;
use crate::synth::{FlowDataset, Sample};
use crate::tensor::{backward, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    /// Fraction of the run spent ramping up to `max_lr`, in (0,1).
    pub warmup: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub loss: LossConfig,
    /// Condition given to the query frame.
    pub mask: MaskConfig,
    pub init: InitMode,
    /// Source of pretrained weights for the fine-tune modes.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub detector: GoodFeatures,
    /// Detect key points once per sample index instead of at every draw.
    pub cache_keypoints: bool,
    /// Steps between history records.
    pub log_every: usize,
    /// Held-out samples evaluated at every history record.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 4,
            max_lr: 2e-3,
            warmup: 0.1,
            optimizer: OptimizerKind::default(),
            clip_norm: Some(1.0),
            loss: LossConfig::default(),
            mask: MaskConfig::default(),
            init: InitMode::Scratch,
            checkpoint: None,
            seed: 0,
            detector: GoodFeatures::default(),
            cache_keypoints: false,
            log_every: 50,
            eval_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg_err("batch size must be at least 1");
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return arg_err(format!("max learning rate must be positive, got {}", self.max_lr));
        }
        if !(self.warmup > 0.0 && self.warmup < 1.0) {
            return arg_err(format!("warmup fraction must be in (0,1), got {}", self.warmup));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return arg_err(format!("clip norm must be positive, got {c}"));
            }
        }
        if self.log_every == 0 {
            return arg_err("log interval must be at least 1");
        }
        if self.init.needs_checkpoint() && self.checkpoint.is_none() {
            return arg_err(format!("init mode {} needs a checkpoint path", self.init));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }

    /// Learning rate at `step` under this configuration's one-cycle schedule.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        one_cycle_lr(step, self.iterations, self.max_lr, self.warmup)
    }
}

/// One history row. Loss columns average the training batches since the
/// previous row; AEPE columns are measured on the held-out samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub step: usize,
    pub lr: f64,
    /// `lp + λ·cpcl` at full resolution (λ from the loss config).
    pub mix: f64,
    pub lp: f64,
    /// `None` when no batch in the window had key-point supervision.
    pub cpcl: Option<f64>,
    pub aepe_all: Option<f64>,
    pub aepe_kp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub const HEADER: &'static str = "step,lr,mix,lp,cpcl,aepe_all,aepe_kp";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.step,
                r.lr,
                r.mix,
                r.lp,
                opt_cell(r.cpcl),
                opt_cell(r.aepe_all),
                opt_cell(r.aepe_kp)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// What one optimization step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    /// Batch objective that was differentiated.
    pub objective: f64,
    pub mix: f64,
    pub lp: f64,
    pub cpcl: Option<f64>,
    /// Gradient norm of the trainable parameters before clipping.
    pub grad_norm: f64,
    /// Gradient norm actually applied.
    pub applied_norm: f64,
}

/// Network inputs and supervision for one sample.
struct Prepared {
    i1: Tensor<f32>,
    i2: Tensor<f32>,
    query: Tensor<f32>,
    reference: Tensor<f32>,
    gt: FlowField<f32>,
    alpha: Option<WeightMap>,
}

fn prepare(sample: &Sample, kps: &KeyPointSet, mask: &MaskConfig, loss: &LossConfig) -> Result<Prepared> {
    let (h, w) = sample.dims();
    let query = make_mask(kps, (h, w), mask.pattern, mask.diameter, mask.sigma, Some(&sample.i1))?;
    let alpha = if kps.is_empty() { None } else { Some(alpha_weights(kps, (h, w), loss.mu, loss.sigma)?) };
    Ok(Prepared {
        i1: sample.i1.reshape(&[1, h, w])?.cast(),
        i2: sample.i2.reshape(&[1, h, w])?.cast(),
        query: query.values.cast(),
        reference: reference_mask((h, w))?.values.cast(),
        gt: sample.gt_flow.cast(),
        alpha,
    })
}

#[derive(Default)]
struct Window {
    steps: usize,
    mix: f64,
    lp: f64,
    cpcl: f64,
    cpcl_steps: usize,
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    net: FlowNet<f32>,
    frozen: Vec<bool>,
    optimizer: Optimizer,
    data: &'a dyn FlowDataset,
    held_out: Option<&'a dyn FlowDataset>,
    batches: ChaCha8Rng,
    step: usize,
    keypoint_cache: HashMap<usize, KeyPointSet>,
    window: Window,
    history: TrainHistory,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: FlowNet<f32>,
        frozen: Vec<bool>,
        data: &'a dyn FlowDataset,
        held_out: Option<&'a dyn FlowDataset>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut check = cfg.clone();
        // The network is already built; only the remaining settings matter here.
        check.init = InitMode::Scratch;
        check.validate()?;
        if data.is_empty() {
            return arg_err("training set is empty");
        }
        if frozen.len() != net.params().len() {
            return arg_err(format!("{} frozen flags for {} parameters", frozen.len(), net.params().len()));
        }
        let sizes: Vec<usize> = net.params().iter().map(|p| p.numel()).collect();
        Ok(Trainer {
            optimizer: Optimizer::new(cfg.optimizer, &sizes),
            cfg: cfg.clone(),
            net,
            frozen,
            data,
            held_out,
            batches: ChaCha8Rng::seed_from_u64(named_seed(cfg.seed, "batches")),
            step: 0,
            keypoint_cache: HashMap::new(),
            window: Window::default(),
            history: TrainHistory::default(),
        })
    }

    pub fn net(&self) -> &FlowNet<f32> {
        &self.net
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn keypoints(&mut self, index: usize, sample: &Sample) -> Result<KeyPointSet> {
        if let Some(k) = self.keypoint_cache.get(&index) {
            return Ok(k.clone());
        }
        let k = self.cfg.detector.detect(&sample.i1)?;
        if self.cfg.cache_keypoints {
            self.keypoint_cache.insert(index, k.clone());
        }
        Ok(k)
    }

    /// Runs one optimization step.
    pub fn step(&mut self) -> Result<StepStats> {
        let step = self.step;
        let lr = self.cfg.lr_at(step)?;
        let loss_cfg = self.cfg.loss;
        let b = self.cfg.batch_size;
        let mut total: Option<Tensor<f32>> = None;
        let (mut mix, mut lp, mut cpcl_sum, mut cpcl_n) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..b {
            let index = self.batches.random_range(0..self.data.len());
            let sample = self.data.sample(index)?;
            let kps = self.keypoints(index, &sample)?;
            let p = prepare(&sample, &kps, &self.cfg.mask, &loss_cfg)?;
            let out = self.net.forward(&p.i1, &p.i2, &p.query, &p.reference)?;
            // A sample without key points cannot supply CPCL; it falls back to L_p.
            let cfg = if p.alpha.is_none() && loss_cfg.uses_cpcl() {
                LossConfig { kind: LossKind::Photometric, ..loss_cfg }
            } else {
                loss_cfg
            };
            let objective = multiscale_loss(&p.gt, &out.scales, p.alpha.as_ref(), &cfg)?;
            let last = loss_terms(&p.gt, &out.flow, p.alpha.as_ref(), &LossConfig { kind: LossKind::Photometric, ..loss_cfg })?;
            let s_lp = f64::from(last.photometric.item()?);
            let s_cpcl: Option<f64> = last.cpcl.map(|c| c.item().map(f64::from)).transpose()?;
            lp += s_lp;
            mix += s_lp + loss_cfg.lambda * s_cpcl.unwrap_or(0.0);
            if let Some(c) = s_cpcl {
                cpcl_sum += c;
                cpcl_n += 1;
            }
            total = Some(match total {
                None => objective,
                Some(t) => t.add(&objective)?,
            });
        }
        let loss = total.expect("batch size >= 1").scale(1.0 / b as f32);
        let objective = f64::from(loss.item()?);
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = backward(&loss)?;
        let mut g: Vec<Option<Vec<f64>>> = self
            .net
            .params()
            .iter()
            .zip(&self.frozen)
            .map(|(p, &frozen)| (!frozen).then(|| grads.wrt(p).to_f64_vec()))
            .collect();
        let grad_norm = match self.cfg.clip_norm {
            Some(c) => clip_global_norm(&mut g, c),
            None => global_norm(&g),
        };
        let applied_norm = global_norm(&g);
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut values: Vec<Vec<f32>> = self.net.params().iter().map(|p| p.to_vec()).collect();
        self.optimizer.update(&mut values, &g, lr);
        for (i, v) in values.into_iter().enumerate() {
            if !self.frozen[i] {
                self.net.set_param(i, v)?;
            }
        }
        let (mix, lp) = (mix / b as f64, lp / b as f64);
        let cpcl = (cpcl_n > 0).then(|| cpcl_sum / cpcl_n as f64);
        self.window.steps += 1;
        self.window.mix += mix;
        self.window.lp += lp;
        if let Some(c) = cpcl {
            self.window.cpcl += c;
            self.window.cpcl_steps += 1;
        }
        self.step += 1;
        if step % self.cfg.log_every == 0 || step + 1 == self.cfg.iterations {
            self.record(step, lr)?;
        }
        Ok(StepStats { step, lr, objective, mix, lp, cpcl, grad_norm, applied_norm })
    }

    fn record(&mut self, step: usize, lr: f64) -> Result<()> {
        let w = std::mem::take(&mut self.window);
        let n = w.steps as f64;
        let (aepe_all, aepe_kp) = match self.held_out {
            Some(set) if self.cfg.eval_samples > 0 && !set.is_empty() => {
                let (a, k) = held_out_aepe(&self.net, set, self.cfg.eval_samples, &self.cfg)?;
                (Some(a), k)
            }
            _ => (None, None),
        };
        self.history.records.push(HistoryRecord {
            step,
            lr,
            mix: w.mix / n,
            lp: w.lp / n,
            cpcl: (w.cpcl_steps > 0).then(|| w.cpcl / w.cpcl_steps as f64),
            aepe_all,
            aepe_kp,
        });
        Ok(())
    }

    /// Runs the remaining steps and returns the trained network and history.
    pub fn run(mut self) -> Result<(FlowNet<f32>, TrainHistory)> {
        while self.step < self.cfg.iterations {
            self.step()?;
        }
        Ok((self.net, self.history))
    }
}

/// Overall and key-point AEPE of `net` on the first `n` samples of `set`.
fn held_out_aepe(net: &FlowNet<f32>, set: &dyn FlowDataset, n: usize, cfg: &TrainConfig) -> Result<(f64, Option<f64>)> {
    let mut all = EpeSum::default();
    let mut kp = EpeSum::default();
    for i in 0..n.min(set.len()) {
        let s = set.sample(i)?;
        let kps = cfg.detector.detect(&s.i1)?;
        let p = prepare(&s, &kps, &cfg.mask, &cfg.loss)?;
        let pred = net.forward(&p.i1, &p.i2, &p.query, &p.reference)?.flow.cast::<f64>();
        all.add(epe_sum(&s.gt_flow, &pred, None, Some(&s.valid))?);
        kp.add(epe_sum(&s.gt_flow, &pred, Some(&kps), Some(&s.valid))?);
    }
    Ok((all.mean()?, kp.mean().ok()))
}

/// Trains `net` (with `frozen` parameters held fixed) on `data`.
pub fn train(
    net: FlowNet<f32>,
    frozen: Vec<bool>,
    data: &dyn FlowDataset,
    held_out: Option<&dyn FlowDataset>,
    cfg: &TrainConfig,
) -> Result<(FlowNet<f32>, TrainHistory)> {
    Trainer::new(net, frozen, data, held_out, cfg)?.run()
}
