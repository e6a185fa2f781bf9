//! Ablation grids: condition patterns, loss choices, λ and μ sweeps, fusion
//! kinds and initialization regimes, each trained and evaluated per seed.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::io::{save_checkpoint, write_atomic};
use crate::losses::{sigma_for_mu, LossConfig, LossKind};
use crate::masks::{MaskConfig, MaskPattern};
use crate::model::{FusionKind, ModelSpec};
use crate::synth::{SceneConfig, SyntheticSet};
use crate::train::{apply_init_mode, train, InitMode, TrainConfig};

/// λ values of the mix-loss sweep.
pub const LAMBDA_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
/// μ values of the neighborhood sweep (σ tied to μ by [`sigma_for_mu`]).
pub const MU_GRID: [usize; 4] = [1, 5, 9, 13];

/// Which setting is varied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Pattern,
    Loss,
    Lambda,
    Mu,
    Fusion,
    Init,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Pattern, Axis::Loss, Axis::Lambda, Axis::Mu, Axis::Fusion, Axis::Init];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Pattern => "pattern",
            Axis::Loss => "loss",
            Axis::Lambda => "lambda",
            Axis::Mu => "mu",
            Axis::Fusion => "fusion",
            Axis::Init => "init",
        }
    }

    /// Every arm of the grid along this axis.
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            Axis::Pattern => MaskPattern::QUERY.into_iter().map(Variant::Pattern).collect(),
            Axis::Loss => [false, true]
                .into_iter()
                .flat_map(|focus| LossKind::ALL.into_iter().map(move |kind| Variant::Loss { kind, focus }))
                .collect(),
            Axis::Lambda => LAMBDA_GRID.into_iter().map(Variant::Lambda).collect(),
            Axis::Mu => MU_GRID.into_iter().map(Variant::Mu).collect(),
            Axis::Fusion => FusionKind::ALL.into_iter().map(Variant::Fusion).collect(),
            Axis::Init => InitMode::ALL.into_iter().map(Variant::Init).collect(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation axis {s:?} (pattern, loss, lambda, mu, fusion, init)")))
    }
}

/// One arm of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Pattern(MaskPattern),
    /// Loss choice on the baseline (`focus = false`) or the conditioned model.
    Loss { kind: LossKind, focus: bool },
    Lambda(f64),
    Mu(usize),
    Fusion(FusionKind),
    Init(InitMode),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Pattern(p) => p.to_string(),
            Variant::Loss { kind, focus } => format!("{}/{kind}", if *focus { "focus" } else { "baseline" }),
            Variant::Lambda(l) => format!("lambda={l}"),
            Variant::Mu(m) => format!("mu={m}"),
            Variant::Fusion(k) => k.to_string(),
            Variant::Init(m) => m.to_string(),
        }
    }

    /// Model and training settings of this arm, derived from the conditioned
    /// model trained with the default mix loss and point condition.
    pub fn configure(&self, base_spec: &ModelSpec, base_train: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let mut spec = base_spec.clone();
        let mut t = base_train.clone();
        match *self {
            Variant::Pattern(p) => t.mask = MaskConfig { pattern: p, ..t.mask },
            Variant::Loss { kind, focus } => {
                t.loss = LossConfig { kind, ..t.loss };
                if !focus {
                    spec = ModelSpec { use_cfe: false, fusion: FusionKind::None, ..spec };
                }
            }
            Variant::Lambda(l) => t.loss = LossConfig { kind: LossKind::Mix, lambda: l, ..t.loss },
            Variant::Mu(m) => t.loss = LossConfig { kind: LossKind::Mix, mu: m, sigma: sigma_for_mu(m), ..t.loss },
            Variant::Fusion(k) => spec.fusion = k,
            Variant::Init(m) => t.init = m,
        }
        (spec, t)
    }
}

/// Inputs of one ablation run.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub axis: Axis,
    /// Restrict to these arm names; empty means the full grid.
    pub arms: Vec<String>,
    /// Seeds `first_seed .. first_seed + seeds`.
    pub first_seed: u64,
    pub seeds: usize,
    pub scene: SceneConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Conditioned-model architecture the arms start from.
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Where pretrained backbones for the init axis are written.
    pub work_dir: Option<PathBuf>,
}

/// One trained-and-evaluated arm for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub axis: Axis,
    pub variant: String,
    pub seed: u64,
    pub aepe_all: f64,
    pub aepe_kp: f64,
    pub l_c: f64,
    pub params: usize,
}

/// Per-arm medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub variant: String,
    pub seeds: usize,
    pub aepe_all: f64,
    pub aepe_kp: f64,
    pub l_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationResult {
    /// Arms in grid order with medians over their seeds.
    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut order: Vec<String> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.variant) {
                order.push(r.variant.clone());
            }
        }
        order
            .into_iter()
            .map(|variant| {
                let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == variant).collect();
                let col = |f: fn(&AblationRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                AblationSummary {
                    seeds: rows.len(),
                    aepe_all: col(|r| r.aepe_all),
                    aepe_kp: col(|r| r.aepe_kp),
                    l_c: col(|r| r.l_c),
                    variant,
                }
            })
            .collect()
    }

    /// `axis,variant,seed,aepe_all,aepe_kp,l_c,params`.
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("axis,variant,seed,aepe_all,aepe_kp,l_c,params\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.axis, r.variant, r.seed, r.aepe_all, r.aepe_kp, r.l_c, r.params);
        }
        s
    }

    /// `axis,variant,seeds,median_aepe_all,median_aepe_kp,median_l_c`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("axis,variant,seeds,median_aepe_all,median_aepe_kp,median_l_c\n");
        for m in self.summary() {
            let _ = writeln!(s, "{},{},{},{},{},{}", self.axis, m.variant, m.seeds, m.aepe_all, m.aepe_kp, m.l_c);
        }
        s
    }

    /// Writes `ablation_<axis>.csv` and `ablation_<axis>_medians.csv`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let rows = dir.join(format!("ablation_{}.csv", self.axis));
        let medians = dir.join(format!("ablation_{}_medians.csv", self.axis));
        write_atomic(&rows, self.rows_csv().as_bytes())?;
        write_atomic(&medians, self.summary_csv().as_bytes())?;
        Ok((rows, medians))
    }
}

/// Trains and evaluates every selected arm for every seed.
///
/// `progress` receives each finished row. The init axis first trains a
/// baseline backbone per seed (same budget, photometric loss) to load from.
pub fn run_ablation(cfg: &AblationConfig, mut progress: impl FnMut(&AblationRow)) -> Result<AblationResult> {
    let all = cfg.axis.variants();
    let variants: Vec<Variant> = if cfg.arms.is_empty() {
        all
    } else {
        for a in &cfg.arms {
            if !all.iter().any(|v| &v.name() == a) {
                let known: Vec<String> = all.iter().map(Variant::name).collect();
                return Err(Error::InvalidArgument(format!("axis {} has no arm {a:?} (arms: {})", cfg.axis, known.join(", "))));
            }
        }
        all.into_iter().filter(|v| cfg.arms.contains(&v.name())).collect()
    };
    if cfg.seeds == 0 {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for k in 0..cfg.seeds as u64 {
        let seed = cfg.first_seed + k;
        let (train_set, val_set) = SyntheticSet::split(&cfg.scene, seed, cfg.train_samples, cfg.val_samples)?;
        let backbone = if cfg.axis == Axis::Init && variants.iter().any(|v| matches!(v, Variant::Init(m) if m.needs_checkpoint())) {
            Some(pretrain_backbone(cfg, seed, &train_set)?)
        } else {
            None
        };
        for v in &variants {
            let (spec, mut t) = v.configure(&cfg.spec, &cfg.train);
            t.seed = seed;
            if t.init.needs_checkpoint() {
                t.checkpoint = backbone.clone();
            }
            let (net, frozen) = apply_init_mode(&spec, t.init, seed, t.checkpoint.as_deref())?;
            let (net, _) = train(net, frozen, &train_set, None, &t)?;
            let eval = EvalConfig { mask: t.mask, seed, ..cfg.eval.clone() };
            let m = evaluate(&net, &val_set, &eval)?;
            let aepe_kp = m.aepe_kp.values().next().copied().unwrap_or(f64::NAN);
            let row = AblationRow {
                axis: cfg.axis,
                variant: v.name(),
                seed,
                aepe_all: m.aepe_all,
                aepe_kp,
                l_c: m.l_c,
                params: net.param_count(),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(AblationResult { axis: cfg.axis, rows })
}

fn pretrain_backbone(cfg: &AblationConfig, seed: u64, data: &SyntheticSet) -> Result<PathBuf> {
    let dir = match &cfg.work_dir {
        Some(d) => d.clone(),
        None => std::env::temp_dir().join(format!("focusflow-ablation-{}", std::process::id())),
    };
    std::fs::create_dir_all(&dir)?;
    let spec = ModelSpec { use_cfe: false, fusion: FusionKind::None, ..cfg.spec.clone() };
    let t = TrainConfig {
        seed,
        init: InitMode::Scratch,
        checkpoint: None,
        loss: LossConfig { kind: LossKind::Photometric, ..cfg.train.loss },
        ..cfg.train.clone()
    };
    let (net, frozen) = apply_init_mode(&spec, InitMode::Scratch, seed, None)?;
    let (net, _) = train(net, frozen, data, None, &t)?;
    let path = dir.join(format!("backbone_seed{seed}.ckpt"));
    save_checkpoint(&net, &path)?;
    Ok(path)
}
