use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};

/// How condition and frame features exchange information after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    /// `frame += conv1x1(cond)` and `cond += conv1x1(frame)`.
    Conv1x1Bidirectional,
    /// `frame += conv1x1(cond)` only.
    Conv1x1Unidirectional,
    /// Each branch is rebuilt from the concatenation by a 1×1 conv.
    Concat,
    None,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] =
        [FusionKind::Conv1x1Unidirectional, FusionKind::Conv1x1Bidirectional, FusionKind::Concat, FusionKind::None];

    pub fn name(&self) -> &'static str {
        match self {
            FusionKind::Conv1x1Bidirectional => "conv",
            FusionKind::Conv1x1Unidirectional => "conv-unidirection",
            FusionKind::Concat => "concat",
            FusionKind::None => "none",
        }
    }

    pub(crate) fn code(&self) -> u32 {
        match self {
            FusionKind::Conv1x1Bidirectional => 0,
            FusionKind::Conv1x1Unidirectional => 1,
            FusionKind::Concat => 2,
            FusionKind::None => 3,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" | "conv1x1" | "conv1x1-bidirectional" => Ok(FusionKind::Conv1x1Bidirectional),
            "conv-unidirection" | "conv1x1-unidirectional" => Ok(FusionKind::Conv1x1Unidirectional),
            "concat" => Ok(FusionKind::Concat),
            "none" => Ok(FusionKind::None),
            _ => Err(Error::InvalidArgument(format!("unknown fusion kind {s:?}"))),
        }
    }
}

/// Architecture of a [`FlowNet`](super::FlowNet).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    /// Output channels of each encoder stage.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub fusion: FusionKind,
    /// Cost-volume radius at the coarsest stage; 0 feeds both feature maps instead.
    pub corr_radius: usize,
    /// Hidden convs in each coarse-to-fine refinement block; 0 disables refinement.
    pub refine_convs: usize,
    /// Cost-volume radius inside each refinement block; 0 disables it.
    pub refine_corr_radius: usize,
    /// Build the condition encoder and fusion modules.
    pub use_cfe: bool,
    pub image_channels: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            widths: vec![16, 32, 64],
            strides: vec![2, 2, 2],
            fusion: FusionKind::Conv1x1Bidirectional,
            corr_radius: 4,
            refine_convs: 1,
            refine_corr_radius: 2,
            use_cfe: true,
            image_channels: 1,
        }
    }
}

impl ModelSpec {
    /// The unconditioned network: no condition encoder, no fusion.
    pub fn baseline() -> Self {
        ModelSpec { use_cfe: false, fusion: FusionKind::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return arg_err("model needs at least one stage");
        }
        if self.widths.len() != self.strides.len() {
            return arg_err(format!(
                "{} stage widths but {} strides",
                self.widths.len(),
                self.strides.len()
            ));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) || self.image_channels == 0 {
            return arg_err("widths, strides and image channels must be positive");
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Fusion actually built: none without a condition encoder.
    pub fn effective_fusion(&self) -> FusionKind {
        if self.use_cfe {
            self.fusion
        } else {
            FusionKind::None
        }
    }

    /// Product of the strides up to and including `stage`.
    pub fn cumulative_stride(&self, stage: usize) -> usize {
        self.strides[..=stage].iter().product()
    }

    /// Spatial size after each stage for an `h × w` input (3×3 convs, padding 1).
    pub fn stage_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.stages());
        let (mut ch, mut cw) = (h, w);
        for &s in &self.strides {
            ch = (ch + 2 - 3) / s + 1;
            cw = (cw + 2 - 3) / s + 1;
            dims.push((ch, cw));
        }
        dims
    }

    /// Canonical one-line text form, used for digests and run records.
    pub fn describe(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "widths={} strides={} fusion={} corr_radius={} refine_convs={} refine_corr_radius={} use_cfe={} image_channels={}",
            list(&self.widths),
            list(&self.strides),
            self.fusion,
            self.corr_radius,
            self.refine_convs,
            self.refine_corr_radius,
            self.use_cfe,
            self.image_channels
        )
    }
}
