use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::load_checkpoint;
use crate::model::{FlowNet, ModelSpec, ParamGroup};

/// How a network's parameters are obtained before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMode {
    /// Seeded initialization, everything trainable.
    Scratch,
    /// Frame encoder and decoder from a checkpoint, condition branch seeded.
    FineTune,
    /// As fine-tune, and the condition encoder starts as a copy of the frame encoder.
    FineTuneBranchInit,
    /// As fine-tune, with frame encoder and decoder frozen.
    PromptTune,
}

impl InitMode {
    pub const ALL: [InitMode; 4] = [InitMode::Scratch, InitMode::FineTune, InitMode::FineTuneBranchInit, InitMode::PromptTune];

    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Scratch => "scratch",
            InitMode::FineTune => "fine-tune",
            InitMode::FineTuneBranchInit => "fine-tune-branch-init",
            InitMode::PromptTune => "prompt-tune",
        }
    }

    pub fn needs_checkpoint(&self) -> bool {
        !matches!(self, InitMode::Scratch)
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown init mode {s:?}")))
    }
}

fn is_backbone(g: ParamGroup) -> bool {
    matches!(g, ParamGroup::Ffe | ParamGroup::Decoder)
}

/// Copies every frame-encoder and decoder tensor of `source` into `net` by name.
pub fn load_backbone(net: &mut FlowNet<f32>, source: &FlowNet<f32>) -> Result<()> {
    for i in 0..net.params().len() {
        if !is_backbone(net.groups()[i]) {
            continue;
        }
        let name = net.names()[i].clone();
        let j = source
            .index_of(&name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks backbone parameter {name}")))?;
        let (want, have) = (net.params()[i].shape(), source.params()[j].shape());
        if want != have {
            return Err(Error::Checkpoint(format!("backbone parameter {name}: checkpoint {have:?}, model {want:?}")));
        }
        net.set_param(i, source.params()[j].to_vec())?;
    }
    Ok(())
}

/// Copies each frame-encoder stage into the condition encoder. The first
/// stage's kernels are summed over image channels to fit the one-channel mask.
pub fn copy_frame_encoder_into_condition(net: &mut FlowNet<f32>) -> Result<()> {
    if !net.spec().use_cfe {
        return Err(Error::InvalidArgument("branch init needs a condition encoder".into()));
    }
    for s in 0..net.spec().stages() {
        for part in ["weight", "bias"] {
            let src = net.index_of(&format!("ffe.{s}.{part}")).expect("declared");
            let dst = net.index_of(&format!("cfe.{s}.{part}")).expect("declared");
            let (src_t, dst_shape) = (net.params()[src].clone(), net.params()[dst].shape().to_vec());
            let values = if src_t.shape() == dst_shape.as_slice() {
                src_t.to_vec()
            } else {
                // [out, in, k, k] -> [out, 1, k, k] by summing over `in`.
                let (out, inp, kk) = (src_t.shape()[0], src_t.shape()[1], src_t.shape()[2] * src_t.shape()[3]);
                let d = src_t.data();
                let mut v = vec![0.0f32; out * kk];
                for o in 0..out {
                    for c in 0..inp {
                        for k in 0..kk {
                            v[o * kk + k] += d[(o * inp + c) * kk + k];
                        }
                    }
                }
                v
            };
            net.set_param(dst, values)?;
        }
    }
    Ok(())
}

/// Builds the network for `mode` and reports which parameters are frozen.
pub fn apply_init_mode(spec: &ModelSpec, mode: InitMode, seed: u64, checkpoint: Option<&Path>) -> Result<(FlowNet<f32>, Vec<bool>)> {
    let mut net = FlowNet::<f32>::build(spec, seed)?;
    if mode.needs_checkpoint() {
        let path = checkpoint.ok_or_else(|| Error::InvalidArgument(format!("init mode {mode} needs a checkpoint path")))?;
        let source = load_checkpoint(path, None)?;
        load_backbone(&mut net, &source)?;
    }
    if mode == InitMode::FineTuneBranchInit {
        copy_frame_encoder_into_condition(&mut net)?;
    }
    let frozen = net.groups().iter().map(|&g| mode == InitMode::PromptTune && is_backbone(g)).collect();
    Ok((net, frozen))
}
