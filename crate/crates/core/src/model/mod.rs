//! The flow network: a conditional control encoder (frame encoder, condition
//! encoder, per-stage fusion) shared by both frames, an optional cost volume,
//! and a coarse-to-fine decoder.

mod fusion;
mod spec;

pub use fusion::{fuse, Conv, FusionParams};
pub use spec::{FusionKind, ModelSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::flow::FlowField;
use crate::masks::ConditionMask;
use crate::seed::named_seed;
use crate::tensor::{Scalar, Tensor};

/// Negative slope of every activation in the network.
/// Intensity subtracted from every frame before encoding.
pub const INPUT_CENTER: f64 = 0.5;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Which sub-module a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Frame feature encoder.
    Ffe,
    /// Condition feature encoder.
    Cfe,
    Fusion,
    Decoder,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSlot {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
enum FusionSlot {
    None,
    Bidirectional { c2f: ConvSlot, f2c: ConvSlot },
    Unidirectional { c2f: ConvSlot },
    Concat { to_frame: ConvSlot, to_cond: ConvSlot },
}

#[derive(Debug, Clone)]
struct RefineSlot {
    /// Encoder stage whose resolution this block works at.
    stage: usize,
    hidden: Vec<ConvSlot>,
    out: ConvSlot,
}

#[derive(Debug, Clone)]
struct Layout {
    ffe: Vec<ConvSlot>,
    cfe: Vec<ConvSlot>,
    fusion: Vec<FusionSlot>,
    coarse: [ConvSlot; 2],
    refine: Vec<RefineSlot>,
}

/// Initial values of a parameter tensor.
#[derive(Debug, Clone, Copy)]
enum Fill {
    /// He-uniform with bound `sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Zero,
    /// 1×1 kernel `[C, 2C]` that copies the first `C` input channels.
    IdentityLeft,
}

struct Decl {
    name: String,
    shape: Vec<usize>,
    fill: Fill,
    group: ParamGroup,
}

struct Builder {
    decls: Vec<Decl>,
}

impl Builder {
    fn conv(&mut self, name: &str, group: ParamGroup, out: usize, inp: usize, k: usize, stride: usize, fill: Fill) -> ConvSlot {
        let weight = self.decls.len();
        let fill = match fill {
            Fill::HeUniform { .. } => Fill::HeUniform { fan_in: inp * k * k },
            f => f,
        };
        self.decls.push(Decl { name: format!("{name}.weight"), shape: vec![out, inp, k, k], fill, group });
        self.decls.push(Decl { name: format!("{name}.bias"), shape: vec![out], fill: Fill::Zero, group });
        ConvSlot { weight, bias: weight + 1, stride, pad: k / 2 }
    }
}

const HE: Fill = Fill::HeUniform { fan_in: 0 };

fn plan(spec: &ModelSpec) -> (Layout, Vec<Decl>) {
    let mut b = Builder { decls: Vec::new() };
    let n = spec.stages();
    let mut ffe = Vec::new();
    let mut inp = spec.image_channels;
    for s in 0..n {
        ffe.push(b.conv(&format!("ffe.{s}"), ParamGroup::Ffe, spec.widths[s], inp, 3, spec.strides[s], HE));
        inp = spec.widths[s];
    }
    let mut cfe = Vec::new();
    let mut fusion = Vec::new();
    if spec.use_cfe {
        let mut inp = 1;
        for s in 0..n {
            cfe.push(b.conv(&format!("cfe.{s}"), ParamGroup::Cfe, spec.widths[s], inp, 3, spec.strides[s], HE));
            inp = spec.widths[s];
        }
        for s in 0..n {
            let w = spec.widths[s];
            let g = ParamGroup::Fusion;
            let slot = match spec.fusion {
                FusionKind::None => FusionSlot::None,
                FusionKind::Conv1x1Bidirectional => FusionSlot::Bidirectional {
                    c2f: b.conv(&format!("fusion.{s}.c2f"), g, w, w, 1, 1, Fill::Zero),
                    f2c: b.conv(&format!("fusion.{s}.f2c"), g, w, w, 1, 1, Fill::Zero),
                },
                FusionKind::Conv1x1Unidirectional => FusionSlot::Unidirectional {
                    c2f: b.conv(&format!("fusion.{s}.c2f"), g, w, w, 1, 1, Fill::Zero),
                },
                FusionKind::Concat => FusionSlot::Concat {
                    to_frame: b.conv(&format!("fusion.{s}.to_frame"), g, w, 2 * w, 1, 1, Fill::IdentityLeft),
                    to_cond: b.conv(&format!("fusion.{s}.to_cond"), g, w, 2 * w, 1, 1, Fill::IdentityLeft),
                },
            };
            fusion.push(slot);
        }
    }
    let top = spec.widths[n - 1];
    let side = 2 * spec.corr_radius + 1;
    let dec_in = if spec.corr_radius > 0 { top + side * side } else { 2 * top };
    let coarse = [
        b.conv("decoder.coarse.0", ParamGroup::Decoder, top, dec_in, 3, 1, HE),
        b.conv("decoder.coarse.flow", ParamGroup::Decoder, 2, top, 3, 1, Fill::Zero),
    ];
    let mut refine = Vec::new();
    if spec.refine_convs > 0 {
        for stage in (0..n - 1).rev() {
            let w = spec.widths[stage];
            let mut hidden = Vec::new();
            let rside = 2 * spec.refine_corr_radius + 1;
            let mut inp = w + 2 + if spec.refine_corr_radius > 0 { rside * rside } else { 0 };
            for h in 0..spec.refine_convs {
                hidden.push(b.conv(&format!("decoder.refine.{stage}.{h}"), ParamGroup::Decoder, w, inp, 3, 1, HE));
                inp = w;
            }
            let out = b.conv(&format!("decoder.refine.{stage}.flow"), ParamGroup::Decoder, 2, w, 3, 1, Fill::Zero);
            refine.push(RefineSlot { stage, hidden, out });
        }
    }
    (Layout { ffe, cfe, fusion, coarse, refine }, b.decls)
}

/// Seed for one named parameter, so a tensor's initial values depend only on
/// `(seed, name)` and are shared between architectures that both declare it.
fn param_seed(seed: u64, name: &str) -> u64 {
    named_seed(seed, name)
}

fn fill_values<T: Scalar>(d: &Decl, seed: Option<u64>) -> Vec<T> {
    let n: usize = d.shape.iter().product();
    match (d.fill, seed) {
        (Fill::HeUniform { fan_in }, Some(seed)) => {
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, &d.name));
            (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
        }
        (Fill::IdentityLeft, Some(_)) => {
            let (out, inp) = (d.shape[0], d.shape[1]);
            let mut v = vec![T::zero(); n];
            for o in 0..out {
                v[o * inp + o] = T::one();
            }
            v
        }
        _ => vec![T::zero(); n],
    }
}

/// Result of [`FlowNet::forward`].
#[derive(Debug, Clone)]
pub struct FlowOutput<T: Scalar> {
    /// Full-resolution flow.
    pub flow: FlowField<T>,
    /// Every decoder prediction upsampled to full resolution, coarsest first;
    /// the last entry is `flow`.
    pub scales: Vec<FlowField<T>>,
}

/// Conditional flow network; parameters are trainable leaves.
#[derive(Debug, Clone)]
pub struct FlowNet<T: Scalar = f32> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    layout: Layout,
}

impl<T: Scalar> FlowNet<T> {
    /// Seeded He-uniform init; biases and residual fusion convs start at zero.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        Self::assemble(spec, Some(seed))
    }

    /// Every parameter zero.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Self::assemble(spec, None)
    }

    fn assemble(spec: &ModelSpec, seed: Option<u64>) -> Result<Self> {
        spec.validate()?;
        let (layout, decls) = plan(spec);
        let mut params = Vec::with_capacity(decls.len());
        for d in &decls {
            params.push(Tensor::param(&d.shape, fill_values(d, seed))?);
        }
        Ok(FlowNet {
            spec: spec.clone(),
            params,
            names: decls.iter().map(|d| d.name.clone()).collect(),
            groups: decls.iter().map(|d| d.group).collect(),
            layout,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Parameter shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Scalar count `spec` would allocate, computed from the layout alone.
    pub fn planned_param_count(spec: &ModelSpec) -> Result<usize> {
        spec.validate()?;
        Ok(plan(spec).1.iter().map(|d| d.shape.iter().product::<usize>()).sum())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn param_count_in(&self, group: ParamGroup) -> usize {
        self.params.iter().zip(&self.groups).filter(|(_, g)| **g == group).map(|(p, _)| p.numel()).sum()
    }

    /// Index of the parameter called `name`.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces every parameter; shapes must match the declaration.
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return shape_err(format!("{} tensors for {} parameters", params.len(), self.params.len()));
        }
        for (i, (new, old)) in params.iter().zip(&self.params).enumerate() {
            if new.shape() != old.shape() {
                return shape_err(format!("parameter {}: {:?} vs {:?}", self.names[i], new.shape(), old.shape()));
            }
        }
        self.params = params.into_iter().map(|p| if p.requires_grad() && p.is_leaf() { p } else { p.requiring_grad() }).collect();
        Ok(())
    }

    /// Overwrites parameter `index` with `values` (same shape).
    pub fn set_param(&mut self, index: usize, values: Vec<T>) -> Result<()> {
        let shape = self.params[index].shape().to_vec();
        self.params[index] = Tensor::param(&shape, values)?;
        Ok(())
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Scalar>(&self) -> FlowNet<U> {
        FlowNet {
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| p.cast::<U>().requiring_grad()).collect(),
            names: self.names.clone(),
            groups: self.groups.clone(),
            layout: self.layout.clone(),
        }
    }

    fn conv(&self, x: &Tensor<T>, slot: &ConvSlot) -> Result<Tensor<T>> {
        x.conv2d(&self.params[slot.weight], slot.stride, slot.pad)?.add_bias(&self.params[slot.bias])
    }

    fn conv_params(&self, slot: &ConvSlot) -> Conv<T> {
        Conv { weight: self.params[slot.weight].clone(), bias: self.params[slot.bias].clone() }
    }

    /// Fusion parameters of `stage`.
    pub fn fusion_params(&self, stage: usize) -> FusionParams<T> {
        match self.layout.fusion.get(stage) {
            None | Some(FusionSlot::None) => FusionParams::None,
            Some(FusionSlot::Bidirectional { c2f, f2c }) => {
                FusionParams::Bidirectional { c2f: self.conv_params(c2f), f2c: self.conv_params(f2c) }
            }
            Some(FusionSlot::Unidirectional { c2f }) => FusionParams::Unidirectional { c2f: self.conv_params(c2f) },
            Some(FusionSlot::Concat { to_frame, to_cond }) => {
                FusionParams::Concat { to_frame: self.conv_params(to_frame), to_cond: self.conv_params(to_cond) }
            }
        }
    }

    fn as_image(&self, x: &Tensor<T>, channels: usize, what: &str) -> Result<Tensor<T>> {
        match x.shape() {
            [h, w] if channels == 1 => x.reshape(&[1, *h, *w]),
            [c, _, _] if *c == channels => Ok(x.clone()),
            s => shape_err(format!("{what}: expected {channels} channel(s), got shape {s:?}")),
        }
    }

    /// Encodes one frame under one condition mask; returns the fused frame
    /// features after every stage (finest first).
    pub fn cce_forward(&self, frame: &Tensor<T>, mask: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let raw = self.as_image(frame, self.spec.image_channels, "frame")?;
        // Centre intensities so the cost volume is not dominated by mean brightness.
        let mut f = raw.sub(&Tensor::full(raw.shape(), T::lit(INPUT_CENTER))?)?;
        let mut c = self.as_image(mask, 1, "condition mask")?;
        if f.shape()[1..] != c.shape()[1..] {
            return shape_err(format!("mask {:?} does not match frame {:?}", c.shape(), f.shape()));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let mut feats = Vec::with_capacity(self.spec.stages());
        for s in 0..self.spec.stages() {
            f = self.conv(&f, &self.layout.ffe[s])?.leaky_relu(slope);
            if self.spec.use_cfe {
                c = self.conv(&c, &self.layout.cfe[s])?.leaky_relu(slope);
                (f, c) = fuse(&f, &c, &self.fusion_params(s))?;
            }
            feats.push(f.clone());
        }
        Ok(feats)
    }

    /// Predicts flow from `i1` (query) to `i2` (reference).
    pub fn forward(&self, i1: &Tensor<T>, i2: &Tensor<T>, query_mask: &Tensor<T>, ref_mask: &Tensor<T>) -> Result<FlowOutput<T>> {
        let x1 = self.as_image(i1, self.spec.image_channels, "query frame")?;
        let x2 = self.as_image(i2, self.spec.image_channels, "reference frame")?;
        if x1.shape() != x2.shape() {
            return shape_err(format!("frames differ: {:?} vs {:?}", x1.shape(), x2.shape()));
        }
        let (h, w) = (x1.shape()[1], x1.shape()[2]);
        let f1 = self.cce_forward(&x1, query_mask)?;
        let f2 = self.cce_forward(&x2, ref_mask)?;
        let n = self.spec.stages();
        let (top1, top2) = (&f1[n - 1], &f2[n - 1]);
        let dec_in = if self.spec.corr_radius > 0 {
            Tensor::concat(&[top1.clone(), correlation_volume(top1, top2, self.spec.corr_radius)?])?
        } else {
            Tensor::concat(&[top1.clone(), top2.clone()])?
        };
        let slope = T::lit(LEAKY_SLOPE);
        let hidden = self.conv(&dec_in, &self.layout.coarse[0])?.leaky_relu(slope);
        let mut flow = self.conv(&hidden, &self.layout.coarse[1])?;
        let mut preds = vec![(n - 1, flow.clone())];
        for block in &self.layout.refine {
            let st = block.stage;
            let (sh, sw) = (f1[st].shape()[1], f1[st].shape()[2]);
            let up = flow.resize_bilinear(sh, sw)?.scale(T::lit(self.spec.strides[st + 1] as f64));
            let mut parts = vec![up.clone(), f1[st].clone()];
            if self.spec.refine_corr_radius > 0 {
                parts.push(correlation_volume(&f1[st], &f2[st], self.spec.refine_corr_radius)?);
            }
            let mut x = Tensor::concat(&parts)?;
            for slot in &block.hidden {
                x = self.conv(&x, slot)?.leaky_relu(slope);
            }
            flow = up.add(&self.conv(&x, &block.out)?)?;
            preds.push((st, flow.clone()));
        }
        let mut scales = Vec::with_capacity(preds.len());
        for (st, p) in preds {
            let ratio = self.spec.cumulative_stride(st) as f64;
            let full = p.resize_bilinear(h, w)?.scale(T::lit(ratio));
            if !full.all_finite() {
                return Err(Error::NonFinite(format!("flow prediction at stage {st}")));
            }
            scales.push(FlowField::new(full)?);
        }
        let flow = scales.last().expect("at least the coarse prediction").clone();
        Ok(FlowOutput { flow, scales })
    }

    /// [`forward`](Self::forward) with `f64` condition masks.
    pub fn forward_masked(
        &self,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
        query: &ConditionMask,
        reference: &ConditionMask,
    ) -> Result<FlowOutput<T>> {
        self.forward(i1, i2, &query.values.cast(), &reference.values.cast())
    }
}

/// Scaled dot-product cost volume over a `(2r+1)²` displacement window.
pub fn correlation_volume<T: Scalar>(feat1: &Tensor<T>, feat2: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    feat1.correlation(feat2, radius)
}

#[cfg(test)]
mod tests;
