use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Weights and bias of one convolution.
#[derive(Debug, Clone)]
pub struct Conv<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, 1, 0)?.add_bias(&self.bias)
    }
}

/// Per-stage fusion parameters.
#[derive(Debug, Clone)]
pub enum FusionParams<T: Scalar> {
    None,
    Bidirectional { c2f: Conv<T>, f2c: Conv<T> },
    Unidirectional { c2f: Conv<T> },
    Concat { to_frame: Conv<T>, to_cond: Conv<T> },
}

/// Mixes condition features into frame features (and back, when bidirectional).
/// Returns `(frame', cond')`.
pub fn fuse<T: Scalar>(frame: &Tensor<T>, cond: &Tensor<T>, params: &FusionParams<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if frame.shape() != cond.shape() {
        return shape_err(format!("fusion inputs differ: {:?} vs {:?}", frame.shape(), cond.shape()));
    }
    Ok(match params {
        FusionParams::None => (frame.clone(), cond.clone()),
        FusionParams::Bidirectional { c2f, f2c } => (frame.add(&c2f.apply(cond)?)?, cond.add(&f2c.apply(frame)?)?),
        FusionParams::Unidirectional { c2f } => (frame.add(&c2f.apply(cond)?)?, cond.clone()),
        FusionParams::Concat { to_frame, to_cond } => (
            to_frame.apply(&Tensor::concat(&[frame.clone(), cond.clone()])?)?,
            to_cond.apply(&Tensor::concat(&[cond.clone(), frame.clone()])?)?,
        ),
    })
}
