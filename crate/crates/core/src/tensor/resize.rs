//! Bilinear resampling with half-pixel (align-corners = false) centers.

use super::ops::{GradStore, Op};
use super::{Scalar, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Source taps `(i0, i1, frac)` for each output coordinate along one axis.
pub(crate) fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Resizes a `[C,H,W]` tensor to `[C,out_h,out_w]`.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 3 {
            return shape_err(format!("resize expects [C,H,W], got {:?}", self.shape()));
        }
        if out_h == 0 || out_w == 0 {
            return arg_err("resize target must be at least 1x1");
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let ty = axis_taps(h, out_h);
        let tx = axis_taps(w, out_w);
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = &self.data()[ch * h * w..][..h * w];
            for &(y0, y1, fy) in &ty {
                let fy = T::lit(fy);
                for &(x0, x1, fx) in &tx {
                    let fx = T::lit(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        Ok(Tensor::from_op(vec![c, out_h, out_w], out, Op::Resize(self.clone())))
    }
}

pub(crate) fn resize_backward<T: Scalar>(x: &Tensor<T>, out_shape: &[usize], g: &[T], store: &mut GradStore<T>) {
    let Some(s) = store.slot(x) else { return };
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    for ch in 0..c {
        let plane = &mut s[ch * h * w..][..h * w];
        let gp = &g[ch * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let go = gp[oy * ow + ox];
                let top = go * (T::one() - fy);
                let bot = go * fy;
                plane[y0 * w + x0] = plane[y0 * w + x0] + top * (T::one() - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + top * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + bot * (T::one() - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + bot * fx;
            }
        }
    }
}
