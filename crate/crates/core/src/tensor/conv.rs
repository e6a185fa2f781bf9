//! 2-D cross-correlation via im2col + GEMM.

use super::ops::{GradStore, Op};
use super::{Scalar, Tensor};
use crate::error::{arg_err, shape_err, Result};

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let p = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.c * g.kh * g.kw * p];
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((ch * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.oh * g.ow;
    for ch in 0..g.c {
        let plane = &mut dx[ch * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((ch * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    for (ox, &v) in row[oy * g.ow..][..g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
    if input.len() != 3 || kernel.len() != 4 {
        return shape_err(format!("conv2d expects input [C,H,W] and kernel [O,C,kh,kw], got {input:?} and {kernel:?}"));
    }
    if input[0] != kernel[1] {
        return shape_err(format!("conv2d channel mismatch: input has {} channels, kernel expects {}", input[0], kernel[1]));
    }
    if stride == 0 {
        return arg_err("conv2d stride must be positive");
    }
    let (h, w, kh, kw) = (input[1], input[2], kernel[2], kernel[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return arg_err(format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad));
    }
    Ok(Geometry {
        c: input[0],
        h,
        w,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of `[C_in,H,W]` with `[C_out,C_in,kh,kw]`, zero padding.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let g = geometry(self.shape(), kernel.shape(), stride, padding)?;
        let o = kernel.shape()[0];
        let k = g.c * g.kh * g.kw;
        let p = g.oh * g.ow;
        let mut out = vec![T::zero(); o * p];
        let cols = if g.is_pointwise() { None } else { Some(im2col(self.data(), &g)) };
        let rhs = cols.as_deref().unwrap_or(self.data());
        T::gemm(o, k, p, kernel.data(), false, rhs, false, &mut out, false);
        let keep = if kernel.requires_grad() { cols } else { None };
        Ok(Tensor::from_op(
            vec![o, g.oh, g.ow],
            out,
            Op::Conv2d { input: self.clone(), kernel: kernel.clone(), stride, padding, cols: keep },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    cols: Option<&[T]>,
    out_shape: &[usize],
    g: &[T],
    store: &mut GradStore<T>,
) {
    let geo = geometry(input.shape(), kernel.shape(), stride, padding).expect("validated in forward");
    let o = out_shape[0];
    let k = geo.c * geo.kh * geo.kw;
    let p = geo.oh * geo.ow;
    if let Some(s) = store.slot(kernel) {
        let recomputed;
        let rhs = match cols {
            Some(c) => c,
            None if geo.is_pointwise() => input.data(),
            None => {
                recomputed = im2col(input.data(), &geo);
                &recomputed
            }
        };
        // dK[o,k] += dY[o,p] · cols[k,p]^T
        T::gemm(o, p, k, g, false, rhs, true, s, true);
    }
    if let Some(s) = store.slot(input) {
        if geo.is_pointwise() {
            T::gemm(k, o, p, kernel.data(), true, g, false, s, true);
        } else {
            let mut dcols = vec![T::zero(); k * p];
            T::gemm(k, o, p, kernel.data(), true, g, false, &mut dcols, false);
            col2im_add(&dcols, &geo, s);
        }
    }
}
