//! Central finite-difference gradient checking.

use std::collections::HashSet;

use super::ops::Op;
use super::{backward, Scalar, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-12)` over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose ±step moved some piecewise-linear op across a kink;
    /// the central difference is not a derivative there, so they are skipped.
    pub skipped_kinks: usize,
}

/// Hash of the branch taken by every non-smooth op in the graph of `t`.
fn kink_signature<T: Scalar>(t: &Tensor<T>) -> u64 {
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bit: u64| {
        h ^= bit;
        h = h.wrapping_mul(FNV_PRIME);
    };
    let mut seen = HashSet::new();
    let mut stack = vec![t.clone()];
    while let Some(node) = stack.pop() {
        if !seen.insert(node.id()) {
            continue;
        }
        match &node.0.op {
            Op::Relu(x) | Op::LeakyRelu(x, _) => {
                for v in x.data() {
                    mix((*v > T::zero()) as u64);
                }
            }
            Op::EpeMap { pred, target, p } => {
                for (a, b) in pred.data().iter().zip(target.data()) {
                    let d = *a - *b;
                    let bits = if *p == 1 { (d > T::zero()) as u64 + 2 * (d < T::zero()) as u64 } else { (d == T::zero()) as u64 };
                    mix(bits);
                }
            }
            _ => {}
        }
        for p in node.0.op.parents() {
            stack.push(p.clone());
        }
    }
    h
}

fn scalar_of<T: Scalar>(t: &Tensor<T>) -> Result<T> {
    if t.numel() != 1 {
        return shape_err(format!("checked function must return a scalar, got shape {:?}", t.shape()));
    }
    Ok(t.data()[0])
}

/// Compares the analytic gradient of `f` against central differences.
///
/// Each coordinate is perturbed by `eps * max(1, |x|)`. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    if !(eps > 0.0) {
        return arg_err("finite-difference step must be positive");
    }
    let tracked: Vec<Tensor<T>> = inputs.iter().map(|t| t.requiring_grad()).collect();
    let out = f(&tracked)?;
    scalar_of(&out)?;
    let base_sig = kink_signature(&out);
    let grads = backward(&out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, skipped_kinks: 0 };
    let mut probe: Vec<Tensor<T>> = inputs.iter().map(|t| t.detach()).collect();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&tracked[i]);
        let base = input.to_vec();
        for j in 0..base.len() {
            let x = base[j].f64();
            let step = eps * x.abs().max(1.0);
            let eval = |probe: &mut Vec<Tensor<T>>, v: f64| -> Result<(f64, u64)> {
                let mut data = base.clone();
                data[j] = T::lit(v);
                probe[i] = Tensor::from_vec(input.shape(), data)?;
                let y = f(probe)?;
                Ok((scalar_of(&y)?.f64(), kink_signature(&y)))
            };
            let (fp, sp) = eval(&mut probe, x + step)?;
            let (fm, sm) = eval(&mut probe, x - step)?;
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            // actual perturbation after rounding to T
            let span = T::lit(x + step).f64() - T::lit(x - step).f64();
            let numeric = (fp - fm) / span;
            let a = analytic.data()[j].f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((i, j));
                }
            }
        }
        probe[i] = input.detach();
    }
    Ok(report)
}
