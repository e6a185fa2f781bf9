use crate::error::{arg_err, Result};

/// Update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                arg_err(format!("momentum must be in [0,1), got {momentum}"))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                arg_err(format!("invalid Adam settings ({beta1}, {beta2}, {eps})"))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer state for a list of parameter buffers; moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Optimizer { kind, step: 0, first: zeros(), second }
    }

    /// Applies one update to `params[i]` with gradient `grads[i]` for every `i`
    /// where `grads[i]` is `Some`; other parameters and their state are untouched.
    pub fn update(&mut self, params: &mut [Vec<f32>], grads: &[Option<Vec<f64>>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let m = &mut self.first[i];
                    for ((w, gi), mi) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *w = (*w as f64 - lr * *mi) as f32;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((w, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                        *w = (*w as f64 - update) as f32;
                    }
                }
            }
        }
    }
}

/// Global L2 norm of the gradients present.
pub fn global_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::default(), &[2]);
        let mut p = vec![vec![1.0f32, 1.0]];
        opt.update(&mut p, &[Some(vec![0.5, -3.0])], 0.1);
        assert!((p[0][0] - 0.9).abs() < 1e-6 && (p[0][1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, &[1, 1]);
        let mut p = vec![vec![1.0f32], vec![2.0]];
        opt.update(&mut p, &[Some(vec![2.0]), None], 0.25);
        assert_eq!(p, vec![vec![0.5], vec![2.0]]);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Some(vec![3.0, 4.0]), None, Some(vec![12.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 13.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Some(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap()[0], 0.1);
    }
}
