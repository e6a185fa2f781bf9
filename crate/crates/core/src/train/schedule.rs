use crate::error::{arg_err, Result};

/// Learning rate at the first step, as a fraction of the peak.
pub const START_DIVISOR: f64 = 25.0;
/// Learning rate at the last step, as a fraction of the peak.
pub const END_DIVISOR: f64 = 1000.0;

/// Step at which a one-cycle schedule reaches its peak.
pub fn peak_step(iterations: usize, warmup: f64) -> usize {
    if iterations < 2 {
        return 0;
    }
    (((iterations - 1) as f64 * warmup).round() as usize).clamp(1, iterations - 1)
}

/// One-cycle learning rate: linear from `max/25` at step 0 to `max` at the
/// peak step `round((iterations-1)·warmup)`, then linear to `max/1000` at the
/// final step.
pub fn one_cycle_lr(step: usize, iterations: usize, max_lr: f64, warmup: f64) -> Result<f64> {
    if step >= iterations {
        return arg_err(format!("step {step} outside schedule of {iterations} iterations"));
    }
    let start = max_lr / START_DIVISOR;
    let end = max_lr / END_DIVISOR;
    let peak = peak_step(iterations, warmup);
    if step == 0 && peak == 0 {
        return Ok(start);
    }
    if step <= peak {
        return Ok(start + (max_lr - start) * step as f64 / peak as f64);
    }
    let span = (iterations - 1 - peak) as f64;
    Ok(max_lr + (end - max_lr) * (step - peak) as f64 / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let (n, max, w) = (100, 0.01, 0.3);
        assert_eq!(one_cycle_lr(0, n, max, w).unwrap(), max / 25.0);
        assert_eq!(one_cycle_lr(peak_step(n, w), n, max, w).unwrap(), max);
        assert!((one_cycle_lr(n - 1, n, max, w).unwrap() - max / 1000.0).abs() < 1e-18);
        assert!(one_cycle_lr(n, n, max, w).is_err());
    }

    #[test]
    fn monotone_ramps() {
        let (n, max, w) = (100, 1.0, 0.25);
        let p = peak_step(n, w);
        let lr: Vec<f64> = (0..n).map(|s| one_cycle_lr(s, n, max, w).unwrap()).collect();
        assert!(lr[..=p].windows(2).all(|x| x[1] > x[0]));
        assert!(lr[p..].windows(2).all(|x| x[1] < x[0]));
    }
}
