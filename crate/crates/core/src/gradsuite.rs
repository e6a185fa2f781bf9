//! Finite-difference suite covering every differentiable operation and the
//! full network-plus-mix-loss composition, in 64-bit.

use crate::error::Result;
use crate::flow::FlowField;
use crate::keypoints::random_points;
use crate::losses::{alpha_weights, multiscale_loss, LossConfig};
use crate::masks::{make_mask, reference_mask, MaskPattern};
use crate::model::{FlowNet, FusionKind, ModelSpec};
use crate::seed::derive_seed;
use crate::tensor::{grad_check, GradCheckReport, Init, Tensor};

/// Relative-error bound the suite is held to.
pub const SUITE_TOLERANCE: f64 = 1e-4;
/// Base finite-difference step (scaled by `max(1, |x|)` per coordinate).
pub const SUITE_EPS: f64 = 1e-5;

/// One checked case.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Result of [`run_grad_suite`].
#[derive(Debug, Clone, Default)]
pub struct GradSuiteReport {
    pub cases: Vec<GradCase>,
}

impl GradSuiteReport {
    /// The case with the largest relative error.
    pub fn worst(&self) -> Option<&GradCase> {
        self.cases.iter().max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.report.max_rel_error)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.cases.iter().all(|c| c.report.max_rel_error <= tolerance && c.report.checked > 0)
    }
}

fn uniform(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    Tensor::create(shape, Init::Uniform { low: -1.0, high: 1.0, seed })
}

/// Reduces `t` to a scalar through fixed random weights so that every output
/// element contributes a distinct gradient.
fn probe(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = uniform(t.shape(), seed)?;
    t.weighted_sum(w.data())
}

/// The 2-stage configuration used for the whole-model check.
pub fn suite_spec() -> ModelSpec {
    ModelSpec {
        widths: vec![3, 4],
        strides: vec![2, 2],
        fusion: FusionKind::Conv1x1Bidirectional,
        corr_radius: 1,
        refine_convs: 1,
        refine_corr_radius: 1,
        use_cfe: true,
        image_channels: 1,
    }
}

type CaseFn = fn(u64) -> Result<GradCheckReport>;

fn op_cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("add", |s| {
            let (a, b) = (uniform(&[3, 4], s)?, uniform(&[3, 4], s + 1)?);
            grad_check(|v| probe(&v[0].add(&v[1])?, s + 2), &[a, b], SUITE_EPS)
        }),
        ("sub", |s| {
            let (a, b) = (uniform(&[3, 4], s)?, uniform(&[3, 4], s + 1)?);
            grad_check(|v| probe(&v[0].sub(&v[1])?, s + 2), &[a, b], SUITE_EPS)
        }),
        ("mul", |s| {
            let (a, b) = (uniform(&[3, 3], s)?, uniform(&[3, 3], s + 1)?);
            grad_check(|v| probe(&v[0].mul(&v[1])?, s + 2), &[a, b], SUITE_EPS)
        }),
        ("scale", |s| grad_check(|v| probe(&v[0].scale(-2.5), s + 1), &[uniform(&[5], s)?], SUITE_EPS)),
        ("relu", |s| grad_check(|v| probe(&v[0].relu(), s + 1), &[uniform(&[4, 4], s)?], SUITE_EPS)),
        ("leaky_relu", |s| grad_check(|v| probe(&v[0].leaky_relu(0.1), s + 1), &[uniform(&[4, 4], s)?], SUITE_EPS)),
        ("reshape", |s| grad_check(|v| probe(&v[0].reshape(&[6, 2])?, s + 1), &[uniform(&[3, 4], s)?], SUITE_EPS)),
        ("sum", |s| grad_check(|v| Ok(v[0].mul(&v[0])?.sum()), &[uniform(&[2, 3], s)?], SUITE_EPS)),
        ("mean", |s| grad_check(|v| Ok(v[0].mul(&v[0])?.mean()), &[uniform(&[2, 3], s)?], SUITE_EPS)),
        ("weighted_sum", |s| grad_check(|v| probe(&v[0].mul(&v[0])?, s + 1), &[uniform(&[3, 3], s)?], SUITE_EPS)),
        ("concat", |s| {
            let (a, b) = (uniform(&[2, 3, 3], s)?, uniform(&[1, 3, 3], s + 1)?);
            grad_check(|v| probe(&Tensor::concat(&[v[0].clone(), v[1].clone()])?, s + 2), &[a, b], SUITE_EPS)
        }),
        ("conv2d", |s| {
            let (x, k) = (uniform(&[2, 6, 6], s)?, uniform(&[3, 2, 3, 3], s + 1)?);
            grad_check(|v| probe(&v[0].conv2d(&v[1], 2, 1)?, s + 2), &[x, k], SUITE_EPS)
        }),
        ("add_bias", |s| {
            let (x, b) = (uniform(&[3, 2, 2], s)?, uniform(&[3], s + 1)?);
            grad_check(|v| probe(&v[0].add_bias(&v[1])?, s + 2), &[x, b], SUITE_EPS)
        }),
        ("resize_bilinear_up", |s| grad_check(|v| probe(&v[0].resize_bilinear(7, 5)?, s + 1), &[uniform(&[2, 3, 2], s)?], SUITE_EPS)),
        ("resize_bilinear_down", |s| grad_check(|v| probe(&v[0].resize_bilinear(3, 2)?, s + 1), &[uniform(&[2, 6, 5], s)?], SUITE_EPS)),
        ("correlation", |s| {
            let (a, b) = (uniform(&[3, 4, 5], s)?, uniform(&[3, 4, 5], s + 1)?);
            grad_check(|v| probe(&v[0].correlation(&v[1], 1)?, s + 2), &[a, b], SUITE_EPS)
        }),
        ("epe_map_l1", |s| {
            let t = uniform(&[2, 3, 3], s + 1)?;
            grad_check(|v| probe(&v[0].epe_map(&t, 1)?, s + 2), &[uniform(&[2, 3, 3], s)?], SUITE_EPS)
        }),
        ("epe_map_l2", |s| {
            let t = uniform(&[2, 3, 3], s + 1)?;
            grad_check(|v| probe(&v[0].epe_map(&t, 2)?, s + 2), &[uniform(&[2, 3, 3], s)?], SUITE_EPS)
        }),
    ]
}

/// Gradient of the multi-scale mix loss with respect to every network
/// parameter, on a randomly parameterized 2-stage model over 8×8 frames.
pub fn model_case(seed: u64) -> Result<GradCheckReport> {
    let spec = suite_spec();
    let (h, w) = (8, 8);
    let template = FlowNet::<f64>::build(&spec, seed)?;
    // Random values everywhere (including the zero-initialized heads and
    // fusion convolutions) so every path carries gradient.
    let params = template
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| Tensor::create(p.shape(), Init::Uniform { low: -0.5, high: 0.5, seed: derive_seed(seed, i as u64) }))
        .collect::<Result<Vec<_>>>()?;
    let i1 = Tensor::create(&[1, h, w], Init::Uniform { low: 0.0, high: 1.0, seed: derive_seed(seed, 1001) })?;
    let i2 = Tensor::create(&[1, h, w], Init::Uniform { low: 0.0, high: 1.0, seed: derive_seed(seed, 1002) })?;
    let gt = FlowField::new(Tensor::create(&[2, h, w], Init::Uniform { low: -2.0, high: 2.0, seed: derive_seed(seed, 1003) })?)?;
    let kps = random_points(h, w, 3, derive_seed(seed, 1004))?;
    let query = make_mask(&kps, (h, w), MaskPattern::Point, 3, 1.0, None)?.values;
    let reference = reference_mask((h, w))?.values;
    let cfg = LossConfig { mu: 3, sigma: 1.0, p: 2, ..LossConfig::default() };
    let alpha = alpha_weights(&kps, (h, w), cfg.mu, cfg.sigma)?;
    grad_check(
        |v| {
            let mut net = template.clone();
            net.set_params(v.to_vec())?;
            let out = net.forward(&i1, &i2, &query, &reference)?;
            multiscale_loss(&gt, &out.scales, Some(&alpha), &cfg)
        },
        &params,
        SUITE_EPS,
    )
}

/// Runs every operation case and the model case for each seed.
pub fn run_grad_suite(seeds: impl IntoIterator<Item = u64>) -> Result<GradSuiteReport> {
    let mut report = GradSuiteReport::default();
    for seed in seeds {
        for (name, case) in op_cases() {
            report.cases.push(GradCase { name: name.to_string(), seed, report: case(derive_seed(seed, 7))? });
        }
        report.cases.push(GradCase { name: "model+mix_loss".into(), seed, report: model_case(seed)? });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_suite_is_within_tolerance() {
        let r = run_grad_suite([3]).unwrap();
        let worst = r.worst().unwrap();
        assert!(r.passed(SUITE_TOLERANCE), "{} (seed {}): {:?}", worst.name, worst.seed, worst.report);
    }
}
