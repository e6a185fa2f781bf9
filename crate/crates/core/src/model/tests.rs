use super::*;
use crate::tensor::{backward, grad_check};

fn conv_count(out: usize, inp: usize, k: usize) -> usize {
    out * inp * k * k + out
}

/// Independent parameter count from the architecture description.
fn expected_count(spec: &ModelSpec) -> usize {
    let w = &spec.widths;
    let n = w.len();
    let mut total = 0;
    let mut inp = spec.image_channels;
    for &c in w {
        total += conv_count(c, inp, 3);
        inp = c;
    }
    if spec.use_cfe {
        let mut inp = 1;
        for &c in w {
            total += conv_count(c, inp, 3);
            inp = c;
        }
        for &c in w {
            total += match spec.fusion {
                FusionKind::None => 0,
                FusionKind::Conv1x1Unidirectional => conv_count(c, c, 1),
                FusionKind::Conv1x1Bidirectional => 2 * conv_count(c, c, 1),
                FusionKind::Concat => 2 * conv_count(c, 2 * c, 1),
            };
        }
    }
    let side = 2 * spec.corr_radius + 1;
    let dec_in = if spec.corr_radius > 0 { w[n - 1] + side * side } else { 2 * w[n - 1] };
    total += conv_count(w[n - 1], dec_in, 3) + conv_count(2, w[n - 1], 3);
    if spec.refine_convs > 0 {
        let rs = 2 * spec.refine_corr_radius + 1;
        let extra = if spec.refine_corr_radius > 0 { rs * rs } else { 0 };
        for &c in &w[..n - 1] {
            total += conv_count(c, c + 2 + extra, 3) + (spec.refine_convs - 1) * conv_count(c, c, 3) + conv_count(2, c, 3);
        }
    }
    total
}

fn tiny() -> ModelSpec {
    ModelSpec { widths: vec![3, 4], strides: vec![2, 2], corr_radius: 1, ..ModelSpec::default() }
}

#[test]
fn default_parameter_counts() {
    let net = FlowNet::<f32>::build(&ModelSpec::default(), 0).unwrap();
    assert_eq!(net.param_count_in(ParamGroup::Ffe), 23296);
    assert_eq!(net.param_count_in(ParamGroup::Cfe), 23296);
    assert_eq!(net.param_count_in(ParamGroup::Fusion), 10976);
    assert_eq!(net.param_count_in(ParamGroup::Decoder), 83584 + 1154 + 17024 + 578 + 6208 + 290);
    assert_eq!(net.param_count(), expected_count(&ModelSpec::default()));
    let base = FlowNet::<f32>::build(&ModelSpec::baseline(), 0).unwrap();
    assert_eq!(base.param_count(), net.param_count() - 23296 - 10976);
}

#[test]
fn parameter_counts_match_oracle_for_all_fusions() {
    for fusion in FusionKind::ALL {
        for refine in [0, 2] {
            for corr in [0, 2] {
                let spec = ModelSpec { fusion, refine_convs: refine, corr_radius: corr, refine_corr_radius: corr / 2, ..tiny() };
                let net = FlowNet::<f32>::build(&spec, 1).unwrap();
                assert_eq!(net.param_count(), expected_count(&spec), "{}", spec.describe());
            }
        }
    }
}

#[test]
fn shared_modules_share_initial_values() {
    let a = FlowNet::<f32>::build(&ModelSpec::default(), 7).unwrap();
    let b = FlowNet::<f32>::build(&ModelSpec::baseline(), 7).unwrap();
    for (i, name) in b.names().iter().enumerate() {
        let j = a.index_of(name).unwrap();
        assert!(a.params()[j].bitwise_eq(&b.params()[i]), "{name}");
    }
    let c = FlowNet::<f32>::build(&ModelSpec::default(), 8).unwrap();
    assert!(!a.params()[0].bitwise_eq(&c.params()[0]));
}

#[test]
fn output_shapes_and_scales() {
    let spec = tiny();
    let net = FlowNet::<f64>::build(&spec, 2).unwrap();
    let i1 = Tensor::create(&[1, 12, 16], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 1 }).unwrap();
    let i2 = Tensor::create(&[1, 12, 16], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 2 }).unwrap();
    let m = Tensor::ones(&[1, 12, 16]).unwrap();
    let out = net.forward(&i1, &i2, &m, &m).unwrap();
    assert_eq!(out.flow.dims(), (12, 16));
    assert_eq!(out.scales.len(), 2);
    assert!(out.flow.tensor().bitwise_eq(out.scales[1].tensor()));
    assert!(net.forward(&i1, &i2, &Tensor::ones(&[1, 12, 15]).unwrap(), &m).is_err());
}

#[test]
fn zero_fusion_makes_condition_irrelevant_at_init() {
    let net = FlowNet::<f64>::build(&tiny(), 3).unwrap();
    let i1 = Tensor::create(&[1, 8, 8], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 4 }).unwrap();
    let a = net.cce_forward(&i1, &Tensor::ones(&[1, 8, 8]).unwrap()).unwrap();
    let b = net.cce_forward(&i1, &Tensor::zeros(&[1, 8, 8]).unwrap()).unwrap();
    assert!(a[1].bitwise_eq(&b[1]));
}

#[test]
fn concat_fusion_starts_as_identity() {
    let spec = ModelSpec { fusion: FusionKind::Concat, ..tiny() };
    let net = FlowNet::<f64>::build(&spec, 3).unwrap();
    let f = Tensor::create(&[3, 4, 4], crate::Init::Normal { mean: 0.0, std: 1.0, seed: 9 }).unwrap();
    let c = Tensor::create(&[3, 4, 4], crate::Init::Normal { mean: 0.0, std: 1.0, seed: 10 }).unwrap();
    let (f2, c2) = fuse(&f, &c, &net.fusion_params(0)).unwrap();
    assert!(f2.max_abs_diff(&f) < 1e-15);
    assert!(c2.max_abs_diff(&c) < 1e-15);
}

#[test]
fn fusion_gradient_matches_finite_differences() {
    for fusion in [FusionKind::Conv1x1Bidirectional, FusionKind::Concat, FusionKind::Conv1x1Unidirectional] {
        let spec = ModelSpec { fusion, ..tiny() };
        let mut net = FlowNet::<f64>::build(&spec, 5).unwrap();
        // Make the zero-initialized fusion convs non-trivial.
        for i in 0..net.params().len() {
            if net.groups()[i] == ParamGroup::Fusion {
                let shape = net.params()[i].shape().to_vec();
                let v = Tensor::<f64>::create(&shape, crate::Init::Normal { mean: 0.0, std: 0.3, seed: i as u64 })
                    .unwrap()
                    .to_vec();
                net.set_param(i, v).unwrap();
            }
        }
        let f = Tensor::create(&[3, 4, 4], crate::Init::Normal { mean: 0.0, std: 1.0, seed: 1 }).unwrap().requiring_grad();
        let c = Tensor::create(&[3, 4, 4], crate::Init::Normal { mean: 0.0, std: 1.0, seed: 2 }).unwrap().requiring_grad();
        let fp = net.fusion_params(0);
        let rep = grad_check(
            |xs| {
                let (a, b) = fuse(&xs[0], &xs[1], &fp)?;
                Ok(a.mul(&a)?.sum().add(&b.sum())?)
            },
            &[f, c],
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{fusion}: {rep:?}");
    }
}

#[test]
fn every_parameter_receives_a_gradient_path() {
    let spec = tiny();
    let mut net = FlowNet::<f64>::build(&spec, 6).unwrap();
    for i in 0..net.params().len() {
        if net.groups()[i] == ParamGroup::Fusion {
            let shape = net.params()[i].shape().to_vec();
            let v = vec![0.05; shape.iter().product()];
            net.set_param(i, v).unwrap();
        }
    }
    let i1 = Tensor::create(&[1, 8, 8], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 1 }).unwrap();
    let i2 = Tensor::create(&[1, 8, 8], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 2 }).unwrap();
    let m = Tensor::create(&[1, 8, 8], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 3 }).unwrap();
    let out = net.forward(&i1, &i2, &m, &m).unwrap();
    let loss = out.flow.tensor().mul(out.flow.tensor()).unwrap().sum();
    let g = backward(&loss).unwrap();
    // The condition branch after the last fusion feeds nothing downstream.
    let last = format!("fusion.{}.f2c", spec.stages() - 1);
    for (p, name) in net.params().iter().zip(net.names()) {
        if name.starts_with(&last) {
            continue;
        }
        assert!(g.get(p).is_some(), "{name} has no gradient");
    }
}

#[test]
fn cast_preserves_values() {
    let net = FlowNet::<f32>::build(&tiny(), 1).unwrap();
    let back = net.cast::<f64>().cast::<f32>();
    for (a, b) in net.params().iter().zip(back.params()) {
        assert!(a.bitwise_eq(b));
    }
}
