use super::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Uniform { low: -1.0, high: 1.0, seed }).unwrap()
}

#[test]
fn create_variants() {
    let z = Tensor::<f64>::create(&[2, 2], Init::Zeros).unwrap();
    assert_eq!(z.data(), &[0.0; 4]);
    let v = Tensor::<f64>::create(&[3], Init::Values(vec![1.0, 2.0, 3.0])).unwrap();
    assert_eq!(v.data(), &[1.0, 2.0, 3.0]);
    let a = Tensor::<f64>::create(&[4], Init::Normal { mean: 0.0, std: 1.0, seed: 7 }).unwrap();
    let b = Tensor::<f64>::create(&[4], Init::Normal { mean: 0.0, std: 1.0, seed: 7 }).unwrap();
    assert!(a.bitwise_eq(&b));
}

#[test]
fn create_errors() {
    assert!(Tensor::<f64>::create(&[2, 0], Init::Zeros).is_err());
    assert!(Tensor::<f64>::create(&[], Init::Zeros).is_err());
    assert!(matches!(
        Tensor::<f64>::create(&[2, 2], Init::Values(vec![1.0])),
        Err(crate::Error::ShapeMismatch(_))
    ));
}

#[test]
fn identity_kernel_passes_input_through() {
    let x = rand_t(&[1, 5, 7], 3);
    let k = t(&[1, 1, 1, 1], &[1.0]);
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert!(y.bitwise_eq(&x));
}

#[test]
fn ones_kernel_on_constant_image() {
    let x = Tensor::<f64>::full(&[1, 6, 6], 2.5).unwrap();
    let k = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4]);
    assert!(y.data().iter().all(|&v| v == 22.5));
}

#[test]
fn conv_output_extent() {
    let x = rand_t(&[2, 9, 8], 1);
    let k = rand_t(&[3, 2, 3, 3], 2);
    let y = x.conv2d(&k, 2, 1).unwrap();
    assert_eq!(y.shape(), &[3, 5, 4]);
    assert!(matches!(x.conv2d(&rand_t(&[3, 1, 3, 3], 2), 1, 0), Err(crate::Error::ShapeMismatch(_))));
}

#[test]
fn conv_matches_direct_loop() {
    let x = rand_t(&[2, 7, 6], 11);
    let k = rand_t(&[3, 2, 3, 2], 12);
    let (s, p) = (2, 1);
    let y = x.conv2d(&k, s, p).unwrap();
    let (oh, ow) = (y.shape()[1], y.shape()[2]);
    for o in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..2 {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy >= 0 && iy < 7 && ix >= 0 && ix < 6 {
                                acc += x.at(&[c, iy as usize, ix as usize]) * k.at(&[o, c, ky, kx]);
                            }
                        }
                    }
                }
                assert!((acc - y.at(&[o, oy, ox])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let x = rand_t(&[2, 6, 6], 5);
    let k = rand_t(&[3, 2, 3, 3], 6);
    let w = rand_t(&[3, 6, 6], 7);
    let rep = grad_check(
        |v| v[0].conv2d(&v[1], 1, 1)?.weighted_sum(w.data()),
        &[x, k],
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
}

#[test]
fn zero_kernel_gives_zero_output() {
    let x = rand_t(&[2, 5, 5], 9);
    let k = Tensor::<f64>::zeros(&[4, 2, 3, 3]).unwrap();
    assert!(x.conv2d(&k, 1, 1).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn elementwise_basics() {
    let x = rand_t(&[3, 3], 1);
    let z = Tensor::<f64>::zeros(&[3, 3]).unwrap();
    assert!(x.elementwise(Elementwise::Add, Some(&z)).unwrap().bitwise_eq(&x));
    let r = t(&[3], &[-1.0, 0.0, 2.0]).elementwise(Elementwise::Relu, None).unwrap();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    let l = t(&[2], &[-2.0, 3.0]).elementwise(Elementwise::LeakyRelu(0.1), None).unwrap();
    assert_eq!(l.data(), &[-0.2, 3.0]);
    assert!(x.add(&t(&[9], &[0.0; 9])).is_err());
    assert!(x.elementwise(Elementwise::Relu, Some(&z)).is_err());
}

#[test]
fn mul_gradient() {
    let a = rand_t(&[3, 3], 21);
    let b = rand_t(&[3, 3], 22);
    let rep = grad_check(|v| Ok(v[0].mul(&v[1])?.sum()), &[a, b], 1e-5).unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
}

#[test]
fn resize_identity_and_constant() {
    let x = rand_t(&[2, 5, 4], 4);
    assert!(x.resize_bilinear(5, 4).unwrap().bitwise_eq(&x));
    let c = Tensor::<f64>::full(&[1, 3, 3], 0.7).unwrap();
    let y = c.resize_bilinear(7, 2).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn resize_two_by_two_to_four_by_four() {
    // Sampling positions along each axis for 2 -> 4 with half-pixel centers,
    // clamped at the borders: 0, 0.25, 0.75, 1. The input is the plane 2y + x.
    let pos = [0.0, 0.25, 0.75, 1.0];
    let x = t(&[1, 2, 2], &[0.0, 1.0, 2.0, 3.0]);
    let y = x.resize_bilinear(4, 4).unwrap();
    for r in 0..4 {
        for c in 0..4 {
            let expected = 2.0 * pos[r] + pos[c];
            assert!((y.at(&[0, r, c]) - expected).abs() < 1e-15, "({r},{c})");
        }
    }
}

#[test]
fn resize_gradient() {
    let x = rand_t(&[2, 3, 5], 31);
    let w = rand_t(&[2, 7, 4], 32);
    let rep = grad_check(|v| v[0].resize_bilinear(7, 4)?.weighted_sum(w.data()), &[x], 1e-5).unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
}

#[test]
fn backward_of_sum_is_ones() {
    let x = rand_t(&[2, 3, 4], 8).requiring_grad();
    let g = backward(&x.sum()).unwrap();
    assert!(g.wrt(&x).data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_zero_scaled_sum_is_zero() {
    let x = rand_t(&[5], 8).requiring_grad();
    let g = backward(&x.scale(0.0).sum()).unwrap();
    assert!(g.wrt(&x).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let x = rand_t(&[5], 8).requiring_grad();
    assert!(backward(&x).is_err());
}

#[test]
fn untouched_parameter_gets_zero() {
    let x = rand_t(&[3], 1).requiring_grad();
    let unused = rand_t(&[2, 2], 2).requiring_grad();
    let g = backward(&x.sum()).unwrap();
    assert!(g.get(&unused).is_none());
    assert_eq!(g.wrt(&unused).data(), &[0.0; 4]);
}

#[test]
fn conv_relu_mean_pipeline_gradient() {
    let x = rand_t(&[2, 6, 6], 41);
    let k = rand_t(&[3, 2, 3, 3], 42);
    let rep = grad_check(|v| Ok(v[0].conv2d(&v[1], 2, 1)?.relu().mean()), &[x, k], 1e-5).unwrap();
    assert!(rep.max_rel_error <= 1e-5, "{rep:?}");
}

#[test]
fn grad_check_sum_of_squares_and_constant() {
    let x = rand_t(&[4, 3], 51);
    let rep = grad_check(|v| Ok(v[0].mul(&v[0])?.sum()), &[x.clone()], 1e-5).unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
    let rep = grad_check(|_| Ok(Tensor::scalar(3.0)), &[x], 1e-5).unwrap();
    assert_eq!(rep.max_rel_error, 0.0);
}

#[test]
fn grad_check_rejects_vector_output() {
    let x = rand_t(&[3], 1);
    assert!(grad_check(|v| Ok(v[0].clone()), &[x], 1e-5).is_err());
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x = rand_t(&[2, 5, 5], 61).requiring_grad();
    let k = rand_t(&[2, 2, 3, 3], 62).requiring_grad();
    let y = x.conv2d(&k, 1, 1).unwrap();
    let l1 = y.leaky_relu(0.1).mean();
    let l2 = y.mul(&y).unwrap().sum();
    let g1 = backward(&l1).unwrap();
    let g2 = backward(&l2).unwrap();
    let g12 = backward(&l1.add(&l2).unwrap()).unwrap();
    for p in [&x, &k] {
        let sum = g1.wrt(p).add(&g2.wrt(p)).unwrap();
        assert!(sum.max_abs_diff(&g12.wrt(p)) < 1e-12);
    }
}

#[test]
fn correlation_gradient_and_shape() {
    let a = rand_t(&[3, 4, 5], 71);
    let b = rand_t(&[3, 4, 5], 72);
    let c = a.correlation(&b, 1).unwrap();
    assert_eq!(c.shape(), &[9, 4, 5]);
    let w = rand_t(&[9, 4, 5], 73);
    let rep = grad_check(|v| v[0].correlation(&v[1], 1)?.weighted_sum(w.data()), &[a, b], 1e-5).unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
}

#[test]
fn concat_bias_reshape_gradients() {
    let a = rand_t(&[2, 3, 3], 81);
    let b = rand_t(&[1, 3, 3], 82);
    let bias = rand_t(&[3], 83);
    let w = rand_t(&[27], 84);
    let rep = grad_check(
        |v| Tensor::concat(&[v[0].clone(), v[1].clone()])?.add_bias(&v[2])?.reshape(&[27])?.weighted_sum(w.data()),
        &[a, b, bias],
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
}

#[test]
fn epe_map_gradient() {
    let p = rand_t(&[2, 4, 4], 91);
    let q = rand_t(&[2, 4, 4], 92);
    let w = rand_t(&[16], 93);
    for norm in [1u8, 2] {
        let rep = grad_check(|v| v[0].epe_map(&q, norm)?.reshape(&[16])?.weighted_sum(w.data()), &[p.clone()], 1e-5)
            .unwrap();
        assert!(rep.max_rel_error <= 1e-8, "p={norm}: {rep:?}");
    }
}

#[test]
fn grad_check_flags_kinks() {
    // 1e-7 is inside the +-1e-5 probe, so relu switches branch.
    let x = t(&[2], &[1e-7, 0.5]);
    let rep = grad_check(|v| Ok(v[0].relu().sum()), &[x], 1e-5).unwrap();
    assert_eq!(rep.skipped_kinks, 1);
    assert_eq!(rep.checked, 1);
    assert!(rep.max_rel_error < 1e-9);
}

#[test]
fn precision_conversion_is_exact_from_f32() {
    let x = Tensor::<f32>::create(&[6], Init::Normal { mean: 0.0, std: 1.0, seed: 3 }).unwrap();
    let back: Tensor<f32> = x.cast::<f64>().cast();
    assert!(back.bitwise_eq(&x));
}
