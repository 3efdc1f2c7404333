use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn conv_identity_kernel_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f32>::from_fn([1, 1, 4, 4], |_| rng.random_range(-3.0..3.0));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::full([1, 1, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros([1]));
    let y = g.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_box_filter_preserves_constant_interior() {
    let c = 0.37;
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 1, 6, 6], c));
    let w = g.constant(Tensor::full([1, 1, 3, 3], 1.0 / 9.0));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 6, 6]);
    let out = g.value(y).data();
    for i in 1..5 {
        for j in 1..5 {
            assert!((out[i * 6 + j] - c).abs() < 1e-12);
        }
    }
    // zero padding darkens the border
    assert!(out[0] < c);
}

#[test]
fn conv_output_extent_and_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([2, 3, 9, 7]));
    let w = g.constant(Tensor::zeros([4, 3, 3, 3]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 5, 4]);
    assert!(matches!(g.conv2d(x, w, None, 0, 1), Err(Error::Argument(_))));
    let bad = g.constant(Tensor::zeros([4, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, bad, None, 1, 1), Err(Error::Dimension(_))));
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let report = GradCheck::new(1e-5, 1e-4)
        .unwrap()
        .run(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                g.sum(y)
            },
            &[x, w, b],
        )
        .unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_error);
}

fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, k, _] = w.shape().try_into().unwrap();
    let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
    let mut out = Vec::new();
    for s in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let (ii, jj) = ((i * stride + ki) as isize - pad as isize, (j * stride + kj) as isize - pad as isize);
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                    acc += x.data()[((s * c + ci) * h + ii as usize) * wd + jj as usize]
                                        * w.data()[((oc * c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loops_across_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (n, c, h, w, o, k, stride, pad) in
        [(1, 2, 5, 7, 3, 3, 1, 1), (3, 2, 6, 5, 2, 3, 2, 1), (2, 3, 4, 4, 4, 1, 1, 0), (2, 1, 7, 6, 2, 3, 2, 2), (3, 2, 5, 5, 3, 3, 1, 0)]
    {
        let x = rand_tensor(&mut rng, &[n, c, h, w]);
        let wt = rand_tensor(&mut rng, &[o, c, k, k]);
        let b = rand_tensor(&mut rng, &[o]);
        let mut g = Graph::<f64>::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
        let y = g.conv2d(xv, wv, None, stride, pad).unwrap();
        for (a, e) in g.value(y).data().iter().zip(direct_conv(&x, &wt, stride, pad)) {
            assert!((a - e).abs() < 1e-12);
        }
        let weights = rand_tensor(&mut rng, g.shape(y));
        let report = GradCheck::new(1e-5, 1e-4)
            .unwrap()
            .run(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    let r = g.constant(weights.clone());
                    let p = g.mul(y, r)?;
                    g.sum(p)
                },
                &[x, wt, b],
            )
            .unwrap();
        assert!(report.passed, "geometry {:?}: max rel err {}", (n, c, h, w, o, k, stride, pad), report.max_rel_error);
    }
}

#[test]
fn linear_identity_and_bias_only() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let eye = g.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let zero_b = g.constant(Tensor::zeros([3]));
    let y = g.linear(x, eye, Some(zero_b)).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let z = g.constant(Tensor::zeros([2, 3]));
    let w = g.constant(Tensor::full([4, 3], 0.7));
    let b = g.constant(Tensor::new([4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let y = g.linear(z, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5, 3.0, 1.0, -2.0, 0.5, 3.0]);
    let wrong = g.constant(Tensor::zeros([4, 2]));
    assert!(matches!(g.linear(z, wrong, None), Err(Error::Dimension(_))));
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[4])];
    let report = GradCheck::new(1e-5, 1e-4)
        .unwrap()
        .run(
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                let y2 = g.mul(y, y)?;
                g.sum(y2)
            },
            &inputs,
        )
        .unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_error);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([3]));
    let y = g.softmax_lastdim(x).unwrap();
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::new([2], vec![10.0, 10.0 - 1e9]).unwrap());
    let y = g.softmax_lastdim(x).unwrap();
    assert_eq!(g.value(y).data()[0], 1.0);
    assert!(g.value(y).data()[1] < 1e-12);

    let x = g.constant(Tensor::full([2, 2], f64::NEG_INFINITY));
    assert!(matches!(g.softmax_lastdim(x), Err(Error::Argument(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::from_fn([3, 5], |_| rng.random_range(-4.0..4.0));
    let shifted = t.map(|v| v + 123.5);
    let mut g = Graph::<f64>::new();
    let a = g.constant(t);
    let b = g.constant(shifted);
    let ya = g.softmax_lastdim(a).unwrap();
    let yb = g.softmax_lastdim(b).unwrap();
    for row in g.value(ya).data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-7);
    }
    assert!(g.value(ya).max_abs_diff(g.value(yb)).unwrap() < 1e-12);
}

#[test]
fn norm_act_constant_input_gives_silu_of_shift() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 4, 3, 3], 2.5));
    let scale = g.constant(Tensor::full([4], 1.7));
    let shift = g.constant(Tensor::new([4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap());
    let y = g.norm_act(x, 2, scale, shift).unwrap();
    let out = g.value(y).data();
    for (c, s) in [-1.0f64, 0.0, 0.5, 2.0].iter().enumerate() {
        let expect = s / (1.0 + (-s).exp());
        for k in 0..9 {
            assert!((out[c * 9 + k] - expect).abs() < 1e-12);
        }
    }
    assert!(matches!(g.norm_act(x, 3, scale, shift), Err(Error::Argument(_))));
}

#[test]
fn group_norm_keeps_standardized_input() {
    // Two groups of two channels; each group already has mean 0, variance 1.
    let base = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
    let data: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new([1, 4, 2, 2], data.clone()).unwrap());
    let one = g.constant(Tensor::full([4], 1.0));
    let zero = g.constant(Tensor::zeros([4]));
    let y = g.group_norm(x, 2, one, zero).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&data) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn norm_act_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [rand_tensor(&mut rng, &[2, 4, 3, 3]), rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[4])];
    let weights = rand_tensor(&mut rng, &[2, 4, 3, 3]);
    let report = GradCheck::new(1e-5, 1e-4)
        .unwrap()
        .run(
            |g, v| {
                let y = g.norm_act(v[0], 2, v[1], v[2])?;
                let w = g.constant(weights.clone());
                let p = g.mul(y, w)?;
                g.sum(p)
            },
            &inputs,
        )
        .unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_error);
}

#[test]
fn backward_simple_roots() {
    let x = Tensor::new([2, 2], vec![1.5, -2.0, 0.25, 4.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let v = g.param(x.clone());
    let s = g.sum(v).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(v).unwrap().data(), &[1.0; 4]);

    let mut g = Graph::<f64>::new();
    let v = g.param(x.clone());
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    g.backward(half).unwrap();
    assert_eq!(g.grad(v).unwrap(), x);
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::full([3], 1.0));
    assert!(matches!(g.backward(v), Err(Error::Argument(_))));
    let s = g.sum(v).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::State(_))));

    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::full([3], 1.0));
    let s = g.sum(v).unwrap();
    g.backward_retained(s).unwrap();
    g.backward(s).unwrap();
}

#[test]
fn unconnected_leaves_get_zero_grads() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::full([2], 1.0));
    let b = g.param(Tensor::full([3], 1.0));
    let s = g.sum(a).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(b).unwrap().data(), &[0.0; 3]);
}

#[test]
fn repeated_operand_accumulates_both_paths() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([1, 1, 3, 3], (0..9).map(|v| v as f64 / 9.0).collect()).unwrap());
    let w = g.reshape(x, &[1, 1, 3, 3]).unwrap();
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    // y = Σ x², so dy/dx = 2x
    let grad = g.grad(x).unwrap();
    for (gv, xv) in grad.data().iter().zip(g.value(x).data()) {
        assert!((gv - 2.0 * xv).abs() < 1e-12);
    }
}

#[test]
fn check_gradient_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[4]);
    let r = check_gradient(|g, v| g.sum(v), &x, 1e-5, 1e-4).unwrap();
    assert!(r.passed);
    for (&a, &n) in r.analytic.iter().zip(&r.numeric) {
        assert_eq!(a, 1.0);
        assert!((n - 1.0).abs() < 1e-9);
    }

    let x = rand_tensor(&mut rng, &[3, 4]);
    let r = check_gradient(
        |g, v| {
            let p = g.softmax_lastdim(v)?;
            let pick = g.constant(Tensor::from_fn([3, 4], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
            let first = g.mul(p, pick)?;
            g.sum(first)
        },
        &x,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{}", r.max_rel_error);

    assert!(matches!(check_gradient(|g, v| g.sum(v), &x, 0.0, 1e-4), Err(Error::Argument(_))));
}

#[test]
fn check_gradient_flags_wrong_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, &[5]);
    // d/dx x³ is 3x², the fixture claims 2x².
    let r = check_gradient(
        |g, v| {
            let y = g.map(v, |t| t * t * t, |t| 2.0 * t * t)?;
            g.sum(y)
        },
        &x,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(!r.passed);
    assert!(r.max_rel_error > 0.1);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn([2, 3, 6, 6], |_| rng.random_range(-1.0..1.0)));
        let w = g.constant(Tensor::from_fn([4, 3, 3, 3], |_| rng.random_range(-1.0..1.0)));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let s = g.constant(Tensor::full([4], 1.0));
        let t = g.constant(Tensor::zeros([4]));
        let y = g.norm_act(y, 2, s, t).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn permute_roundtrip_and_concat_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = [rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[2, 1, 4])];
    let weights = rand_tensor(&mut rng, &[4, 2, 4]);
    let r = GradCheck::new(1e-5, 1e-4)
        .unwrap()
        .run(
            |g, v| {
                let c = g.concat(&[v[0], v[1]], 1)?;
                let p = g.permute(c, &[2, 0, 1])?;
                let w = g.constant(weights.clone());
                let m = g.mul(p, w)?;
                g.sum(m)
            },
            &inputs,
        )
        .unwrap();
    assert!(r.passed);
}
