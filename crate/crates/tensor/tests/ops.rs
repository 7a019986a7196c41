use agsp_tensor::gradcheck::{check_gradients, gradcheck, GradcheckOptions};
use agsp_tensor::init::{substream, uniform, Rng64};
use agsp_tensor::{BnMode, ConvGeom, Tape, Tensor};
use rand::Rng;

fn rand_t(shape: &[usize], rng: &mut Rng64) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

fn opts() -> GradcheckOptions {
    GradcheckOptions::default()
}

/// Direct six-loop cross-correlation.
fn conv_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    (s, p, d): (usize, usize, usize),
) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * p - d * (kh - 1) - 1) / s + 1;
    let wo = (wd + 2 * p - d * (kw - 1) - 1) / s + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bn in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky * d) as isize - p as isize;
                                let ix = (ox * s + kx * d) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bn * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bn * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

#[test]
fn conv_identity_kernel() {
    let mut rng = substream(1, "t");
    let x = rand_t(&[1, 2, 5, 4], &mut rng);
    let mut w = Tensor::zeros(&[2, 2, 1, 1]);
    w.data_mut()[0] = 1.0;
    w.data_mut()[3] = 1.0;
    let tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w));
    let y = tape.conv2d(xv, wv, None, ConvGeom::default()).unwrap();
    assert_eq!(*tape.value(y), x);
}

#[test]
fn conv_all_ones_kernel_on_constant_input() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 6, 6], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, ConvGeom::new(1, 1, 1)).unwrap();
    let v = tape.value(y);
    for r in 1..5 {
        for c in 1..5 {
            assert_eq!(v.data()[r * 6 + c], 9.0);
        }
    }
    assert_eq!(v.data()[0], 4.0);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = substream(2, "conv");
    for &(cin, cout, h, w, k, s, p, d) in &[
        (2, 3, 7, 6, 3, 1, 1, 1),
        (3, 2, 9, 8, 3, 2, 1, 1),
        (2, 2, 8, 8, 3, 1, 2, 2),
        (3, 4, 11, 10, 7, 2, 3, 1),
        (4, 3, 5, 5, 1, 1, 0, 1),
    ] {
        let x = rand_t(&[2, cin, h, w], &mut rng);
        let wt = rand_t(&[cout, cin, k, k], &mut rng);
        let b = rand_t(&[cout], &mut rng);
        let expect = conv_naive(&x, &wt, b.data(), (s, p, d));
        let tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x), tape.constant(wt), tape.constant(b));
        let y = tape.conv2d(xv, wv, Some(bv), ConvGeom::new(s, p, d)).unwrap();
        let got = tape.value(y);
        assert_eq!(got.shape(), expect.shape());
        for (a, e) in got.data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
    }
}

#[test]
fn conv_forward_f32_matches_naive_within_1e5() {
    let mut rng = substream(3, "conv32");
    let x = rand_t(&[1, 3, 8, 8], &mut rng);
    let wt = rand_t(&[4, 3, 3, 3], &mut rng);
    let b = rand_t(&[4], &mut rng);
    let expect = conv_naive(&x, &wt, b.data(), (1, 1, 1));
    let tape = Tape::<f32>::new();
    let y = tape
        .conv2d(tape.constant(x.cast()), tape.constant(wt.cast()), Some(tape.constant(b.cast())), ConvGeom::new(1, 1, 1))
        .unwrap();
    for (a, e) in tape.value(y).data().iter().zip(expect.data()) {
        assert!((*a as f64 - e).abs() < 1e-5);
    }
}

#[test]
fn conv_gradcheck_three_shapes() {
    let mut rng = substream(4, "convgc");
    for &(cin, cout, h, w, k, geom) in &[
        (2, 3, 5, 6, 3, ConvGeom::new(1, 1, 1)),
        (3, 2, 7, 7, 3, ConvGeom::new(2, 1, 1)),
        (2, 2, 8, 7, 3, ConvGeom::new(1, 2, 2)),
        (1, 2, 9, 9, 7, ConvGeom::new(2, 3, 1)),
    ] {
        let inputs = [
            rand_t(&[2, cin, h, w], &mut rng),
            rand_t(&[cout, cin, k, k], &mut rng),
            rand_t(&[cout], &mut rng),
        ];
        let r = gradcheck(&inputs, |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom), &opts()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn conv_shape_errors() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(tape.conv2d(x, w, None, ConvGeom::default()).is_err());
    let w = tape.constant(Tensor::zeros(&[1, 2, 7, 7]));
    assert!(tape.conv2d(x, w, None, ConvGeom::default()).is_err());
}

#[test]
fn elementwise_values() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    assert_eq!(tape.value(tape.relu(x).unwrap()).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(tape.value(tape.sigmoid(x).unwrap()).data()[1], 0.5);
    assert_eq!(tape.value(tape.abs(x).unwrap()).data(), &[1.0, 0.0, 2.0]);
    assert_eq!(tape.value(tape.scale(x, -2.0).unwrap()).data(), &[2.0, -0.0, -4.0]);
}

#[test]
fn abs_subgradient_is_zero_at_zero() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = tape.sum(tape.abs(x).unwrap()).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[-1.0, 0.0, 1.0]);
}

#[test]
fn elementwise_gradchecks() {
    let mut rng = substream(5, "ew");
    for shape in [[1, 2, 3, 4], [2, 1, 5, 5], [3, 3, 2, 2]] {
        let a = rand_t(&shape, &mut rng);
        let b = rand_t(&shape, &mut rng);
        let unary: [(&str, fn(&Tape<f64>, agsp_tensor::Var) -> agsp_tensor::Result<agsp_tensor::Var>); 4] = [
            ("relu", |t, v| t.relu(v)),
            ("sigmoid", |t, v| t.sigmoid(v)),
            ("abs", |t, v| t.abs(v)),
            ("scale", |t, v| t.scale(v, -1.7)),
        ];
        for (name, f) in unary {
            let r = gradcheck(std::slice::from_ref(&a), |t, v| f(t, v[0]), &opts()).unwrap();
            assert!(r.passed, "{name}: {r:?}");
        }
        let r = gradcheck(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]), &opts()).unwrap();
        assert!(r.passed, "add: {r:?}");
        let r = gradcheck(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]), &opts()).unwrap();
        assert!(r.passed, "sub: {r:?}");
        let r = gradcheck(&[a.clone(), b.clone()], |t, v| t.concat_channels(v[0], v[1]), &opts()).unwrap();
        assert!(r.passed, "concat: {r:?}");
    }
}

#[test]
fn linear_op_gradient_is_exact() {
    let mut rng = substream(6, "lin");
    let a = rand_t(&[2, 3, 4, 4], &mut rng);
    let r = gradcheck(&[a], |t, v| t.scale(v[0], 3.0), &opts()).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn broken_backward_fails_gradcheck() {
    let mut rng = substream(7, "neg");
    let x = rand_t(&[1, 1, 3, 3], &mut rng);
    // value is 2·Σx, claimed gradient is 3
    let wrong = vec![vec![3.0; 9]];
    let r = check_gradients(
        std::slice::from_ref(&x),
        &wrong,
        |v| Ok(2.0 * v[0].data().iter().sum::<f64>()),
        &opts(),
    )
    .unwrap();
    assert!(!r.passed);
    assert!(r.max_rel_error > 0.3);
}

#[test]
fn kink_inside_the_first_step_is_resolved_by_a_smaller_one() {
    let mut x = rand_t(&[1, 1, 3, 3], &mut substream(8, "kink"));
    x.data_mut()[4] = 3e-6;
    let r = gradcheck(std::slice::from_ref(&x), |t, v| t.relu(v[0]), &opts()).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.kinks, 0);
    assert_eq!(r.checked, 9);
}

#[test]
fn unresolvable_kinks_are_counted_and_bounded() {
    let mut x = rand_t(&[1, 1, 10, 10], &mut substream(9, "kink"));
    x.data_mut()[17] = 1e-10;
    let r = gradcheck(std::slice::from_ref(&x), |t, v| t.relu(v[0]), &opts()).unwrap();
    assert_eq!(r.kinks, 1);
    assert!(r.passed, "{r:?}");

    // most coordinates on a kink is not a pass
    let near = Tensor::full(&[1, 1, 2, 2], 1e-10);
    let r = gradcheck(&[near], |t, v| t.relu(v[0]), &opts()).unwrap();
    assert_eq!(r.kinks, 4);
    assert!(!r.passed);
}

#[test]
fn wrong_gradient_near_a_kink_still_fails() {
    let x = Tensor::full(&[1, 1, 1, 4], 0.5);
    let r = check_gradients(
        std::slice::from_ref(&x),
        &[vec![0.0; 4]],
        |v| Ok(v[0].data().iter().map(|&a| a.max(0.0)).sum()),
        &opts(),
    )
    .unwrap();
    assert!(!r.passed);
    assert_eq!(r.kinks, 0);
}

#[test]
fn softmax_properties() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 5, 1, 1], 0.3));
    let y = tape.softmax(x, 1).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
    let x = tape.constant(Tensor::new(&[3], vec![0.0, 60.0, 1.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    {
        let v = tape.value(y);
        assert!(v.data()[1] > 1.0 - 1e-12 && v.data()[0] < 1e-12);
    }

    let mut rng = substream(8, "sm");
    let x = tape.constant(uniform(&[2, 7, 3, 4], -5.0, 5.0, &mut rng));
    for axis in 0..4 {
        let y = tape.softmax(x, axis).unwrap();
        let v = tape.value(y);
        let shape = v.shape().to_vec();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..shape[axis]).map(|j| v.data()[(o * shape[axis] + j) * inner + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert!(v.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn softmax_gradcheck() {
    let mut rng = substream(9, "smgc");
    for (shape, axis) in [([1, 4, 3, 3], 1), ([2, 3, 2, 5], 3), ([3, 2, 4, 1], 0)] {
        let x = rand_t(&shape, &mut rng);
        let r = gradcheck(&[x], |t, v| t.softmax(v[0], axis), &opts()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn maxpool_constant_and_gradcheck() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 2, 4, 6], 1.5));
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(tape.shape(y), vec![1, 2, 2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));

    let mut rng = substream(10, "mp");
    for shape in [[1, 1, 4, 4], [2, 3, 6, 4], [1, 2, 5, 7]] {
        let x = rand_t(&shape, &mut rng);
        let r = gradcheck(&[x], |t, v| t.maxpool2d(v[0], 2, 2), &opts()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn batchnorm_train_normalizes() {
    let mut rng = substream(11, "bn");
    let x = uniform::<f64>(&[4, 3, 5, 5], -3.0, 7.0, &mut rng);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let (y, stats) = tape.batchnorm2d(xv, g, b, BnMode::Train { eps: 1e-5 }).unwrap();
    assert!(stats.is_some());
    let v = tape.value(y);
    for ch in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| v.data()[(n * 3 + ch) * 25..(n * 3 + ch + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_gradchecks() {
    let mut rng = substream(12, "bngc");
    for shape in [[2, 3, 3, 3], [4, 2, 2, 2], [1, 2, 4, 5]] {
        let c = shape[1];
        let inputs = [rand_t(&shape, &mut rng), rand_t(&[c], &mut rng), rand_t(&[c], &mut rng)];
        let r = gradcheck(
            &inputs,
            |t, v| t.batchnorm2d(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 }).map(|r| r.0),
            &opts(),
        )
        .unwrap();
        assert!(r.passed, "train {r:?}");
        let mean = vec![0.1; c];
        let var = vec![0.7; c];
        let r = gradcheck(
            &inputs,
            |t, v| {
                t.batchnorm2d(v[0], v[1], v[2], BnMode::Eval { mean: &mean, var: &var, eps: 1e-5 })
                    .map(|r| r.0)
            },
            &opts(),
        )
        .unwrap();
        assert!(r.passed, "eval {r:?}");
    }
}

#[test]
fn upsample_constant_and_gradcheck() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 2], 2.0));
    let y = tape.upsample_bilinear(x, 4).unwrap();
    assert_eq!(tape.shape(y), vec![1, 1, 12, 8]);
    assert!(tape.value(y).data().iter().all(|&v| (v - 2.0).abs() < 1e-12));

    let mut rng = substream(13, "up");
    for (shape, f) in [([1, 1, 3, 3], 2), ([2, 2, 2, 3], 4), ([1, 3, 4, 2], 3)] {
        let x = rand_t(&shape, &mut rng);
        let r = gradcheck(&[x], |t, v| t.upsample_bilinear(v[0], f), &opts()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn criss_cross_ops_gradcheck() {
    let mut rng = substream(14, "cc");
    for (n, c, h, w) in [(1, 2, 3, 4), (2, 3, 4, 3), (1, 1, 5, 5)] {
        let q = rand_t(&[n, c, h, w], &mut rng);
        let k = rand_t(&[n, c, h, w], &mut rng);
        let r = gradcheck(&[q, k], |t, v| t.cc_affinity(v[0], v[1]), &opts()).unwrap();
        assert!(r.passed, "affinity {r:?}");
        let a = rand_t(&[n, h + w - 1, h, w], &mut rng);
        let v = rand_t(&[n, c + 1, h, w], &mut rng);
        let r = gradcheck(&[a, v], |t, x| t.cc_aggregate(x[0], x[1]), &opts()).unwrap();
        assert!(r.passed, "aggregate {r:?}");
    }
}

#[test]
fn losses_gradcheck() {
    let mut rng = substream(15, "loss");
    for shape in [[1, 1, 4, 4], [2, 1, 3, 5], [3, 1, 2, 2]] {
        let z = uniform::<f64>(&shape, -3.0, 3.0, &mut rng);
        let len = z.len();
        let y: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let wts: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..2.0)).collect();
        let r = gradcheck(&[z.clone()], |t, v| t.bce_with_logits(v[0], &y, &wts), &opts()).unwrap();
        assert!(r.passed, "bce {r:?}");
    }
    for shape in [[1, 3, 4, 4], [2, 5, 3, 2], [3, 2, 2, 2]] {
        let z = uniform::<f64>(&shape, -3.0, 3.0, &mut rng);
        let target: Vec<usize> = (0..shape[0] * shape[2] * shape[3]).map(|_| rng.gen_range(0..shape[1])).collect();
        let r = gradcheck(&[z], |t, v| t.cross_entropy(v[0], &target), &opts()).unwrap();
        assert!(r.passed, "ce {r:?}");
    }
}

#[test]
fn cross_entropy_rejects_out_of_range_class() {
    let tape = Tape::<f32>::new();
    let z = tape.constant(Tensor::zeros(&[1, 3, 1, 2]));
    assert!(tape.cross_entropy(z, &[0, 3]).is_err());
}

#[test]
fn non_finite_values_trip_an_error() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(&[2], vec![f32::MAX, f32::MAX]).unwrap());
    assert!(tape.scale(x, 10.0).is_err());
}

#[test]
fn forward_backward_are_deterministic() {
    let run = || {
        let mut rng = substream(16, "det");
        let x = uniform::<f32>(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
        let w = uniform::<f32>(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let tape = Tape::new();
        let (xv, wv) = (tape.leaf(x), tape.leaf(w));
        let y = tape.conv2d(xv, wv, None, ConvGeom::new(1, 1, 1)).unwrap();
        let y = tape.softmax(y, 1).unwrap();
        let l = tape.sum(tape.relu(y).unwrap()).unwrap();
        let g = tape.backward(l).unwrap();
        let out = tape.value(y).clone();
        (out, g.get(wv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
