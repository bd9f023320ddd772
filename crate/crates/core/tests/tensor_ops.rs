mod oracles;

use mmnet_core::gradcheck::DEFAULT_EPS;
use mmnet_core::{grad_check, Conv2dSpec, Error, GradCheck, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn forward<F: FnOnce(&mut Tape, &[Var]) -> Var>(inputs: &[Tensor], f: F) -> Tensor {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).clone()
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, -3.2, 3.2]));
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[0], 0.5);
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.2]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = Tensor::uniform(&[50], -30.0, 30.0, &mut rng);
    let pos = tape.constant(v.clone());
    let neg = tape.constant(v.map(|a| -a));
    let (sp, sn) = (tape.sigmoid(pos), tape.sigmoid(neg));
    let total = tape.add(sp, sn).unwrap();
    for &s in tape.value(total).data() {
        assert!((s - 1.0).abs() < 1e-15);
    }
}

#[test]
fn elementwise_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.mul(a, b), Err(Error::ShapeMismatch { .. })));
    let c = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.log(c), Err(Error::LogDomain(v)) if v == 0.0));
    let d = tape.constant(t(&[1], &[-2.0]));
    assert!(tape.log(d).is_err());
}

#[test]
fn broadcast_extent_one_axes() {
    let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let row = t(&[1, 3], &[10.0, 20.0, 30.0]);
    let col = t(&[2, 1], &[100.0, 200.0]);
    let out = forward(&[a.clone(), row], |tp, v| tp.add(v[0], v[1]).unwrap());
    assert_eq!(out.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let out = forward(&[a, col], |tp, v| tp.mul(v[0], v[1]).unwrap());
    assert_eq!(out.data(), &[100.0, 200.0, 300.0, 800.0, 1000.0, 1200.0]);
}

#[test]
fn matmul_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = rand_tensor(&mut rng, &[3, 4]);
    let out = forward(&[Tensor::identity(3), b.clone()], |tp, v| {
        tp.matmul(v[0], v[1]).unwrap()
    });
    assert_eq!(out, b);

    let out = forward(
        &[t(&[1, 2], &[1.0, 2.0]), t(&[2, 1], &[3.0, 4.0])],
        |tp, v| tp.matmul(v[0], v[1]).unwrap(),
    );
    assert_eq!(out.data(), &[11.0]);

    let a = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[5, 3]);
    let out = forward(&[a.clone(), b.clone()], |tp, v| {
        tp.matmul(v[0], v[1]).unwrap()
    });
    assert!(out.max_abs_diff(&oracles::matmul(&a, &b)) < 1e-12);

    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(a));
    assert!(matches!(
        tape.matmul(x, y),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn conv2d_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[1, 5, 6]);
    let one = t(&[1, 1, 1, 1], &[1.0]);
    let out = forward(&[x.clone(), one], |tp, v| {
        tp.conv2d(
            v[0],
            v[1],
            Conv2dSpec {
                stride: 1,
                padding: 0,
            },
        )
        .unwrap()
    });
    assert_eq!(out, x);

    let zeros = Tensor::zeros(&[4, 1, 3, 3]);
    let out = forward(&[x, zeros], |tp, v| {
        tp.conv2d(v[0], v[1], Conv2dSpec::same(3)).unwrap()
    });
    assert!(out.data().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), &[4, 5, 6]);

    let x = rand_tensor(&mut rng, &[3, 5, 5]);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        let out = forward(&[x.clone(), w.clone()], |tp, v| {
            tp.conv2d(
                v[0],
                v[1],
                Conv2dSpec {
                    stride,
                    padding: pad,
                },
            )
            .unwrap()
        });
        assert!(out.max_abs_diff(&oracles::conv2d(&x, &w, stride, pad)) < 1e-10);
    }

    let mut tape = Tape::new();
    let small = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let big = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(matches!(
        tape.conv2d(
            small,
            big,
            Conv2dSpec {
                stride: 1,
                padding: 1
            }
        ),
        Err(Error::KernelTooLarge { .. })
    ));
}

#[test]
fn softmax_examples() {
    let out = forward(&[Tensor::full(&[4], 0.7)], |tp, v| {
        tp.softmax(v[0], 0).unwrap()
    });
    for &p in out.data() {
        assert!((p - 0.25).abs() < 1e-15);
    }
    let out = forward(&[t(&[2], &[0.0, 3f64.ln()])], |tp, v| {
        tp.softmax(v[0], 0).unwrap()
    });
    assert!((out.data()[0] - 0.25).abs() < 1e-15);
    assert!((out.data()[1] - 0.75).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let shifted = x.map(|v| v + 123.456);
    let a = forward(&[x], |tp, v| tp.softmax(v[0], 1).unwrap());
    let b = forward(&[shifted], |tp, v| tp.softmax(v[0], 1).unwrap());
    assert!(a.max_abs_diff(&b) < 1e-12);

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        tape.softmax(x, 2),
        Err(Error::AxisOutOfRange { .. })
    ));
}

#[test]
fn backward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = rand_tensor(&mut rng, &[3, 4]);

    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &x0.map(|v| 2.0 * v));

    let mut tape = Tape::new();
    let x = tape.param(x0);
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    let tape = Tape::new();
    let mut other = Tape::new();
    let v = other.constant(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(v), Err(Error::EmptyTape)));
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_tensor(&mut rng, &[4, 3]);
    let w0 = rand_tensor(&mut rng, &[3, 5]);
    let loss1 = |tp: &mut Tape, x: Var, w: Var| {
        let y = tp.matmul(x, w).unwrap();
        let s = tp.sigmoid(y);
        tp.sum(s)
    };
    let loss2 = |tp: &mut Tape, x: Var, w: Var| {
        let y = tp.matmul(x, w).unwrap();
        let s = tp.softmax(y, 1).unwrap();
        let sq = tp.mul(s, s).unwrap();
        tp.sum(sq)
    };
    let grad_of = |which: u8| {
        let mut tp = Tape::new();
        let (x, w) = (tp.param(x0.clone()), tp.param(w0.clone()));
        let loss = match which {
            1 => loss1(&mut tp, x, w),
            2 => loss2(&mut tp, x, w),
            _ => {
                let a = loss1(&mut tp, x, w);
                let b = loss2(&mut tp, x, w);
                tp.add(a, b).unwrap()
            }
        };
        let g = tp.backward(loss).unwrap();
        (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
    };
    let (x1, w1) = grad_of(1);
    let (x2, w2) = grad_of(2);
    let (x3, w3) = grad_of(3);
    for (sum, (a, b)) in [(x3, (x1, x2)), (w3, (w1, w2))] {
        for k in 0..sum.len() {
            assert!((sum.data()[k] - a.data()[k] - b.data()[k]).abs() < 1e-10);
        }
    }
}

/// Every backward rule against central differences on inputs in [-1, 1].
#[test]
fn every_op_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tol = 1e-4;
    let check = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Tape, &[Var]) -> Var| {
        let err = GradCheck::new(DEFAULT_EPS)
            .run(|tp, v| Ok(f(tp, v)), &inputs)
            .unwrap();
        assert!(err < tol, "{name}: {err}");
    };
    // Weighted sums keep reductions from hiding per-entry errors.
    let weights = |rng: &mut ChaCha8Rng, shape: &[usize]| Tensor::uniform(shape, 0.5, 1.5, rng);

    let a = rand_tensor(&mut rng, &[3, 4]);
    let pos = Tensor::uniform(&[3, 4], 0.2, 1.0, &mut rng);
    let w34 = weights(&mut rng, &[3, 4]);
    let wsum = |tp: &mut Tape, y: Var, w: &Tensor| {
        let wv = tp.constant(w.clone());
        let p = tp.mul(y, wv).unwrap();
        tp.sum(p)
    };
    check("sigmoid", vec![a.clone()], &|tp, v| {
        let y = tp.sigmoid(v[0]);
        wsum(tp, y, &w34)
    });
    check("relu", vec![a.clone()], &|tp, v| {
        let y = tp.relu(v[0]);
        wsum(tp, y, &w34)
    });
    check("exp", vec![a.clone()], &|tp, v| {
        let y = tp.exp(v[0]);
        wsum(tp, y, &w34)
    });
    check("log", vec![pos.clone()], &|tp, v| {
        let y = tp.log(v[0]).unwrap();
        wsum(tp, y, &w34)
    });
    check("scale+shift", vec![a.clone()], &|tp, v| {
        let y = tp.scale(v[0], -1.7);
        let y = tp.add_scalar(y, 0.3);
        let y = tp.mul(y, y).unwrap();
        wsum(tp, y, &w34)
    });
    let b13 = rand_tensor(&mut rng, &[1, 4]);
    let b31 = Tensor::uniform(&[3, 1], 0.5, 1.5, &mut rng);
    for (name, op) in [
        ("add", mmnet_core::Binary::Add),
        ("sub", mmnet_core::Binary::Sub),
        ("mul", mmnet_core::Binary::Mul),
    ] {
        check(name, vec![a.clone(), b13.clone()], &|tp, v| {
            let y = tp.apply_binary(v[0], v[1], op).unwrap();
            let y = tp.mul(y, y).unwrap();
            wsum(tp, y, &w34)
        });
    }
    check("div", vec![a.clone(), b31.clone()], &|tp, v| {
        let y = tp.div(v[0], v[1]).unwrap();
        wsum(tp, y, &w34)
    });
    let m = rand_tensor(&mut rng, &[4, 5]);
    let w35 = weights(&mut rng, &[3, 5]);
    check("matmul", vec![a.clone(), m], &|tp, v| {
        let y = tp.matmul(v[0], v[1]).unwrap();
        wsum(tp, y, &w35)
    });
    let x = rand_tensor(&mut rng, &[2, 5, 5]);
    let k = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    for spec in [
        Conv2dSpec::same(3),
        Conv2dSpec {
            stride: 2,
            padding: 1,
        },
    ] {
        let probe = forward(&[x.clone(), k.clone()], |tp, v| {
            tp.conv2d(v[0], v[1], spec).unwrap()
        });
        let w = weights(&mut rng, probe.shape());
        check("conv2d", vec![x.clone(), k.clone()], &|tp, v| {
            let y = tp.conv2d(v[0], v[1], spec).unwrap();
            wsum(tp, y, &w)
        });
    }
    for axis in 0..2 {
        check("softmax", vec![a.clone()], &|tp, v| {
            let y = tp.softmax(v[0], axis).unwrap();
            wsum(tp, y, &w34)
        });
        check("log_softmax", vec![a.clone()], &|tp, v| {
            let y = tp.log_softmax(v[0], axis).unwrap();
            wsum(tp, y, &w34)
        });
        let wk = weights(&mut rng, if axis == 0 { &[1, 4] } else { &[3, 1] });
        check("sum_axis", vec![a.clone()], &|tp, v| {
            let y = tp.sum_axis(v[0], axis).unwrap();
            let y = tp.mul(y, y).unwrap();
            wsum(tp, y, &wk)
        });
        check("max_axis", vec![a.clone()], &|tp, v| {
            let y = tp.max_axis(v[0], axis).unwrap();
            wsum(tp, y, &wk)
        });
        check("l2_norm", vec![a.clone()], &|tp, v| {
            let y = tp.l2_norm(v[0], axis).unwrap();
            wsum(tp, y, &wk)
        });
    }
    let w43 = weights(&mut rng, &[4, 3]);
    check("transpose", vec![a.clone()], &|tp, v| {
        let y = tp.transpose(v[0]).unwrap();
        wsum(tp, y, &w43)
    });
    let w26 = weights(&mut rng, &[2, 6]);
    check("reshape", vec![a.clone()], &|tp, v| {
        let y = tp.reshape(v[0], &[2, 6]).unwrap();
        wsum(tp, y, &w26)
    });
    let c = rand_tensor(&mut rng, &[3, 2]);
    let w36 = weights(&mut rng, &[3, 6]);
    check("concat", vec![a.clone(), c], &|tp, v| {
        let y = tp.concat(&[v[0], v[1]], 1).unwrap();
        wsum(tp, y, &w36)
    });
    let img = rand_tensor(&mut rng, &[2, 4, 6]);
    for (h, w) in [(2, 3), (8, 12), (5, 7)] {
        let wr = weights(&mut rng, &[2, h, w]);
        check("resize", vec![img.clone()], &|tp, v| {
            let y = tp.resize_bilinear(v[0], h, w).unwrap();
            wsum(tp, y, &wr)
        });
    }
    let idx: Vec<usize> = (0..4).map(|i| i % 3).collect();
    let w14 = weights(&mut rng, &[1, 4]);
    check("take_along_axis", vec![a.clone()], &|tp, v| {
        let y = tp.take_along_axis(v[0], 0, &idx).unwrap();
        wsum(tp, y, &w14)
    });
    let _ = rng.gen::<u8>();
}

#[test]
fn zero_norm_has_finite_gradient() {
    let x = t(&[2, 2], &[0.0, 0.3, 0.0, -0.4]);
    let mut tape = Tape::new();
    let v = tape.param(x);
    let n = tape.l2_norm(v, 0).unwrap();
    let s = tape.sum(n);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[0.0, 0.6, 0.0, -0.8]);
}

#[test]
fn bilinear_halving_is_block_average() {
    let x = t(&[1, 2, 4], &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
    let out = forward(&[x], |tp, v| tp.resize_bilinear(v[0], 1, 2).unwrap());
    assert_eq!(out.data(), &[2.5, 6.5]);
}

#[test]
fn grad_check_single_input_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[3, 3]);
    let err = grad_check(
        |tp, x| {
            let xt = tp.transpose(x)?;
            let g = tp.matmul(x, xt)?;
            Ok(tp.sum(g))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6);
}

proptest! {
    #[test]
    fn softmax_sums_to_one(
        rows in 1usize..6,
        cols in 1usize..9,
        scale in 0.1f64..200.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[rows, cols], -scale, scale, &mut rng);
        for axis in 0..2 {
            let y = forward(&[x.clone()], |tp, v| tp.softmax(v[0], axis).unwrap());
            let sums = forward(&[y.clone()], |tp, v| tp.sum_axis(v[0], axis).unwrap());
            for &s in sums.data() {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn matmul_and_conv_match_loop_oracles(
        m in 1usize..8, k in 1usize..8, n in 1usize..8,
        c_in in 1usize..4, c_out in 1usize..4, h in 3usize..8, w in 3usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k]);
        let b = rand_tensor(&mut rng, &[k, n]);
        let out = forward(&[a.clone(), b.clone()], |tp, v| tp.matmul(v[0], v[1]).unwrap());
        prop_assert!(out.max_abs_diff(&oracles::matmul(&a, &b)) < 1e-10);

        let x = rand_tensor(&mut rng, &[c_in, h, w]);
        let kern = rand_tensor(&mut rng, &[c_out, c_in, 3, 3]);
        let out = forward(&[x.clone(), kern.clone()], |tp, v| tp.conv2d(v[0], v[1], Conv2dSpec::same(3)).unwrap());
        prop_assert!(out.max_abs_diff(&oracles::conv2d(&x, &kern, 1, 1)) < 1e-10);
    }
}
