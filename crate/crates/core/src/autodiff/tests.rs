use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::imaging::{rgb_to_yuv, Image};

fn random(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `Σ r ⊙ v` with a fixed random `r`, so every output element matters.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var, crate::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let r = random(tape.shape(v).to_vec(), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(v, r)?;
    tape.sum(prod)
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(vec![3, 5, 4], 0.0, 1.0, &mut rng);
    let mut w = vec![0.0; 3 * 3];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(Tensor::new(vec![1, 1, 3, 3], w).unwrap());
    let bv = tape.constant(Tensor::zeros(vec![3]));
    let out = tape.conv2d(xv, wv, bv).unwrap();
    assert_eq!(tape.value(out), &x);
}

#[test]
fn conv_zero_weights_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_f32(vec![3, 4, 4], &[0.7; 48]).unwrap());
    let _ = &mut rng;
    let w = tape.constant(Tensor::zeros(vec![3, 3, 3, 2]));
    let b = tape.constant(Tensor::new(vec![2], vec![0.25, -1.5]).unwrap());
    let out = tape.conv2d(x, w, b).unwrap();
    let v = tape.value(out).data();
    assert!(v[..16].iter().all(|&p| p == 0.25));
    assert!(v[16..].iter().all(|&p| p == -1.5));
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![3, 4, 4]));
    let w_even = tape.constant(Tensor::zeros(vec![2, 2, 3, 1]));
    let w_cin = tape.constant(Tensor::zeros(vec![3, 3, 2, 1]));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let b_bad = tape.constant(Tensor::zeros(vec![2]));
    let w_ok = tape.constant(Tensor::zeros(vec![3, 3, 3, 1]));
    assert!(tape.conv2d(x, w_even, b).is_err());
    assert!(tape.conv2d(x, w_cin, b).is_err());
    assert!(tape.conv2d(x, w_ok, b_bad).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(vec![3, 8, 8], 0.0, 1.0, &mut rng);
        let w = random(vec![3, 3, 3, 4], -0.5, 0.5, &mut rng);
        let b = random(vec![4], -0.1, 0.1, &mut rng);

        let (wc, bc) = (w.clone(), b.clone());
        let input_check = grad_check(
            move |t: &mut Tape<f64>, xv| {
                let wv = t.constant(wc.clone());
                let bv = t.constant(bc.clone());
                let y = t.conv2d(xv, wv, bv)?;
                project(t, y, seed)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(
            input_check.max_rel_error < 1e-3,
            "seed {seed}: {input_check:?}"
        );

        let (xc, bc) = (x.clone(), b.clone());
        let weight_check = grad_check(
            move |t: &mut Tape<f64>, wv| {
                let xv = t.constant(xc.clone());
                let bv = t.constant(bc.clone());
                let y = t.conv2d(xv, wv, bv)?;
                project(t, y, seed)
            },
            &w,
            1e-3,
        )
        .unwrap();
        assert!(weight_check.max_rel_error < 1e-3, "seed {seed}");

        let (xc, wc) = (x.clone(), w.clone());
        let bias_check = grad_check(
            move |t: &mut Tape<f64>, bv| {
                let xv = t.constant(xc.clone());
                let wv = t.constant(wc.clone());
                let y = t.conv2d(xv, wv, bv)?;
                project(t, y, seed)
            },
            &b,
            1e-3,
        )
        .unwrap();
        assert!(bias_check.max_rel_error < 1e-3, "seed {seed}");
    }
}

#[test]
fn activation_values_and_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 0.0]).unwrap());
    let r = tape.relu(x);
    let s = tape.sum(r).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0]);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data(), &[0.5]);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.25]);
}

#[test]
fn activation_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(vec![3, 8, 8], -3.0, 3.0, &mut rng);
        let sig = grad_check(
            |t: &mut Tape<f64>, v| {
                let y = t.sigmoid(v);
                project(t, y, seed)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(sig.max_rel_error < 1e-3, "seed {seed}");

        // Keep points away from the kink so central differences stay valid.
        let mut away = x.clone();
        for v in away.data_mut() {
            if v.abs() < 0.01 {
                *v += 0.05;
            }
        }
        let relu = grad_check(
            |t: &mut Tape<f64>, v| {
                let y = t.relu(v);
                project(t, y, seed)
            },
            &away,
            1e-3,
        )
        .unwrap();
        assert!(relu.max_rel_error < 1e-4, "seed {seed}");
    }
}

#[test]
fn elementwise_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(vec![3, 2, 2], -1.0, 1.0, &mut rng);
    let mut tape = Tape::<f64>::new();
    let av = tape.leaf(a.clone());
    let zero = tape.constant(Tensor::zeros(vec![3, 2, 2]));
    let sum = tape.add(av, zero).unwrap();
    assert_eq!(tape.value(sum), &a);
    let diff = tape.sub(av, av).unwrap();
    assert!(tape.value(diff).data().iter().all(|&v| v == 0.0));
    let other = tape.constant(Tensor::zeros(vec![4]));
    assert!(tape.add(av, other).is_err());
}

#[test]
fn elementwise_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let a = random(vec![3, 8, 8], -1.0, 1.0, &mut rng);
        let b = random(vec![3, 8, 8], -1.0, 1.0, &mut rng);
        for kind in [Elementwise::Add, Elementwise::Sub, Elementwise::Mul] {
            let bc = b.clone();
            let check = grad_check(
                move |t: &mut Tape<f64>, v| {
                    let bv = t.constant(bc.clone());
                    let y = t.elementwise(v, bv, kind)?;
                    let sq = t.mul(y, y)?;
                    t.sum(sq)
                },
                &a,
                1e-3,
            )
            .unwrap();
            assert!(check.max_rel_error < 1e-3, "{kind:?} seed {seed}");
        }
        let check = grad_check(
            |t: &mut Tape<f64>, v| {
                let y = t.scale(v, -2.5);
                project(t, y, seed)
            },
            &a,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6);
    }
}

#[test]
fn product_rule() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let b = tape.leaf(Tensor::new(vec![3], vec![-4.0, 5.0, 0.5]).unwrap());
    let p = tape.mul(a, b).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[-4.0, 5.0, 0.5]);
    assert_eq!(g.grad(b).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn reductions() {
    let mut tape = Tape::<f64>::new();
    let ones = tape.leaf(Tensor::new(vec![3, 2, 2], vec![1.0; 12]).unwrap());
    let s = tape.sum(ones).unwrap();
    assert_eq!(tape.value(s).data(), &[12.0]);
    let m = tape.mean(ones).unwrap();
    let g = tape.backward(m).unwrap();
    assert!(g
        .grad(ones)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0 / 12.0));
    let per = tape
        .reduce(ones, Reduction::Sum, Region::PerChannel)
        .unwrap();
    assert_eq!(tape.value(per).data(), &[4.0, 4.0, 4.0]);

    let mut tape = Tape::<f64>::new();
    let v = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
    let n = tape.reduce(v, Reduction::L2Norm, Region::All).unwrap();
    assert_eq!(tape.value(n).data(), &[5.0]);
    let g = tape.backward(n).unwrap();
    let gv = g.grad(v).unwrap().data();
    assert!((gv[0] - 0.6).abs() < 1e-12 && (gv[1] - 0.8).abs() < 1e-12);

    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(Tensor::zeros(vec![4]));
    let n = tape.reduce(z, Reduction::L2Norm, Region::All).unwrap();
    let g = tape.backward(n).unwrap();
    assert!(g.grad(z).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn reduction_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let a = random(vec![3, 8, 8], -1.0, 1.0, &mut rng);
        for kind in [Reduction::Sum, Reduction::Mean, Reduction::L2Norm] {
            for region in [Region::All, Region::PerChannel] {
                let check = grad_check(
                    move |t: &mut Tape<f64>, v| {
                        let r = t.reduce(v, kind, region)?;
                        let sq = t.mul(r, r)?;
                        t.sum(sq)
                    },
                    &a,
                    1e-3,
                )
                .unwrap();
                assert!(
                    check.max_rel_error < 1e-3,
                    "{kind:?} {region:?} seed {seed}"
                );
            }
        }
    }
}

#[test]
fn color_transform_matches_imaging() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f32> = (0..3 * 6 * 5).map(|_| rng.random_range(0.0..1.0)).collect();
    let img = Image::new(6, 5, data.clone()).unwrap();
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_f32(vec![3, 6, 5], &data).unwrap());
    let yuv = tape.color_transform(x).unwrap();
    let reference = rgb_to_yuv(&img);
    for (a, b) in tape.value(yuv).data().iter().zip(reference.data()) {
        assert!((a - b).abs() <= 1e-6);
    }

    let mut tape = Tape::<f32>::new();
    let gray =
        tape.constant(Tensor::from_f32(vec![3, 1, 2], &[0.3, 0.8, 0.3, 0.8, 0.3, 0.8]).unwrap());
    let yuv = tape.color_transform(gray).unwrap();
    assert!(tape.value(yuv).data()[2..].iter().all(|v| v.abs() < 1e-6));

    let bad = tape.constant(Tensor::zeros(vec![2, 2, 2]));
    assert!(tape.color_transform(bad).is_err());
}

#[test]
fn color_transform_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let a = random(vec![3, 8, 8], 0.0, 1.0, &mut rng);
        let check = grad_check(
            |t: &mut Tape<f64>, v| {
                let y = t.color_transform(v)?;
                project(t, y, seed)
            },
            &a,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-3, "seed {seed}");
    }
}

#[test]
fn backward_basics() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_f32(vec![3, 2, 2], &[0.5; 12]).unwrap());
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(tape.backward(x).is_err());

    // An unused leaf still reports a zero gradient.
    let mut tape = Tape::<f32>::new();
    let used = tape.leaf(Tensor::scalar(2.0));
    let unused = tape.leaf(Tensor::scalar(3.0));
    let c = tape.constant(Tensor::scalar(1.0));
    let s = tape.scale(used, 4.0);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.grad(used).unwrap().data(), &[4.0]);
    assert_eq!(g.grad(unused).unwrap().data(), &[0.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn backward_is_linear_and_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(vec![3, 8, 8], 0.0, 1.0, &mut rng);
    let w = random(vec![3, 3, 3, 3], -0.5, 0.5, &mut rng);
    let (a, b) = (0.7, -1.3);

    let grads = |mix: Option<(f64, f64)>, which: usize| {
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.constant(w.clone());
        let bv = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.conv2d(xv, wv, bv).unwrap();
        let y = tape.sigmoid(y);
        let l1 = tape.reduce(y, Reduction::L2Norm, Region::All).unwrap();
        let l2 = project(&mut tape, y, 5).unwrap();
        let loss = match mix {
            Some((a, b)) => {
                let s1 = tape.scale(l1, a);
                let s2 = tape.scale(l2, b);
                tape.add(s1, s2).unwrap()
            }
            None if which == 1 => l1,
            None => l2,
        };
        let first = tape.backward(loss).unwrap().grad(xv).unwrap().clone();
        let second = tape.backward(loss).unwrap().grad(xv).unwrap().clone();
        assert_eq!(first, second, "replay must be bit-identical");
        first
    };

    let g1 = grads(None, 1);
    let g2 = grads(None, 2);
    let mixed = grads(Some((a, b)), 0);
    for i in 0..mixed.len() {
        let expected = a * g1.data()[i] + b * g2.data()[i];
        assert!((mixed.data()[i] - expected).abs() < 1e-6);
    }
}

#[test]
fn grad_check_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random(vec![3, 4, 4], -1.0, 1.0, &mut rng);
    let linear = grad_check(|t: &mut Tape<f64>, v| project(t, v, 1), &p, 1e-3).unwrap();
    assert!(linear.max_rel_error < 1e-6);
    let quad = grad_check(
        |t: &mut Tape<f64>, v| {
            let sq = t.mul(v, v)?;
            t.sum(sq)
        },
        &p,
        1e-3,
    )
    .unwrap();
    assert!(quad.max_rel_error < 1e-4);
}

#[test]
fn grad_check_reports_non_finite() {
    let p = Tensor::new(vec![1], vec![1.0f64]).unwrap();
    let result = grad_check(
        |t: &mut Tape<f64>, v| {
            let big = t.scale(v, f64::MAX);
            let big = t.scale(big, 10.0);
            t.sum(big)
        },
        &p,
        1e-3,
    );
    assert!(result.is_err());
}

#[test]
fn channel_affine_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x = random(vec![3, 8, 8], 0.0, 1.0, &mut rng);
        let s = random(vec![3], -2.0, 2.0, &mut rng);
        let b = random(vec![3], -1.0, 1.0, &mut rng);
        let (sc, bc) = (s.clone(), b.clone());
        let check = grad_check(
            move |t: &mut Tape<f64>, v| {
                let sv = t.constant(sc.clone());
                let bv = t.constant(bc.clone());
                let y = t.channel_affine(v, sv, bv)?;
                project(t, y, seed)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-3);
        let (xc, bc) = (x.clone(), b.clone());
        let check = grad_check(
            move |t: &mut Tape<f64>, sv| {
                let xv = t.constant(xc.clone());
                let bv = t.constant(bc.clone());
                let y = t.channel_affine(xv, sv, bv)?;
                project(t, y, seed)
            },
            &s,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-3);
        let (xc, sc) = (x.clone(), s.clone());
        let check = grad_check(
            move |t: &mut Tape<f64>, bv| {
                let xv = t.constant(xc.clone());
                let sv = t.constant(sc.clone());
                let y = t.channel_affine(xv, sv, bv)?;
                project(t, y, seed)
            },
            &b,
            1e-3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-3);
    }
}
