use neuroheed::numerics::*;
use neuroheed::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Random weights used to collapse an op's output into a scalar.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn check_op(shapes: &[&[usize]], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, Error>) {
    for point in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
        let inputs: Vec<_> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let r = grad_check(&inputs, Coords::All, |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, 77 + point)
        })
        .unwrap();
        assert!(r.max_rel_err <= 1e-4, "point {point}: {r:?}");
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::no_grad();
    let i = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = g.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.matmul(i, m).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    let a = g.constant(Tensor::new([1, 2], vec![1.0, 0.0]).unwrap());
    let b = g.constant(Tensor::new([2, 1], vec![0.0, 1.0]).unwrap());
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::no_grad();
    let a = g.constant(Tensor::zeros([3, 4]));
    let b = g.constant(Tensor::zeros([3, 2]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[3, 4]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn matmul_sum_gradient_is_ones_times_bt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let bv = g.constant(b.clone());
    let y = g.matmul(av, bv).unwrap();
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    let ga = grads.get(av).unwrap();
    // ones(3,2)·bᵀ: every row equals the row sums of b
    for i in 0..3 {
        for k in 0..4 {
            let expect = b.at2(k, 0) + b.at2(k, 1);
            assert!((ga[i * 4 + k] - expect).abs() < 1e-12);
        }
    }
    let r = grad_check(&[a, b], Coords::All, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        Ok(g.sum_all(y))
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-6, "{r:?}");
}

#[test]
fn grad_check_examples() {
    let x = Tensor::from_vec(vec![1.0, 2.0]);
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let sq = g.mul(v, v).unwrap();
    let s = g.sum_all(sq);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(v).unwrap(), &[2.0, 4.0]);
    let r = grad_check(&[x.clone()], Coords::All, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        Ok(g.sum_all(sq))
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-9, "{r:?}");
    let r = grad_check(&[x], Coords::All, |g, _| Ok(g.constant(Tensor::scalar(3.0)))).unwrap();
    assert!(r.max_rel_err <= 1e-9, "{r:?}");
}

#[test]
fn directional_grad_check_agrees_and_detects() {
    let x = Tensor::from_vec(vec![0.3, -1.2, 2.5, 0.7]);
    let y = Tensor::new([2, 2], vec![1.5, -0.4, 0.2, 3.0]).unwrap();
    let r = grad_check(&[x.clone(), y.clone()], Coords::Direction { seed: 4 }, |g, v| {
        let a = g.mul(v[0], v[0])?;
        let a = g.reshape(a, &[2, 2])?;
        let b = g.mul(a, v[1])?;
        let b = g.tanh(b);
        Ok(g.sum_all(b))
    })
    .unwrap();
    assert_eq!(r.coords_checked, 2);
    assert!(r.max_rel_err <= 1e-8, "{r:?}");

    // x·stop(x): the tape sees half the true gradient
    for coords in [Coords::All, Coords::Direction { seed: 1 }] {
        let r = grad_check(&[x.clone()], coords, |g, v| {
            let c = g.constant(g.value(v[0]).clone());
            let p = g.mul(v[0], c)?;
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert!((r.max_rel_err - 0.5).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn grad_check_rejects_non_finite() {
    let x = Tensor::from_vec(vec![f64::NAN]);
    let err = grad_check(&[x], Coords::All, |g, v| Ok(g.sum_all(v[0]))).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
}

#[test]
fn backward_twice_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(vec![1.0]));
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
    let mut g = Graph::<f64>::no_grad();
    let x = g.param(Tensor::from_vec(vec![1.0]));
    let s = g.sum_all(x);
    assert!(matches!(g.backward(s), Err(Error::NoGradTape)));
}

#[test]
fn activation_examples() {
    let mut g = Graph::<f64>::no_grad();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let x = g.constant(Tensor::new([2, 1], vec![-4.0, 4.0]).unwrap());
    let a = g.constant(Tensor::from_vec(vec![0.25]));
    let y = g.prelu(x, a, 0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 4.0]);
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(vec![0.0, 1.0]));
    let y = g.relu(x);
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::<f64>::no_grad();
    let x = g.constant(Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let w = g.constant(Tensor::new([1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv1d(x, w, 1, 1, ConvMode::Valid).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    let x = g.constant(Tensor::zeros([1, 8000]));
    let w = g.constant(Tensor::zeros([4, 1, 20]));
    let y = g.conv1d(x, w, 10, 1, ConvMode::Valid).unwrap();
    assert_eq!(g.shape(y), &[4, 799]);
    let x = g.constant(Tensor::zeros([1, 3]));
    let w = g.constant(Tensor::zeros([1, 1, 4]));
    assert!(matches!(g.conv1d(x, w, 1, 1, ConvMode::Valid), Err(Error::Empty { .. })));
}

#[test]
fn conv1d_same_keeps_length() {
    let mut g = Graph::<f64>::no_grad();
    for k in [1, 2, 3, 4, 5] {
        let x = g.constant(Tensor::zeros([2, 11]));
        let w = g.constant(Tensor::zeros([3, 2, k]));
        let y = g.conv1d(x, w, 1, 2, ConvMode::Same).unwrap();
        assert_eq!(g.shape(y), &[3, 11]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv1d_causal_ignores_future(seed in 0u64..10_000, t in 3usize..40, k in 1usize..5,
                                   stride in 1usize..4, dil in 1usize..3, depthwise in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3;
        let x = rand_tensor(&mut rng, &[c, t]);
        let w = if depthwise { rand_tensor(&mut rng, &[c, 1, k]) } else { rand_tensor(&mut rng, &[2, c, k]) };
        let mut g = Graph::<f64>::no_grad();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y0 = g.conv1d(xv, wv, stride, dil, ConvMode::Causal).unwrap();
        let cut = rng.random_range(0..t);
        let mut x2 = x.clone();
        for ch in 0..c {
            for i in cut + 1..t {
                x2.data_mut()[ch * t + i] += rng.random_range(-5.0..5.0);
            }
        }
        let xv2 = g.constant(x2);
        let y1 = g.conv1d(xv2, wv, stride, dil, ConvMode::Causal).unwrap();
        let (a, b) = (g.value(y0), g.value(y1));
        let t_out = a.dim(1);
        for row in 0..a.dim(0) {
            for j in 0..t_out {
                if j * stride <= cut {
                    prop_assert_eq!(a.at2(row, j), b.at2(row, j));
                }
            }
        }
    }

    #[test]
    fn cum_norm_ignores_future(seed in 0u64..10_000, t in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[4, t]);
        let mut x2 = x.clone();
        for ch in 0..4 { x2.data_mut()[ch * t + t - 1] += 3.0; }
        let mut g = Graph::<f64>::no_grad();
        let gain = g.constant(rand_tensor(&mut rng, &[4]));
        let bias = g.constant(rand_tensor(&mut rng, &[4]));
        let a = g.constant(x);
        let b = g.constant(x2);
        let (ya, _) = g.cum_norm(a, gain, bias, CumStats::default()).unwrap();
        let (yb, _) = g.cum_norm(b, gain, bias, CumStats::default()).unwrap();
        for ch in 0..4 {
            for j in 0..t - 1 {
                prop_assert_eq!(g.value(ya).at2(ch, j), g.value(yb).at2(ch, j));
            }
        }
    }

    #[test]
    fn lstm_chunking_is_bitwise(seed in 0u64..10_000, t in 2usize..20, cut_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, h) = (5, 7);
        let x = Tensor::<f32>::from_fn([1, t, i], |_| rng.random_range(-1.0..1.0));
        let wih = Tensor::<f32>::from_fn([i, 4 * h], |_| rng.random_range(-0.5..0.5));
        let whh = Tensor::<f32>::from_fn([h, 4 * h], |_| rng.random_range(-0.5..0.5));
        let b = Tensor::<f32>::from_fn([4 * h], |_| rng.random_range(-0.5..0.5));
        let cut = ((t as f64 * cut_frac) as usize).clamp(1, t - 1);
        let mut g = Graph::<f32>::no_grad();
        let w = LstmWeights { w_ih: g.constant(wih), w_hh: g.constant(whh), bias: g.constant(b) };
        let xv = g.constant(x.clone());
        let (_, whole) = g.lstm(xv, w, None, false).unwrap();
        let x1 = g.slice(xv, 1, 0, cut).unwrap();
        let x2 = g.slice(xv, 1, cut, t - cut).unwrap();
        let (_, s1) = g.lstm(x1, w, None, false).unwrap();
        let (_, s2) = g.lstm(x2, w, Some(&s1), false).unwrap();
        prop_assert_eq!(whole, s2);
    }

    #[test]
    fn adam_zero_grad_is_identity(seed in 0u64..10_000, steps in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Tensor::<f32>::from_fn([3, 2], |_| rng.random_range(-1.0..1.0));
        let mut adam = Adam::default();
        for _ in 0..steps {
            let g: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            adam.step_tensor("w", &mut p, &g, 1e-3).unwrap();
        }
        let before = p.clone();
        let state = adam.clone();
        adam.step_tensor("w", &mut p, &[0.0; 6], 1e-3).unwrap();
        prop_assert_eq!(before, p);
        prop_assert_eq!(state, adam);
    }
}

#[test]
fn lstm_zero_weights_give_zero_state() {
    let h = 4;
    let st = LstmState::<f64>::zeros(1, h);
    let (y, s) = lstm_step(
        &Tensor::from_vec(vec![0.3, -0.2]),
        &st,
        &Tensor::zeros([2, 4 * h]),
        &Tensor::zeros([h, 4 * h]),
        &Tensor::zeros([4 * h]),
    )
    .unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(s.c.iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_step_rejects_bad_state() {
    let st = LstmState::<f64>::zeros(1, 3);
    let r = lstm_step(
        &Tensor::from_vec(vec![0.3]),
        &st,
        &Tensor::zeros([1, 16]),
        &Tensor::zeros([4, 16]),
        &Tensor::zeros([16]),
    );
    assert!(r.is_err());
}

#[test]
fn lstm_step_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (i, h) = (3, 4);
    let wih = rand_tensor(&mut rng, &[i, 4 * h]);
    let whh = rand_tensor(&mut rng, &[h, 4 * h]);
    let b = rand_tensor(&mut rng, &[4 * h]);
    let x1 = rand_tensor(&mut rng, &[i]);
    let x2 = rand_tensor(&mut rng, &[i]);
    let (_, s1) = lstm_step(&x1, &LstmState::zeros(1, h), &wih, &whh, &b).unwrap();
    let (y2, s2) = lstm_step(&x2, &s1, &wih, &whh, &b).unwrap();
    let mut seq = x1.data().to_vec();
    seq.extend_from_slice(x2.data());
    let mut g = Graph::no_grad();
    let w = LstmWeights {
        w_ih: g.constant(wih),
        w_hh: g.constant(whh),
        bias: g.constant(b),
    };
    let xv = g.constant(Tensor::new([1, 2, i], seq).unwrap());
    let (_, whole) = g.lstm(xv, w, None, false).unwrap();
    assert_eq!(whole, s2);
    assert_eq!(y2.data(), &whole.h[..]);
}

#[test]
fn lstm_final_hidden_gradient_wrt_first_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (i, h) = (3, 4);
    let inputs = vec![
        rand_tensor(&mut rng, &[1, 2, i]),
        rand_tensor(&mut rng, &[i, 4 * h]),
        rand_tensor(&mut rng, &[h, 4 * h]),
        rand_tensor(&mut rng, &[4 * h]),
    ];
    let r = grad_check(&inputs, Coords::All, |g, v| {
        let w = LstmWeights {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        let (y, _) = g.lstm(v[0], w, None, false)?;
        let last = g.slice(y, 1, 1, 1)?;
        weighted_sum(g, last, 4)
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
}

#[test]
fn cum_norm_examples() {
    let mut g = Graph::<f64>::no_grad();
    let x = g.constant(Tensor::full([3, 5], 2.5));
    let gain = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let bias = g.constant(Tensor::from_vec(vec![0.1, 0.2, 0.3]));
    let (y, _) = g.cum_norm(x, gain, bias, CumStats::default()).unwrap();
    for ch in 0..3 {
        for t in 0..5 {
            assert_eq!(g.value(y).at2(ch, t), [0.1, 0.2, 0.3][ch]);
        }
    }
    let e = g.constant(Tensor::zeros([3, 0]));
    assert!(g.cum_norm(e, gain, bias, CumStats::default()).is_err());
}

#[test]
fn cum_norm_last_frame_matches_global_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[4, 6]);
    // direct evaluation over all 24 entries
    let n = 24.0;
    let mean: f64 = x.data().iter().sum::<f64>() / n;
    let var: f64 = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut g = Graph::<f64>::no_grad();
    let xv = g.constant(x.clone());
    let gain = g.constant(Tensor::full([4], 1.0));
    let bias = g.constant(Tensor::zeros([4]));
    let (y, _) = g.cum_norm(xv, gain, bias, CumStats::default()).unwrap();
    for ch in 0..4 {
        let expect = (x.at2(ch, 5) - mean) / (var + NORM_EPS).sqrt();
        assert!((g.value(y).at2(ch, 5) - expect).abs() < 1e-12);
    }
}

#[test]
fn cum_norm_carried_stats_match_whole() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, &[3, 9]);
    let mut g = Graph::<f64>::no_grad();
    let xv = g.constant(x);
    let gain = g.constant(Tensor::full([3], 1.5));
    let bias = g.constant(Tensor::full([3], 0.5));
    let (whole, _) = g.cum_norm(xv, gain, bias, CumStats::default()).unwrap();
    let a = g.slice(xv, 1, 0, 4).unwrap();
    let b = g.slice(xv, 1, 4, 5).unwrap();
    let (ya, st) = g.cum_norm(a, gain, bias, CumStats::default()).unwrap();
    let (yb, _) = g.cum_norm(b, gain, bias, st).unwrap();
    let joined = g.concat(&[ya, yb], 1).unwrap();
    assert_eq!(g.value(joined), g.value(whole));
}

#[test]
fn adam_examples() {
    let lr = 1e-3;
    let mut p = Tensor::<f64>::from_vec(vec![1.0, -2.0, 0.5]);
    let g = [0.3, -4.0, 1e-3];
    let mut adam = Adam::default();
    adam.step_tensor("p", &mut p, &g, lr).unwrap();
    for (i, (&p1, &p0)) in p.data().iter().zip(&[1.0, -2.0, 0.5]).enumerate() {
        let expect = -lr * g[i] / (g[i].abs() + 1e-8);
        assert!((p1 - p0 - expect).abs() < 1e-12, "{i}");
        assert!(((p1 - p0) + lr * g[i].signum()).abs() < 1e-7);
    }
    // constant gradient: the second step is no larger than the first
    let mut q = Tensor::<f64>::from_vec(vec![0.0]);
    let mut adam = Adam::default();
    adam.step_tensor("q", &mut q, &[0.7], lr).unwrap();
    let d1 = q.data()[0].abs();
    adam.step_tensor("q", &mut q, &[0.7], lr).unwrap();
    let d2 = (q.data()[0].abs() - d1).abs();
    assert!(d2 <= d1 + 1e-15);
    assert_eq!(adam.slots["q"].step, 2);
    assert!(adam.step_tensor("q", &mut q, &[0.1, 0.2], lr).is_err());
}

#[test]
fn si_sdr_examples() {
    let s = [1.0, 0.0, 0.0, 0.0];
    let e = [1.0, 1.0, 0.0, 0.0];
    assert!(si_sdr(&s, &e).unwrap().abs() < 1e-6);
    let mut g = Graph::<f64>::no_grad();
    let ev = g.constant(Tensor::from_vec(e.to_vec()));
    let l = g.si_sdr_loss(ev, &s, false).unwrap();
    assert!(g.value(l).item().abs() < 1e-6);
    let scaled: Vec<f64> = e.iter().map(|v| 3.7 * v).collect();
    assert!((si_sdr(&s, &scaled).unwrap() - si_sdr(&s, &e).unwrap()).abs() < 1e-9);
    assert!(matches!(
        si_sdr(&s, &[0.0, 1.0, 0.0, 0.0]),
        Err(Error::SiSdr(SiSdrSingularity::Orthogonal))
    ));
    assert!(matches!(si_sdr(&s, &s), Err(Error::SiSdr(SiSdrSingularity::Perfect))));
    assert!(matches!(si_sdr(&[0.0; 4], &s), Err(Error::SiSdr(SiSdrSingularity::ZeroReference))));
}

#[test]
fn si_sdr_training_clamp_zeroes_gradient() {
    let s = [1.0, 0.0, 0.0, 0.0];
    let mut g = Graph::<f64>::new();
    let ev = g.param(Tensor::from_vec(s.to_vec()));
    let l = g.si_sdr_loss(ev, &s, true).unwrap();
    assert_eq!(g.value(l).item(), -TRAIN_CLAMP_DB);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(ev).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn ops_pass_grad_check() {
    check_op(&[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
    check_op(&[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    check_op(&[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    check_op(&[&[3, 4]], |g, v| Ok(g.scale(v[0], -1.7)));
    check_op(&[&[2, 3, 4], &[3]], |g, v| g.add_bias(v[0], v[1], 1));
    check_op(&[&[3, 4]], |g, v| Ok(g.relu(v[0])));
    check_op(&[&[3, 4]], |g, v| Ok(g.sigmoid(v[0])));
    check_op(&[&[3, 4]], |g, v| Ok(g.tanh(v[0])));
    check_op(&[&[3, 4], &[3]], |g, v| g.prelu(v[0], v[1], 0));
    check_op(&[&[3, 4], &[1]], |g, v| g.prelu(v[0], v[1], 1));
    check_op(&[&[2, 3, 4], &[2, 4, 5]], |g, v| g.matmul(v[0], v[1]));
    check_op(&[&[2, 3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
    check_op(&[&[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1]));
    check_op(&[&[2, 3, 4]], |g, v| g.reshape(v[0], &[6, 4]));
    check_op(&[&[2, 5, 4]], |g, v| g.slice(v[0], 1, 1, 3));
    check_op(&[&[2, 3], &[2, 4]], |g, v| g.concat(&[v[0], v[1]], 1));
    check_op(&[&[3, 12], &[2, 3, 4]], |g, v| g.conv1d(v[0], v[1], 2, 1, ConvMode::Valid));
    check_op(&[&[3, 12], &[2, 3, 3]], |g, v| g.conv1d(v[0], v[1], 1, 2, ConvMode::Causal));
    check_op(&[&[3, 12], &[4, 3, 3]], |g, v| g.conv1d(v[0], v[1], 1, 4, ConvMode::Same));
    check_op(&[&[3, 12], &[3, 1, 3]], |g, v| g.conv1d(v[0], v[1], 1, 2, ConvMode::Causal));
    check_op(&[&[3, 9]], |g, v| g.max_pool1d(v[0], 2, 2));
    check_op(&[&[3, 5]], |g, v| g.softmax(v[0]));
    check_op(&[&[4, 6], &[6], &[6]], |g, v| g.layer_norm(v[0], v[1], v[2]));
    check_op(&[&[3, 6], &[3], &[3]], |g, v| g.global_norm(v[0], v[1], v[2]));
    check_op(&[&[3, 6], &[3], &[3]], |g, v| {
        let init = CumStats {
            sum: 0.4,
            sum_sq: 5.0,
            count: 6.0,
        };
        Ok(g.cum_norm(v[0], v[1], v[2], init)?.0)
    });
    check_op(&[&[3, 5]], |g, v| g.interp_time(v[0], 13));
    check_op(&[&[3, 7]], |g, v| g.interp_time(v[0], 4));
    check_op(&[&[2, 5, 4]], |g, v| g.overlap_add(v[0], 2, 1, 9));
    check_op(&[&[2, 11]], |g, v| g.frame(v[0], 4, 2, 2, 6));
    check_op(&[&[3]], |g, v| g.broadcast_time(v[0], 5));
    check_op(&[&[2, 3, 4], &[4, 12], &[3, 12], &[12]], |g, v| {
        let w = LstmWeights {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        Ok(g.lstm(v[0], w, None, true)?.0)
    });
}

#[test]
fn si_sdr_loss_passes_grad_check() {
    for point in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let s: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let est = Tensor::from_fn([32], |i| s[i] + rng.random_range(-0.5..0.5));
        let r = grad_check(&[est], Coords::All, |g, v| g.si_sdr_loss(v[0], &s, false)).unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }
}

#[test]
fn overlap_add_is_adjoint_of_framing() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (t, l, hop) = (50, 8, 4);
    let frames = (t - l) / hop + 1;
    let s = rand_tensor(&mut rng, &[1, t]);
    let f = rand_tensor(&mut rng, &[1, frames, l]);
    let mut g = Graph::<f64>::no_grad();
    let sv = g.constant(s.clone());
    let fv = g.constant(f.clone());
    let framed = g.frame(sv, l, hop, 0, frames).unwrap();
    let ola = g.overlap_add(fv, hop, 0, t).unwrap();
    let lhs: f64 = g.value(framed).data().iter().zip(f.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = s.data().iter().zip(g.value(ola).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::<f64>::no_grad();
    let x = g.constant(Tensor::from_fn([5, 7], |_| rng.random_range(-30.0..30.0)));
    let y = g.softmax(x).unwrap();
    for r in 0..5 {
        let s: f64 = g.value(y).row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn interp_examples() {
    let mut g = Graph::<f64>::no_grad();
    let x = g.constant(Tensor::new([1, 2], vec![0.0, 1.0]).unwrap());
    let y = g.interp_time(x, 3).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.5, 1.0]);
    let c = g.constant(Tensor::full([2, 4], 0.7));
    let y = g.interp_time(c, 11).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    let r = g.constant(Tensor::new([1, 4], vec![0.3, -1.0, 2.0, 5.0]).unwrap());
    let y = g.interp_time(r, 4).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -1.0, 2.0, 5.0]);
    assert!(g.interp_time(r, 0).is_err());
}
