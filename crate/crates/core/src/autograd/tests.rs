use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::*;

fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn store_with(entries: &[(&str, (usize, usize, usize))], seed: u64) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let ids = entries
        .iter()
        .map(|(name, (_, r, c))| {
            let dims: Vec<usize> = if *r == 1 { vec![*c] } else { vec![*r, *c] };
            s.add_uniform(*name, &dims, 1.0, &mut rng).unwrap()
        })
        .collect();
    (s, ids)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(random(g.shape(y), seed));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn sum_and_product_gradients() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let x = g.input(random((2, 3, 4), 1));
    let y = g.input(random((2, 3, 4), 2));
    let p = g.mul(x, y).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), g.value(y));
    assert!(matches!(g.backward(loss), Err(Error::InvalidState(_))));

    let mut g = Graph::new(&params);
    let x = g.input(random((1, 3, 2), 3));
    let loss = g.sum(x);
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(x).unwrap().iter().all(|v| *v == 1.0));
}

#[test]
fn non_scalar_loss_rejected() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let x = g.input(random((1, 3, 2), 3));
    assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
}

#[test]
fn gradients_are_additive() {
    let x0 = random((1, 6, 3), 4);
    let (params, ids) = store_with(&[("k", (1, 3, 3)), ("w", (1, 3, 2))], 5);
    let run = |which: u8| {
        let mut g = Graph::new(&params);
        let x = g.input(x0.clone());
        let (k, w) = (g.param(ids[0]), g.param(ids[1]));
        let y = g.sep_conv1d(x, k, w, 1).unwrap();
        let l1 = weighted_sum(&mut g, y, 6).unwrap();
        let s = g.sigmoid(y);
        let l2 = weighted_sum(&mut g, s, 7).unwrap();
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        let grads = g.backward(loss).unwrap();
        (grads.wrt(x).unwrap().clone(), grads.param(ids[0]).unwrap().clone())
    };
    let (a, b, both) = (run(1), run(2), run(3));
    for (s, t) in (&a.0 + &b.0).iter().zip(both.0.iter()) {
        assert!((s - t).abs() < 1e-12);
    }
    for (s, t) in (&a.1 + &b.1).iter().zip(both.1.iter()) {
        assert!((s - t).abs() < 1e-12);
    }
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let (mut params, ids) = store_with(&[("w", (1, 3, 2))], 1);
    params.set_trainable(|n| n == "w", false);
    let mut g = Graph::new(&params);
    let x = g.input(random((1, 4, 3), 2));
    let w = g.param(ids[0]);
    let y = g.project(x, w).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(ids[0]).is_none());
    assert!(grads.wrt(x).is_some());
}

#[test]
fn separable_identity() {
    let mut params = ParamStore::new();
    let mut delta = vec![0.0; 5 * 3];
    delta[2 * 3..3 * 3].fill(1.0);
    let k = params.add("k", &[5, 3], delta).unwrap();
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    let w = params.add("w", &[3, 3], eye).unwrap();
    let mut g = Graph::new(&params);
    let x0 = random((1, 7, 3), 9);
    let x = g.input(x0.clone());
    let (kv, wv) = (g.param(k), g.param(w));
    let y = g.sep_conv1d(x, kv, wv, 1).unwrap();
    assert_eq!(g.value(y), &x0);
}

#[test]
fn separable_matches_dense_convolution() {
    let (t, ci, co, kw) = (8, 3, 2, 5);
    let (params, ids) = store_with(&[("k", (1, kw, ci)), ("w", (1, ci, co))], 11);
    let x0 = random((1, t, ci), 12);
    let mut g = Graph::new(&params);
    let x = g.input(x0.clone());
    let (k, w) = (g.param(ids[0]), g.param(ids[1]));
    let y = g.sep_conv1d(x, k, w, 1).unwrap();
    let kv = &params.get(ids[0]).value;
    let wv = &params.get(ids[1]).value;
    // dense kernel D[j, c, o] = k[j, c] * w[c, o]
    for tt in 0..t {
        for o in 0..co {
            let mut acc = 0.0;
            for j in 0..kw {
                let src = tt as isize + j as isize - 2;
                if src < 0 || src >= t as isize {
                    continue;
                }
                for c in 0..ci {
                    acc += x0[[0, src as usize, c]] * kv[[0, j, c]] * wv[[0, c, o]];
                }
            }
            assert!((g.value(y)[[0, tt, o]] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn transposed_is_adjoint_of_strided() {
    let (t, kw) = (4, 5);
    let (params, ids) = store_with(&[("k", (1, kw, 1))], 21);
    let x0 = random((1, t, 1), 22);
    let mut g = Graph::new(&params);
    let x = g.input(x0.clone());
    let k = g.param(ids[0]);
    let y = g.depthwise_conv_up(x, k).unwrap();
    assert_eq!(g.shape(y), (1, 2 * t, 1));
    // A[to, ti] = k[ti - 2 to + pad] for the stride-2 conv on 2t samples
    let kv = &params.get(ids[0]).value;
    let mut a = ndarray::Array2::<f64>::zeros((t, 2 * t));
    for to in 0..t {
        for j in 0..kw {
            let ti = (2 * to + j) as isize - 2;
            if (0..2 * t as isize).contains(&ti) {
                a[[to, ti as usize]] = kv[[0, j, 0]];
            }
        }
    }
    let expect = a.t().dot(&x0.index_axis(ndarray::Axis(0), 0).column(0));
    for (u, e) in expect.iter().enumerate() {
        assert!((g.value(y)[[0, u, 0]] - e).abs() < 1e-12);
    }

    let params5 = ParamStore::new();
    let mut g = Graph::new(&params5);
    let x = g.input(random((1, 5, 2), 1));
    let k = g.constant(random((1, 5, 2), 2));
    let eye = g_eye(&mut g, 2);
    let y = g.transposed_conv1d(x, k, eye).unwrap();
    assert_eq!(g.shape(y).1, 10);
}

fn g_eye(g: &mut Graph<'_, f64>, c: usize) -> Var {
    g.constant(Array3::from_shape_fn((1, c, c), |(_, i, j)| if i == j { 1.0 } else { 0.0 }))
}

#[test]
fn strided_shape_and_errors() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let x = g.input(random((1, 8, 2), 1));
    let k = g.constant(random((1, 5, 2), 2));
    let y = g.depthwise_conv(x, k, 2).unwrap();
    assert_eq!(g.shape(y), (1, 4, 2));
    let odd = g.input(random((1, 7, 2), 3));
    assert!(g.depthwise_conv(odd, k, 2).is_err());
    let bad_k = g.constant(random((1, 4, 2), 2));
    assert!(g.depthwise_conv(x, bad_k, 1).is_err());
    let w = g.constant(random((1, 3, 2), 4));
    assert!(g.project(x, w).is_err());
}

#[test]
fn batch_norm_cases() {
    let mut params = ParamStore::new();
    let gamma = params.add_filled("g", &[3], 1.0).unwrap();
    let beta = params.add_filled("b", &[3], 0.0).unwrap();
    let mut state = BnState::new(3);
    let mut g = Graph::new(&params);
    let (gv, bv) = (g.param(gamma), g.param(beta));
    let c = g.input(Array3::from_elem((1, 6, 3), 2.5));
    let y = g.batch_norm(c, gv, bv, &mut state, BnMode::Train).unwrap();
    assert!(g.value(y).iter().all(|v| *v == 0.0));
    assert!((state.mean[0] - 0.25).abs() < 1e-12);
    assert!((state.var[0] - 0.9).abs() < 1e-12);

    let x = g.input(random((2, 50, 3), 5) * 3.0 + 1.0);
    let y = g.batch_norm(x, gv, bv, &mut state, BnMode::Train).unwrap();
    for ch in 0..3 {
        let col: Vec<f64> = g.value(y).index_axis(ndarray::Axis(2), ch).iter().copied().collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 1e-5);
        assert!((v - 1.0).abs() < 1e-5, "variance {v}");
    }

    let mut fixed = BnState::new(3);
    fixed.mean = vec![1.0, 0.0, -1.0];
    fixed.var = vec![4.0 - 1e-5; 3];
    let before = fixed.clone();
    let z = g.input(Array3::from_elem((1, 2, 3), 1.0));
    let y = g.batch_norm(z, gv, bv, &mut fixed, BnMode::Eval).unwrap();
    assert_eq!(fixed, before);
    let row: Vec<f64> = g.value(y).iter().take(3).copied().collect();
    for (a, e) in row.iter().zip([0.0, 0.5, 1.0]) {
        assert!((a - e).abs() < 1e-9);
    }
    let bad = g.input(random((1, 4, 2), 1));
    assert!(g.batch_norm(bad, gv, bv, &mut state, BnMode::Train).is_err());
}

#[test]
fn elementwise_values() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let x = g.input(Array3::from_shape_vec((1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).as_slice().unwrap(), &[0.0, 0.0, 2.0]);
    let s = g.sigmoid(x);
    assert_eq!(g.value(s)[[0, 0, 1]], 0.5);
    let big = g.input(Array3::from_elem((1, 1, 1), 30.0));
    let s = g.sigmoid(big);
    assert!(g.value(s)[[0, 0, 0]] < 1.0);
    assert!(g.log1p(x).is_err());
}

#[test]
fn pooling_repeat_concat() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let x = g.input(Array3::from_shape_vec((1, 4, 1), vec![1.0, 3.0, 5.0, 7.0]).unwrap());
    let p = g.avg_pool2(x).unwrap();
    assert_eq!(g.value(p).as_slice().unwrap(), &[2.0, 6.0]);
    let c = g.input(Array3::from_elem((1, 6, 2), 1.5));
    let p = g.avg_pool2(c).unwrap();
    assert!(g.value(p).iter().all(|v| *v == 1.5));
    let odd = g.input(random((1, 3, 1), 1));
    assert!(g.avg_pool2(odd).is_err());
    let r = g.repeat2(x);
    assert_eq!(g.value(r).as_slice().unwrap(), &[1.0, 1.0, 3.0, 3.0, 5.0, 5.0, 7.0, 7.0]);

    let a0 = random((1, 4, 2), 2);
    let a = g.input(a0.clone());
    let b = g.input(Array3::zeros((1, 4, 3)));
    let ab = g.concat(a, b).unwrap();
    assert_eq!(g.shape(ab), (1, 4, 5));
    assert_eq!(g.value(ab).slice(ndarray::s![.., .., ..2]), a0);
    let short = g.input(Array3::zeros((1, 3, 3)));
    assert!(g.concat(a, short).is_err());
}

#[test]
fn pair_normalization() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    // F = 2: channels are re0, re1, im0, im1
    let x = g.input(Array3::from_shape_vec((1, 1, 4), vec![3.0, 0.0, 4.0, 0.0]).unwrap());
    let y = g.pair_normalize(x).unwrap();
    assert_eq!(g.value(y).as_slice().unwrap(), &[0.6, 1.0, 0.8, 0.0]);
    let loss = weighted_sum(&mut g, y, 1).unwrap();
    let grads = g.backward(loss).unwrap();
    let gx = grads.wrt(x).unwrap();
    assert_eq!((gx[[0, 0, 1]], gx[[0, 0, 3]]), (0.0, 0.0));
}

#[test]
fn gradient_checks_per_operator() {
    type Build = Box<dyn Fn(&mut Graph<'_, f64>, &[Var], &[ParamId], &mut BnState<f64>) -> Result<Var>>;
    let cases: Vec<(&str, Vec<(usize, usize, usize)>, Vec<(&str, (usize, usize, usize))>, Build)> = vec![
        ("sep_conv", vec![(2, 6, 3)], vec![("k", (1, 5, 3)), ("w", (1, 3, 2))], Box::new(|g, x, p, _| {
            let (k, w) = (g.param(p[0]), g.param(p[1]));
            g.sep_conv1d(x[0], k, w, 1)
        })),
        ("sep_conv_stride2", vec![(1, 8, 2)], vec![("k", (1, 3, 2)), ("w", (1, 2, 3))], Box::new(|g, x, p, _| {
            let (k, w) = (g.param(p[0]), g.param(p[1]));
            g.sep_conv1d(x[0], k, w, 2)
        })),
        ("transposed", vec![(1, 4, 2)], vec![("k", (1, 5, 2)), ("w", (1, 2, 3))], Box::new(|g, x, p, _| {
            let (k, w) = (g.param(p[0]), g.param(p[1]));
            g.transposed_conv1d(x[0], k, w)
        })),
        ("bias", vec![(2, 3, 4)], vec![("b", (1, 1, 4))], Box::new(|g, x, p, _| {
            let b = g.param(p[0]);
            g.add_bias(x[0], b)
        })),
        ("bn_train", vec![(2, 5, 3)], vec![("g", (1, 1, 3)), ("b", (1, 1, 3))], Box::new(|g, x, p, s| {
            let (ga, be) = (g.param(p[0]), g.param(p[1]));
            g.batch_norm(x[0], ga, be, s, BnMode::Train)
        })),
        ("bn_eval", vec![(1, 5, 3)], vec![("g", (1, 1, 3)), ("b", (1, 1, 3))], Box::new(|g, x, p, s| {
            let (ga, be) = (g.param(p[0]), g.param(p[1]));
            g.batch_norm(x[0], ga, be, s, BnMode::Eval)
        })),
        ("relu", vec![(1, 5, 3)], vec![], Box::new(|g, x, _, _| Ok(g.relu(x[0])))),
        ("sigmoid", vec![(1, 5, 3)], vec![], Box::new(|g, x, _, _| Ok(g.sigmoid(x[0])))),
        ("abs", vec![(1, 5, 3)], vec![], Box::new(|g, x, _, _| Ok(g.abs(x[0])))),
        ("log1p", vec![(1, 5, 3)], vec![], Box::new(|g, x, _, _| {
            let a = g.abs(x[0]);
            g.log1p(a)
        })),
        ("scale", vec![(1, 2, 3)], vec![], Box::new(|g, x, _, _| Ok(g.scale(x[0], -1.7)))),
        ("pool", vec![(2, 6, 2)], vec![], Box::new(|g, x, _, _| g.avg_pool2(x[0]))),
        ("repeat", vec![(2, 3, 2)], vec![], Box::new(|g, x, _, _| Ok(g.repeat2(x[0])))),
        ("concat", vec![(1, 3, 2), (1, 3, 3)], vec![], Box::new(|g, x, _, _| g.concat(x[0], x[1]))),
        ("add", vec![(1, 3, 2), (1, 3, 2)], vec![], Box::new(|g, x, _, _| g.add(x[0], x[1]))),
        ("sub", vec![(1, 3, 2), (1, 3, 2)], vec![], Box::new(|g, x, _, _| g.sub(x[0], x[1]))),
        ("mul", vec![(1, 3, 2), (1, 3, 2)], vec![], Box::new(|g, x, _, _| g.mul(x[0], x[1]))),
        ("pair_norm", vec![(1, 3, 4)], vec![], Box::new(|g, x, _, _| g.pair_normalize(x[0]))),
        ("pair_dot", vec![(1, 3, 4), (1, 3, 4)], vec![], Box::new(|g, x, _, _| g.pair_dot(x[0], x[1]))),
        ("mean", vec![(2, 3, 2)], vec![], Box::new(|g, x, _, _| Ok(g.mean(x[0])))),
    ];
    for (i, (name, shapes, entries, build)) in cases.into_iter().enumerate() {
        let inputs: Vec<_> = shapes.iter().enumerate().map(|(k, s)| random(*s, 100 * i as u64 + k as u64)).collect();
        let (mut params, ids) = store_with(&entries, i as u64);
        if name == "bn_eval" || name == "bn_train" {
            let gamma = params.get_mut(ids[0]);
            gamma.value.mapv_inplace(|v| v + 1.5);
        }
        let mut state = BnState::new(3);
        state.mean = vec![0.1, -0.2, 0.3];
        state.var = vec![0.5, 1.5, 2.0];
        let report = check(&inputs, &params, |g, x| {
            let y = build(g, x, &ids, &mut state.clone())?;
            weighted_sum(g, y, 7)
        })
        .unwrap();
        let tol = if name == "relu" || name == "sigmoid" { 1e-6 } else { 1e-4 };
        assert!(report.max_rel_error < tol, "{name}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_stride_shapes(b in 1usize..3, half in 1usize..10, c in 1usize..5, kh in 0usize..3) {
        let params = ParamStore::<f64>::new();
        let mut g = Graph::new(&params);
        let x = g.input(Array3::zeros((b, 2 * half, c)));
        let k = g.constant(Array3::zeros((1, 2 * kh + 1, c)));
        let y1 = g.depthwise_conv(x, k, 1).unwrap();
        let y2 = g.depthwise_conv(x, k, 2).unwrap();
        let up = g.depthwise_conv_up(x, k).unwrap();
        prop_assert_eq!(g.shape(y1), (b, 2 * half, c));
        prop_assert_eq!(g.shape(y2), (b, half, c));
        prop_assert_eq!(g.shape(up), (b, 4 * half, c));
    }

    #[test]
    fn pair_normalize_gives_unit_pairs(v in proptest::collection::vec(-10.0f64..10.0, 8)) {
        let params = ParamStore::<f64>::new();
        let mut g = Graph::new(&params);
        let x = g.input(Array3::from_shape_vec((1, 2, 4), v).unwrap());
        let y = g.pair_normalize(x).unwrap();
        let yv = g.value(y);
        for t in 0..2 {
            for f in 0..2 {
                let n = yv[[0, t, f]].hypot(yv[[0, t, 2 + f]]);
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
