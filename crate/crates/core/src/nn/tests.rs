use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

/// Central finite differences against the reverse pass, on every entry.
fn check_grads(store: &ParamStore, build: impl Fn(&mut Graph, Bind) -> Var, tol: f64) {
    let mut g = Graph::new();
    let loss = build(&mut g, Bind::trainable(store));
    let grads = g.backward(loss);
    let h = 1e-6;
    for id in store.ids() {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(store.get(id).dim()));
        for idx in 0..store.get(id).len() {
            let eval = |delta: f64| {
                let mut s = store.clone();
                let flat = s.get_mut(id).as_slice_mut().unwrap();
                flat[idx] += delta;
                let mut g = Graph::new();
                let l = build(&mut g, Bind::frozen(&s));
                g.scalar(l)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[idx];
            let err = (fd - an).abs() / (1.0 + fd.abs().max(an.abs()));
            assert!(err < tol, "{}[{idx}]: analytic {an} vs fd {fd}", store.param(id).name);
        }
    }
}

#[test]
fn dense_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = s.add("x", ParamGroup::Decoders, rand_matrix(&mut rng, 6, 4));
    let w = s.add("w", ParamGroup::Decoders, rand_matrix(&mut rng, 4, 3));
    let b = s.add("b", ParamGroup::Decoders, rand_matrix(&mut rng, 1, 3));
    let target = rand_matrix(&mut rng, 6, 5);
    check_grads(
        &s,
        |g, p| {
            let (x, w, b) = (p.var(g, x), p.var(g, w), p.var(g, b));
            let y = g.matmul(x, w);
            let y = g.add_row(y, b);
            let t = g.tanh(y);
            let r = g.relu(y);
            let a = g.affine(t, 1.7, -0.3);
            let c = g.clamp(y, -0.5, 0.5);
            let cat = g.concat(&[a, r]);
            let cat = g.concat(&[cat, c]);
            let m = g.mse(cat, &ndarray::concatenate![ndarray::Axis(1), target, rand_like(6, 4)]);
            let l1 = g.mae(t, &Array2::zeros((6, 3)).mapv(|v: f64| v + 0.05));
            g.weighted_sum(&[(m, 1.0), (l1, 0.4)])
        },
        1e-5,
    );
}

fn rand_like(r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |(i, j)| ((i * 5 + j * 3) % 7) as f64 * 0.1 - 0.3)
}

#[test]
fn sequence_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (batch, steps) = (2, 7);
    let mut s = ParamStore::new();
    let x = s.add("x", ParamGroup::Decoders, rand_matrix(&mut rng, batch * steps, 3));
    let conv = Conv1d::new(&mut s, "conv", ParamGroup::Decoders, 3, 4, 5, &mut rng);
    let lstm = BiLstm::new(&mut s, "lstm", ParamGroup::Decoders, 4, 3, 2, &mut rng);
    let head = Linear::new(&mut s, "head", ParamGroup::Decoders, 6, 2, &mut rng);
    let target = rand_matrix(&mut rng, batch * steps, 2);
    check_grads(
        &s,
        |g, p| {
            let xv = p.var(g, x);
            let h = conv.forward(g, p, xv, steps);
            let h = g.relu(h);
            let h = lstm.forward(g, p, h, steps);
            let pooled = g.mean_time(h, steps);
            let tiled = g.tile_time(pooled, steps);
            let sum = g.concat(&[h, tiled]);
            let y = head.forward(g, p, h);
            let a = g.mse(y, &target);
            let b = g.mse(sum, &Array2::zeros((batch * steps, 12)));
            g.weighted_sum(&[(a, 1.0), (b, 0.5)])
        },
        1e-5,
    );
}

#[test]
fn classification_and_density_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let logits = s.add("logits", ParamGroup::ClsCommon, rand_matrix(&mut rng, 5, 4));
    let mu = s.add("mu", ParamGroup::QNets, rand_matrix(&mut rng, 9, 2));
    let lv = s.add("lv", ParamGroup::QNets, rand_matrix(&mut rng, 9, 2));
    let y = s.add("y", ParamGroup::QNets, rand_matrix(&mut rng, 9, 2));
    check_grads(
        &s,
        |g, p| {
            let l = p.var(g, logits);
            let xent = g.softmax_cross_entropy(l, &[0, 3, 1, 1, 2]);
            let (m, v, yy) = (p.var(g, mu), p.var(g, lv), p.var(g, y));
            let ll = g.gaussian_loglik(m, v, yy);
            let club = g.club(m, v, yy);
            g.weighted_sum(&[(xent, 1.0), (ll, 0.3), (club, 0.8)])
        },
        1e-5,
    );
}

#[test]
fn club_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d) = (13, 3);
    let (mu, lv, y) = (rand_matrix(&mut rng, n, d), rand_matrix(&mut rng, n, d), rand_matrix(&mut rng, n, d));
    let mut brute = 0.0;
    for i in 0..n {
        for j in 0..n {
            brute += logq_cross(&mu, &lv, &y, i, i) - logq_cross(&mu, &lv, &y, i, j);
        }
    }
    brute /= (n * n) as f64;
    let mut g = Graph::new();
    let (a, b, c) = (g.input(mu.clone()), g.input(lv.clone()), g.input(y.clone()));
    let est = g.club(a, b, c);
    assert!((g.scalar(est) - brute).abs() < 1e-10, "{} vs {brute}", g.scalar(est));
}

/// `log q(y_j | x_i)` where q's parameters at `x_i` are row `i`.
fn logq_cross(mu: &Array2<f64>, lv: &Array2<f64>, y: &Array2<f64>, i: usize, j: usize) -> f64 {
    (0..mu.ncols())
        .map(|k| {
            -0.5 * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * lv[[i, k]]
                - 0.5 * (y[[j, k]] - mu[[i, k]]).powi(2) / lv[[i, k]].exp()
        })
        .sum()
}

#[test]
fn grl_is_identity_forward_and_scaled_negation_backward() {
    let mut s = ParamStore::new();
    let x = s.add("x", ParamGroup::EncIrrelevant, Array2::from_shape_vec((1, 2), vec![1.5, -2.0]).unwrap());
    let mut g = Graph::new();
    let xv = g.param(&s, x);
    let y = g.grl(xv, 1.0);
    assert_eq!(g.value(y), g.value(xv));

    // Upstream gradient [1, -3] through a linear read-out.
    let w = g.input(Array2::from_shape_vec((2, 1), vec![1.0, -3.0]).unwrap());
    let out = g.matmul(y, w);
    let loss = g.weighted_sum(&[(out, 1.0)]);
    let grads = g.backward(loss);
    assert_eq!(grads.get(x).unwrap().as_slice().unwrap(), &[-1.0, 3.0]);

    let mut g = Graph::new();
    let xv = g.param(&s, x);
    let y = g.grl(xv, 0.5);
    let w = g.input(Array2::from_shape_vec((2, 1), vec![2.0, 0.0]).unwrap());
    let out = g.matmul(y, w);
    let grads = g.backward(out);
    assert_eq!(grads.get(x).unwrap()[[0, 0]], -1.0);
}

#[test]
fn cross_entropy_reference_values() {
    let mut g = Graph::new();
    let l = g.input(Array2::zeros((3, 4)));
    let ce = g.softmax_cross_entropy(l, &[0, 2, 3]);
    assert!((g.scalar(ce) - 4f64.ln()).abs() < 1e-12);
    let l = g.input(Array2::from_shape_vec((1, 4), vec![10.0, 0.0, 0.0, 0.0]).unwrap());
    let ce = g.softmax_cross_entropy(l, &[0]);
    assert!(g.scalar(ce) < 0.01);
}

#[test]
fn adam_with_zero_lr_leaves_params_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let w = s.add("w", ParamGroup::Decoders, rand_matrix(&mut rng, 3, 3));
    let before = s.clone();
    let cfg = AdamConfig {
        lr: 0.0,
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-8,
        max_grad_norm: Some(1.0),
    };
    let mut opt = Adam::new(cfg, &[&s]);
    for _ in 0..3 {
        let mut g = Graph::new();
        let wv = g.param(&s, w);
        let l = g.mse(wv, &Array2::ones((3, 3)));
        let grads = g.backward(l);
        opt.step(&mut [(&mut s, &grads)]);
    }
    assert_eq!(s, before);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut s = ParamStore::new();
    let w = s.add("w", ParamGroup::Decoders, Array2::from_elem((2, 2), 3.0));
    let cfg = AdamConfig {
        lr: 0.05,
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-8,
        max_grad_norm: Some(1.0),
    };
    let mut opt = Adam::new(cfg, &[&s]);
    let target = Array2::from_shape_vec((2, 2), vec![1.0, -1.0, 0.5, 0.0]).unwrap();
    for _ in 0..500 {
        let mut g = Graph::new();
        let wv = g.param(&s, w);
        let l = g.mse(wv, &target);
        let grads = g.backward(l);
        opt.step(&mut [(&mut s, &grads)]);
    }
    for (a, b) in s.get(w).iter().zip(target.iter()) {
        assert!((a - b).abs() < 1e-2);
    }
}

#[test]
fn tanh_matches_std() {
    let xs = Array2::from_shape_fn((1, 4001), |(_, j)| (j as f64 - 2000.0) * 0.0125);
    let mut g = Graph::new();
    let x = g.input(xs.clone());
    let y = g.tanh(x);
    for (a, b) in g.value(y).iter().zip(xs.iter()) {
        let want = b.tanh();
        assert!((a - want).abs() <= 4.0 * f64::EPSILON * want.abs().max(f64::MIN_POSITIVE), "{b}: {a} vs {want}");
    }
}
