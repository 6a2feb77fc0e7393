use proptest::prelude::*;
use survmtl::autodiff::{grad_check, Tape};
use survmtl::losses::{surv_masked_bce, SurvivalNorm};
use survmtl::model::{forward_heads, grl_wrap, CellKind, HazardKind, ModelParams, ParamRole};
use survmtl_testkit::gradients::{head_checks, loss_checks, random_survival_targets, small_config};
use survmtl_testkit::rng;

const TOLERANCE: f64 = 1e-6;

fn assert_all_below(results: &[survmtl_testkit::CheckResult]) {
    for r in results {
        assert!(r.max_error < TOLERANCE, "{}: {:e}", r.name, r.max_error);
    }
}

#[test]
fn every_loss_matches_central_differences() {
    let results = loss_checks(20);
    assert!(results.len() >= 20);
    assert_all_below(&results);
}

#[test]
fn every_head_path_matches_central_differences() {
    let results = head_checks(20);
    assert_all_below(&results);
}

#[test]
fn library_grad_check_agrees_with_the_oracle() {
    let point = [0.3, -1.2, 0.8];
    let err = grad_check(
        |t, x| {
            let s = t.softplus(x);
            let q = t.square(s);
            Ok(t.sum(q))
        },
        &point,
        1e-6,
    )
    .unwrap();
    assert!(err < TOLERANCE);
}

#[test]
fn grl_gradient_is_exactly_minus_alpha_times_plain() {
    let z0: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let c: Vec<f64> = (0..12).map(|i| (i as f64 * 0.11).cos()).collect();
    for alpha in [0.0, 0.5, 0.3, 2.0] {
        let grad = |reverse: bool| {
            let mut t = Tape::new();
            let z = t.leaf(z0.clone(), 3, 4);
            let h = if reverse { grl_wrap(&mut t, z, alpha) } else { z };
            let s = t.tanh(h);
            let k = t.constant(c.clone(), 3, 4);
            let m = t.mul(s, k).unwrap();
            let y = t.sum(m);
            t.backward(y).unwrap().wrt(z)
        };
        let plain = grad(false);
        let reversed = grad(true);
        for (r, p) in reversed.iter().zip(&plain) {
            assert_eq!(*r, -alpha * p);
        }
    }
}

#[test]
fn constant_effect_is_time_varying_with_equal_columns() {
    let tv_cfg = small_config(CellKind::Lstm, HazardKind::TimeVarying);
    let ce_cfg = small_config(CellKind::Lstm, HazardKind::ConstantEffect);
    for seed in 0..10 {
        let ce = ModelParams::<f64>::init(&ce_cfg, seed).unwrap();
        let mut tv = ModelParams::<f64>::init(&tv_cfg, seed).unwrap();
        let l = tv_cfg.horizon_bins;
        for (t, c) in tv.entries_mut().iter_mut().zip(ce.entries()) {
            if t.role == ParamRole::Hazard && t.tensor.cols == l && c.tensor.cols == 1 {
                t.tensor.data = c.tensor.data.iter().flat_map(|&w| std::iter::repeat_n(w, l)).collect();
            } else {
                t.tensor.data.clone_from(&c.tensor.data);
            }
        }
        let mut r = rng(seed);
        let targets = random_survival_targets(&mut r, 2, l);
        let z: Vec<f64> = (0..2 * tv_cfg.hidden_dim)
            .map(|i| ((i + seed as usize) as f64).sin())
            .collect();
        let loss = |p: &ModelParams<f64>| {
            let mut t = Tape::new();
            let b = p.bind(&mut t);
            let zc = t.constant(z.clone(), 2, tv_cfg.hidden_dim);
            let h = forward_heads(&mut t, p, &b, zc).unwrap();
            let v = surv_masked_bce(&mut t, h.eta, &targets, SurvivalNorm::Batch).unwrap();
            t.scalar(v)
        };
        assert!((loss(&tv) - loss(&ce)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, xs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let grads = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let x = t.leaf(xs.clone(), 2, 3);
            let f = { let s = t.sigmoid(x); t.sum(s) };
            let g = { let q = t.square(x); let e = t.tanh(q); t.mean(e) };
            let fa = t.scale(f, ca);
            let gb = t.scale(g, cb);
            let y = t.add(fa, gb).unwrap();
            t.backward(y).unwrap().wrt(x)
        };
        let combined = grads(a, b);
        let f_only = grads(1.0, 0.0);
        let g_only = grads(0.0, 1.0);
        for i in 0..xs.len() {
            prop_assert!((combined[i] - (a * f_only[i] + b * g_only[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_identical(xs in prop::collection::vec(-2.0f64..2.0, 8)) {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(xs.clone(), 2, 4);
            let w = t.constant((0..12).map(|i| i as f64 * 0.1 - 0.5).collect(), 4, 3);
            let h = t.matmul(x, w).unwrap();
            let s = t.softplus(h);
            let y = t.mean(s);
            let v = t.scalar(y);
            (v.to_bits(), t.backward(y).unwrap().wrt(x).iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
