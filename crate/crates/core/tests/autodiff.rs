mod common;

use common::*;
use landscape::model::{Mode, Network};
use landscape::objective::{Objective, Quadratic};
use proptest::prelude::*;

const GRAD_TOL: f64 = 1e-6;
const HVP_TOL: f64 = 1e-4;

fn modes(net: &Network) -> Vec<Mode> {
    if net.layout().has_batchnorm() {
        vec![Mode::Train, Mode::Eval]
    } else {
        vec![Mode::Eval]
    }
}

#[test]
fn gradients_match_central_differences() {
    for (name, spec) in layer_zoo() {
        let (net, _) = Network::build(&spec, 3).unwrap();
        assert!(net.dim() <= 500, "{name} has {} parameters", net.dim());
        let theta = perturbed_init(&net, 3);
        let data = random_dataset(&spec.input, 8, spec.classes, 11);
        let mask = trainable_mask(net.layout());
        for mode in modes(&net) {
            let (_, grad, _) = net.loss_grad(&theta.values, &data.features, &data.labels, mode).unwrap();
            let f = loss_fn(&net, &data, mode);
            for i in (0..net.dim()).filter(|&i| mask[i]) {
                let fd = central_diff(&f, &theta.values, i, 1e-6);
                assert!((grad[i] - fd).abs() < GRAD_TOL, "{name} {mode:?} entry {i}: {} vs {fd}", grad[i]);
            }
        }
    }
}

#[test]
fn hvps_match_differenced_gradients() {
    for (name, spec) in layer_zoo() {
        let (net, _) = Network::build(&spec, 5).unwrap();
        let theta = perturbed_init(&net, 5);
        let data = random_dataset(&spec.input, 8, spec.classes, 13);
        let mask = trainable_mask(net.layout());
        let mut v = gaussian(net.dim(), 17);
        for (x, &m) in v.iter_mut().zip(&mask) {
            if !m {
                *x = 0.0;
            }
        }
        for mode in modes(&net) {
            let hv = net.hvp(&theta.values, &v, &data.features, &data.labels, mode).unwrap();
            let grad = |p: &[f64]| net.loss_grad(p, &data.features, &data.labels, mode).unwrap().1;
            let fd = fd_directional(grad, &theta.values, &v, 1e-4);
            let keep = |w: &[f64]| w.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect::<Vec<_>>();
            let err = rel_err(&keep(&hv), &keep(&fd));
            assert!(err < HVP_TOL, "{name} {mode:?}: relative error {err}");
        }
    }
}

#[test]
fn quadratic_objective_derivatives_are_exact() {
    let n = 7;
    let a = random_spd(n, 2);
    let q = Quadratic::new(a.clone(), gaussian(n, 3)).unwrap();
    let x = gaussian(n, 4);
    let v = gaussian(n, 5);
    let hv = q.hvp(&x, &v).unwrap();
    for i in 0..n {
        let want: f64 = (0..n).map(|j| a[i * n + j] * v[j]).sum();
        assert!((hv[i] - want).abs() < 1e-12);
    }
    let g = q.gradient(&x).unwrap();
    let f = |p: &[f64]| q.evaluate(p).unwrap().train_loss;
    for i in 0..n {
        assert!((g[i] - central_diff(f, &x, i, 1e-6)).abs() < 1e-8);
    }
}

fn zoo_case() -> impl Strategy<Value = (usize, u64)> {
    (0..layer_zoo().len(), 0u64..1000)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn hvp_is_symmetric((model, seed) in zoo_case()) {
        let (_, spec) = layer_zoo().swap_remove(model);
        let (net, _) = Network::build(&spec, seed).unwrap();
        let theta = perturbed_init(&net, seed);
        let data = random_dataset(&spec.input, 6, spec.classes, seed + 1);
        let mask = trainable_mask(net.layout());
        let masked = |s| gaussian(net.dim(), s).into_iter().zip(&mask).map(|(x, &m)| if m { x } else { 0.0 }).collect::<Vec<_>>();
        let (u, v) = (masked(seed + 2), masked(seed + 3));
        for mode in modes(&net) {
            let hv = net.hvp(&theta.values, &v, &data.features, &data.labels, mode).unwrap();
            let hu = net.hvp(&theta.values, &u, &data.features, &data.labels, mode).unwrap();
            let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
            let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
            let scale = uhv.abs().max(vhu.abs()).max(1e-12);
            prop_assert!((uhv - vhu).abs() <= 1e-9 * scale, "{uhv} vs {vhu}");
        }
    }

    #[test]
    fn hvp_is_linear((model, seed) in zoo_case(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (_, spec) = layer_zoo().swap_remove(model);
        let (net, _) = Network::build(&spec, seed).unwrap();
        let theta = perturbed_init(&net, seed);
        let data = random_dataset(&spec.input, 6, spec.classes, seed + 1);
        let (u, v) = (gaussian(net.dim(), seed + 4), gaussian(net.dim(), seed + 5));
        let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let h = |w: &[f64]| net.hvp(&theta.values, w, &data.features, &data.labels, Mode::Eval).unwrap();
        let (hu, hv, hc) = (h(&u), h(&v), h(&comb));
        let want: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_err(&hc, &want) < 1e-10 || want.iter().all(|x| x.abs() < 1e-12));
    }
}
