#![allow(dead_code)]

use std::sync::Arc;

use landscape::curvature::RestrictedHessian;
use landscape::data::{Dataset, Split};
use landscape::model::{EntryKind, LayerKind, LayerLayout, LayerSpec, Layout, Mode, ModelSpec, Network, ParamVector, Region};
use landscape::tensor::Tensor;
use landscape::trajectory::TrajectoryPath;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` Gaussian samples of shape `input` with uniform labels.
pub fn random_dataset(input: &[usize], n: usize, classes: usize, seed: u64) -> Dataset {
    let per: usize = input.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(input);
    let x = Tensor::new(shape, gaussian(n * per, seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Dataset::new(x, labels, classes, Split::Train).unwrap()
}

/// One small model per layer type, each under 500 parameters.
pub fn layer_zoo() -> Vec<(&'static str, ModelSpec)> {
    use LayerSpec::*;
    let flat = |layers| ModelSpec { input: vec![4], classes: 3, layers };
    let image = |layers| ModelSpec { input: vec![2, 5, 5], classes: 3, layers };
    vec![
        ("linear", flat(vec![Linear { out: 3, bias: true }])),
        ("relu", flat(vec![Linear { out: 6, bias: true }, Relu, Linear { out: 3, bias: true }])),
        ("batchnorm", flat(vec![Linear { out: 6, bias: false }, Batchnorm, Relu, Linear { out: 3, bias: true }])),
        ("conv", image(vec![Conv { out: 3, kernel: 3, stride: 1, bias: true }, Relu, Linear { out: 3, bias: true }])),
        ("conv-stride2", image(vec![Conv { out: 3, kernel: 3, stride: 2, bias: true }, Relu, Linear { out: 3, bias: true }])),
        ("maxpool", image(vec![Conv { out: 2, kernel: 3, stride: 1, bias: true }, Maxpool, Linear { out: 3, bias: true }])),
        (
            "skip",
            image(vec![
                Conv { out: 2, kernel: 3, stride: 1, bias: true },
                Skip { layers: vec![Conv { out: 2, kernel: 3, stride: 1, bias: true }, Relu] },
                Linear { out: 3, bias: true },
            ]),
        ),
        (
            "conv-batchnorm",
            image(vec![Conv { out: 2, kernel: 3, stride: 1, bias: false }, Batchnorm, Relu, Maxpool, Linear { out: 3, bias: true }]),
        ),
    ]
}

/// Parameters with nonzero biases and non-trivial running statistics.
pub fn perturbed_init(net: &Network, seed: u64) -> ParamVector {
    let mut p = net.init(seed);
    let noise = gaussian(p.len(), seed + 1000);
    for ((v, k), z) in p.values.iter_mut().zip(net.layout().kinds()).zip(noise) {
        match k {
            EntryKind::Bias | EntryKind::BnShift => *v += 0.1 * z,
            EntryKind::BnScale => *v = 1.0 + 0.2 * z,
            EntryKind::BnRunningStat => *v = 0.5 + 0.1 * z.abs(),
            EntryKind::Weight => {}
        }
    }
    p
}

pub fn trainable_mask(layout: &Layout) -> Vec<bool> {
    layout.kinds().into_iter().map(EntryKind::is_trainable).collect()
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// `(g(x + h v) − g(x − h v)) / 2h`, Richardson-extrapolated over `h` and `h/2`.
pub fn fd_directional(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    let step = |h: f64| -> Vec<f64> {
        let at = |s: f64| -> Vec<f64> { g(&x.iter().zip(v).map(|(a, b)| a + s * b).collect::<Vec<_>>()) };
        let (up, down) = (at(h), at(-h));
        up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect()
    };
    let (coarse, fine) = (step(h), step(h / 2.0));
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

pub fn loss_fn<'a>(net: &'a Network, data: &'a Dataset, mode: Mode) -> impl Fn(&[f64]) -> f64 + 'a {
    move |p| net.loss_grad(p, &data.features, &data.labels, mode).unwrap().0
}

/// Dense weight-restricted Hessian assembled column by column from the HVP oracle,
/// then symmetrized.
pub fn dense_restricted_hessian(h: &RestrictedHessian) -> DMatrix<f64> {
    let n = h.dim();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = h.apply(&e).unwrap();
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    (&m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn dense_extremes(m: DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(m);
    let lo = e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Single linear layer whose entries are all weights in one filter.
pub fn flat_layout(n: usize) -> Arc<Layout> {
    Arc::new(Layout {
        layers: vec![LayerLayout {
            kind: LayerKind::Linear,
            regions: vec![Region { kind: EntryKind::Weight, range: 0..n }],
            filter_len: n,
        }],
        len: n,
        spec_hash: String::new(),
    })
}

/// Random symmetric positive definite `n × n`, row-major.
pub fn random_spd(n: usize, seed: u64) -> Vec<f64> {
    let b = DMatrix::from_vec(n, n, gaussian(n * n, seed));
    let a = b.transpose() * &b / n as f64 + DMatrix::identity(n, n) * 0.1;
    (0..n * n).map(|k| a[(k / n, k % n)]).collect()
}

/// Random walk (or a path confined to a 2-plane) over the parameters of a small MLP.
pub fn synthetic_path(points: usize, dim_seed: u64, planar: bool) -> TrajectoryPath {
    let spec = ModelSpec::mlp(3, 1, 6, 2, true, false);
    let (_, init) = Network::build(&spec, dim_seed).unwrap();
    let n = init.len();
    let (u, w) = (gaussian(n, dim_seed + 1), gaussian(n, dim_seed + 2));
    let mut values = init.values.clone();
    let pts = (0..points)
        .map(|i| {
            if planar {
                let (a, b) = ((i as f64 * 0.7).cos() * (points - i) as f64, (i as f64 * 0.3).sin());
                init.with_values(init.values.iter().zip(&u).zip(&w).map(|((c, x), y)| c + a * x + b * y).collect()).unwrap()
            } else {
                let step = gaussian(n, dim_seed + 10 + i as u64);
                values.iter_mut().zip(step).for_each(|(v, s)| *v += 0.1 * s);
                init.with_values(values.clone()).unwrap()
            }
        })
        .collect();
    TrajectoryPath { epochs: (0..points).collect(), points: pts, lr_drops: vec![] }
}

/// Explained-variance fractions and top two right singular vectors of the
/// difference matrix, with the largest-magnitude entry made positive.
pub fn svd_oracle(path: &TrajectoryPath) -> (Vec<f64>, [Vec<f64>; 2]) {
    let idx = path.origin().layout().weight_indices();
    let o = &path.origin().values;
    let rows = path.points.len() - 1;
    let m = DMatrix::from_fn(rows, idx.len(), |r, c| path.points[r].values[idx[c]] - o[idx[c]]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let fractions = order.iter().map(|&k| svd.singular_values[k].powi(2) / total).collect();
    let dir = |k: usize| {
        let mut v = vec![0.0; o.len()];
        for (c, &i) in idx.iter().enumerate() {
            v[i] = vt[(order[k], c)];
        }
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    (fractions, [dir(0), dir(1)])
}
