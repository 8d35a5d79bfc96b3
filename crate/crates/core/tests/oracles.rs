mod common;

use common::*;
use landscape::curvature::{lanczos_extremal, LanczosSettings, RestrictedHessian};
use landscape::data::{make_synthetic, Split, SyntheticKind};
use landscape::model::{ModelSpec, Network, ParamVector};
use landscape::objective::{NetworkObjective, Objective};
use landscape::trajectory::{captured_variance, pca_directions, project, random_orthonormal_pair};
use nalgebra::{DMatrix, SymmetricEigen};

fn matvec(a: &DMatrix<f64>) -> impl Fn(&[f64]) -> landscape::Result<Vec<f64>> + '_ {
    move |v| Ok((a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec())
}

/// Symmetric matrix `Q diag(eigs) Qᵀ` with a random orthogonal `Q`.
fn with_spectrum(eigs: &[f64], seed: u64) -> DMatrix<f64> {
    let n = eigs.len();
    let q = DMatrix::from_vec(n, n, gaussian(n * n, seed)).qr().q();
    &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigs)) * q.transpose()
}

#[test]
fn lanczos_matches_dense_eigensolver() {
    let spectra: Vec<Vec<f64>> = vec![
        (0..40).map(|i| i as f64 - 12.5).collect(),
        (0..60).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect(),
        [vec![5.0; 10], vec![-2.0; 10], vec![0.0; 20]].concat(),
        (0..150).map(|i| ((i * 7919) % 151) as f64 / 151.0 - 0.3).collect(),
    ];
    for (k, eigs) in spectra.iter().enumerate() {
        let a = with_spectrum(eigs, k as u64);
        let dense = SymmetricEigen::new(a.clone()).eigenvalues;
        let lo = dense.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = dense.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = lanczos_extremal(matvec(&a), eigs.len(), &LanczosSettings::default()).unwrap();
        assert!((e.lambda_min - lo).abs() <= 1e-8 * lo.abs().max(hi.abs()), "case {k}: {} vs {lo}", e.lambda_min);
        assert!((e.lambda_max - hi).abs() <= 1e-8 * hi.abs(), "case {k}: {} vs {hi}", e.lambda_max);
    }
}

#[test]
fn hvp_hessian_matches_finite_difference_hessian() {
    let spec = ModelSpec::mlp(2, 1, 5, 2, true, true);
    let (net, _) = Network::build(&spec, 1).unwrap();
    let theta = perturbed_init(&net, 1);
    let data = make_synthetic(SyntheticKind::TwoMoons, 32, 0.2, 0, Split::Train).unwrap();
    let obj = NetworkObjective::new(&net, &data, None);
    let rh = RestrictedHessian::weights(&obj, &theta).unwrap();
    let dense = dense_restricted_hessian(&rh);
    let idx = theta.layout().weight_indices();
    let grad = |p: &[f64]| {
        let g = obj.gradient(p).unwrap();
        idx.iter().map(|&i| g[i]).collect::<Vec<_>>()
    };
    let mut fd = DMatrix::zeros(idx.len(), idx.len());
    for (j, &col) in idx.iter().enumerate() {
        let mut e = vec![0.0; theta.len()];
        e[col] = 1.0;
        let c = fd_directional(grad, &theta.values, &e, 1e-4);
        for i in 0..idx.len() {
            fd[(i, j)] = c[i];
        }
    }
    let err = (&dense - &fd).norm() / dense.norm();
    assert!(err < 1e-6, "relative Frobenius error {err}");
}

#[test]
fn pca_matches_dense_svd() {
    for (points, seed) in [(5, 0), (12, 1), (30, 2)] {
        let path = synthetic_path(points, seed, false);
        let pca = pca_directions(&path).unwrap();
        let (fractions, dirs) = svd_oracle(&path);
        for k in 0..2 {
            assert!((pca.variance[k] - fractions[k]).abs() < 1e-8);
            let diff = pca.directions[k].iter().zip(&dirs[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "axis {k} differs by {diff}");
        }
        let coords = project(&path, &pca.directions).unwrap();
        assert_eq!(coords, pca.coords);
        assert!((captured_variance(&path, &pca.directions).unwrap() - pca.captured()).abs() < 1e-10);
    }
}

#[test]
fn planar_path_is_fully_captured() {
    let path = synthetic_path(15, 7, true);
    let pca = pca_directions(&path).unwrap();
    assert_eq!(pca.rank, 2);
    assert!((pca.captured() - 1.0).abs() < 1e-10);
}

#[test]
fn random_pairs_capture_little_of_a_path() {
    let path = synthetic_path(20, 3, false);
    let origin: &ParamVector = path.origin();
    for seed in 0..5 {
        let pair = random_orthonormal_pair(origin, seed);
        let c = captured_variance(&path, &pair).unwrap();
        assert!(c < 0.5, "seed {seed} captured {c}");
    }
}
