//! Random directions in parameter space and their normalization.
//!
//! A raw Gaussian direction has no notion of the scale of the network it
//! perturbs. Filter normalization rescales every filter of the direction to
//! the norm of the matching filter of the reference parameters, so a step of
//! size 1 along the direction is a step of relative size 1 in every filter.
//! Layer normalization does the same at the granularity of a whole layer.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{EntryKind, Layout, ParamVector};

/// Generator identity recorded in output metadata.
pub const RNG_ID: &str = "rand_chacha::ChaCha8Rng/seed_from_u64 + rand_distr::StandardNormal";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    None,
    Filter,
    Layer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgnorePolicy {
    /// Biases and all batch-norm entries get zero perturbation.
    BiasBn,
    None,
}

/// Whether a perturbation may touch batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirType {
    Weights,
    States,
}

macro_rules! text_enum {
    ($t:ty { $($v:path => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::Invalid(format!(
                        "`{}` is not one of: {}", other, [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Scheme { Scheme::None => "none", Scheme::Filter => "filter", Scheme::Layer => "layer" });
text_enum!(IgnorePolicy { IgnorePolicy::BiasBn => "biasbn", IgnorePolicy::None => "none" });
text_enum!(DirType { DirType::Weights => "weights", DirType::States => "states" });

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
    pub scheme: Scheme,
    pub ignore: IgnorePolicy,
    pub seed: u64,
}

impl Direction {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>, scheme: Scheme, ignore: IgnorePolicy, seed: u64) -> Result<Self> {
        if values.len() != layout.len {
            return Err(Error::Dimension { expected: layout.len, got: values.len() });
        }
        Ok(Direction { values, layout, scheme, ignore, seed })
    }

    pub fn zeros(template: &ParamVector) -> Self {
        Direction {
            values: vec![0.0; template.len()],
            layout: template.layout().clone(),
            scheme: Scheme::None,
            ignore: IgnorePolicy::BiasBn,
            seed: 0,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn negated(&self) -> Self {
        Direction { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }

    /// Zeroes running-statistic entries unless `dir_type` is `States`.
    pub fn for_dir_type(mut self, dir_type: DirType) -> Self {
        if dir_type == DirType::Weights {
            for (v, k) in self.values.iter_mut().zip(self.layout.kinds()) {
                if k == EntryKind::BnRunningStat {
                    *v = 0.0;
                }
            }
        }
        self
    }
}

fn ignored(kind: EntryKind, policy: IgnorePolicy) -> bool {
    match policy {
        IgnorePolicy::BiasBn => kind != EntryKind::Weight,
        IgnorePolicy::None => false,
    }
}

/// I.i.d. standard normal entries on non-ignored positions, zeros elsewhere.
///
/// Every position consumes one draw regardless of policy, so the weight entries
/// of a given seed are identical under both policies.
pub fn sample_gaussian(template: &ParamVector, seed: u64, ignore: IgnorePolicy) -> Direction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = template
        .layout()
        .kinds()
        .into_iter()
        .map(|k| {
            let z: f64 = rng.sample(StandardNormal);
            if ignored(k, ignore) {
                0.0
            } else {
                z
            }
        })
        .collect();
    Direction { values, layout: template.layout().clone(), scheme: Scheme::None, ignore, seed }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `d ← d/‖d‖·‖θ‖` on one block; zero when either norm is zero.
fn match_norm(d: &mut [f64], theta: &[f64]) {
    let dn = norm(d);
    let tn = norm(theta);
    if dn == 0.0 || tn == 0.0 {
        d.fill(0.0);
        return;
    }
    let s = tn / dn;
    d.iter_mut().for_each(|v| *v *= s);
}

fn check_pair(d: &Direction, theta: &ParamVector) -> Result<()> {
    if d.len() != theta.len() {
        return Err(Error::Dimension { expected: theta.len(), got: d.len() });
    }
    Ok(())
}

/// Blocks normalized by `scheme`: weight filters (or whole weight regions for
/// `Layer`), plus every non-weight region as a single block.
fn blocks(layout: &Layout, scheme: Scheme) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for layer in &layout.layers {
        for r in &layer.regions {
            if r.kind == EntryKind::Weight && scheme == Scheme::Filter {
                out.extend(layer.filters());
            } else {
                out.push(r.range.clone());
            }
        }
    }
    out
}

fn normalize_blocks(d: &Direction, theta: &ParamVector, scheme: Scheme) -> Result<Direction> {
    check_pair(d, theta)?;
    let mut values = d.values.clone();
    for block in blocks(theta.layout(), scheme) {
        match_norm(&mut values[block.clone()], &theta.values[block]);
    }
    Ok(Direction { values, scheme, ..d.clone() })
}

/// Rescales each filter of `d` to the Frobenius norm of the matching filter of `theta`.
pub fn filter_normalize(d: &Direction, theta: &ParamVector) -> Result<Direction> {
    normalize_blocks(d, theta, Scheme::Filter)
}

/// Rescales each layer's weight block of `d` to the norm of the matching block of `theta`.
pub fn layer_normalize(d: &Direction, theta: &ParamVector) -> Result<Direction> {
    normalize_blocks(d, theta, Scheme::Layer)
}

pub fn normalize(d: &Direction, theta: &ParamVector, scheme: Scheme) -> Result<Direction> {
    match scheme {
        Scheme::None => {
            check_pair(d, theta)?;
            Ok(Direction { scheme: Scheme::None, ..d.clone() })
        }
        Scheme::Filter => filter_normalize(d, theta),
        Scheme::Layer => layer_normalize(d, theta),
    }
}

/// Samples, then normalizes against `theta`: the standard plotting direction.
pub fn random_direction(theta: &ParamVector, seed: u64, scheme: Scheme, ignore: IgnorePolicy) -> Direction {
    let d = sample_gaussian(theta, seed, ignore);
    normalize(&d, theta, scheme).expect("template and theta share layout")
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerKind, LayerLayout, ModelSpec, Network, Region};
    use proptest::prelude::*;

    fn one_layer(filters: usize, flen: usize) -> Arc<Layout> {
        let w = filters * flen;
        Arc::new(Layout {
            layers: vec![LayerLayout {
                kind: LayerKind::Linear,
                regions: vec![
                    Region { kind: EntryKind::Weight, range: 0..w },
                    Region { kind: EntryKind::Bias, range: w..w + filters },
                ],
                filter_len: flen,
            }],
            len: w + filters,
            spec_hash: String::new(),
        })
    }

    fn pv(layout: &Arc<Layout>, v: Vec<f64>) -> ParamVector {
        ParamVector::new(v, layout.clone()).unwrap()
    }

    fn dir(layout: &Arc<Layout>, v: Vec<f64>) -> Direction {
        Direction::new(v, layout.clone(), Scheme::None, IgnorePolicy::BiasBn, 0).unwrap()
    }

    #[test]
    fn filter_rescaled_to_theta_norm() {
        let l = one_layer(1, 2);
        let theta = pv(&l, vec![6.0, 8.0, 0.0]);
        let d = dir(&l, vec![3.0, 4.0, 0.0]);
        assert_eq!(filter_normalize(&d, &theta).unwrap().values, vec![6.0, 8.0, 0.0]);
    }

    #[test]
    fn direction_equal_to_theta_is_fixed() {
        let l = one_layer(2, 3);
        let theta = pv(&l, vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0, 0.0, 0.0]);
        let d = dir(&l, theta.values.clone());
        let out = filter_normalize(&d, &theta).unwrap();
        for (a, b) in out.values.iter().zip(&theta.values) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let l = one_layer(2, 2);
        let theta = pv(&l, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let d = dir(&l, vec![5.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let out = filter_normalize(&d, &theta).unwrap();
        assert_eq!(out.values, vec![0.0; 6]);
    }

    #[test]
    fn layer_normalization_scales_whole_block() {
        let l = one_layer(2, 2);
        // ‖d‖ = 2, ‖θ‖ = 6
        let theta = pv(&l, vec![6.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let d = dir(&l, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let out = layer_normalize(&d, &theta).unwrap();
        assert_eq!(&out.values[..4], &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn layer_and_filter_agree_only_for_single_filter() {
        let l1 = one_layer(1, 4);
        let theta = pv(&l1, vec![1.0, 2.0, 3.0, 4.0, 0.5]);
        let d = sample_gaussian(&theta, 9, IgnorePolicy::BiasBn);
        assert_eq!(filter_normalize(&d, &theta).unwrap().values, layer_normalize(&d, &theta).unwrap().values);

        let l2 = one_layer(2, 2);
        let theta = pv(&l2, vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5]);
        let d = sample_gaussian(&theta, 9, IgnorePolicy::BiasBn);
        assert_ne!(filter_normalize(&d, &theta).unwrap().values, layer_normalize(&d, &theta).unwrap().values);
    }

    #[test]
    fn biasbn_policy_zeroes_non_weights() {
        let spec = ModelSpec::mlp(2, 2, 5, 2, true, true);
        let (net, theta) = Network::build(&spec, 0).unwrap();
        let d = sample_gaussian(&theta, 1, IgnorePolicy::BiasBn);
        let n = filter_normalize(&d, &theta).unwrap();
        for ((a, b), k) in d.values.iter().zip(&n.values).zip(net.layout().kinds()) {
            if k != EntryKind::Weight {
                assert_eq!(*a, 0.0);
                assert_eq!(*b, 0.0);
            } else {
                assert_ne!(*a, 0.0);
            }
        }
        let all = sample_gaussian(&theta, 1, IgnorePolicy::None);
        assert!(all.values.iter().all(|&v| v != 0.0));
        assert_eq!(sample_gaussian(&theta, 1, IgnorePolicy::BiasBn), d);
    }

    #[test]
    fn dir_type_weights_clears_running_stats() {
        let spec = ModelSpec::mlp(2, 1, 3, 2, true, true);
        let (net, theta) = Network::build(&spec, 0).unwrap();
        let d = sample_gaussian(&theta, 1, IgnorePolicy::None).for_dir_type(DirType::Weights);
        for (v, k) in d.values.iter().zip(net.layout().kinds()) {
            assert_eq!(*v == 0.0, k == EntryKind::BnRunningStat);
        }
    }

    #[test]
    fn gaussian_moments() {
        let spec = ModelSpec::mlp(2, 2, 100, 2, true, false);
        let (_, theta) = Network::build(&spec, 0).unwrap();
        let d = sample_gaussian(&theta, 77, IgnorePolicy::BiasBn);
        let w: Vec<f64> = theta.layout().weight_indices().into_iter().map(|i| d.values[i]).collect();
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05, "mean {mean} var {var}");
    }

    #[test]
    fn cosine_basics() {
        let a = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&a, &[0.0; 3]), Err(Error::ZeroVector)));
        assert!(cosine_similarity(&a, &[1.0]).is_err());
    }

    #[test]
    fn scheme_text_round_trip() {
        for s in ["none", "filter", "layer"] {
            assert_eq!(s.parse::<Scheme>().unwrap().to_string(), s);
        }
        assert!("filters".parse::<Scheme>().is_err());
        assert_eq!("biasbn".parse::<IgnorePolicy>().unwrap(), IgnorePolicy::BiasBn);
    }

    fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    proptest! {
        #[test]
        fn filter_normalize_is_idempotent_and_scale_equivariant(
            seed in 0u64..1000, c in 0.01f64..100.0, width in 1usize..6
        ) {
            let spec = ModelSpec::mlp(3, 2, width, 2, true, true);
            let (_, theta) = Network::build(&spec, seed).unwrap();
            let d = sample_gaussian(&theta, seed + 1, IgnorePolicy::BiasBn);
            let once = filter_normalize(&d, &theta).unwrap();
            let twice = filter_normalize(&once, &theta).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!(rel_eq(*a, *b, 1e-12));
            }
            let scaled = theta.with_values(theta.values.iter().map(|v| v * c).collect()).unwrap();
            let s = filter_normalize(&d, &scaled).unwrap();
            for (a, b) in s.values.iter().zip(&once.values) {
                prop_assert!(rel_eq(*a, c * b, 1e-12));
            }
            for layer in 0..theta.layout().layers.len() {
                for f in theta.filters_of(layer).unwrap() {
                    prop_assert!(rel_eq(norm(&once.values[f.clone()]), norm(&theta.values[f]), 1e-12));
                }
            }
        }
    }
}
