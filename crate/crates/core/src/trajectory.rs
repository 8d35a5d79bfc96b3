//! PCA of optimizer paths and their projection onto parameter planes.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::directions::{normalize, Direction, IgnorePolicy, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale, symmetric_eigen};
use crate::model::{Layout, ParamVector};
use crate::objective::Objective;
use crate::par::Execution;
use crate::surface::{fmt_f64, grid_2d, ray_1d, read_table, AxisSpec, LossGrid};
use crate::train::TrajectoryRecord;

/// Eigenvalues of the Gram matrix below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Tolerance for accepting a direction pair as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Path points: checkpoint epochs and parameters, final point last.
#[derive(Clone, Debug)]
pub struct TrajectoryPath {
    pub epochs: Vec<usize>,
    pub points: Vec<ParamVector>,
    pub lr_drops: Vec<usize>,
}

impl TrajectoryPath {
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        TrajectoryPath {
            epochs: rec.checkpoints.iter().map(|c| c.epoch).collect(),
            points: rec.checkpoints.iter().map(|c| c.params.clone()).collect(),
            lr_drops: rec.lr_drops.clone(),
        }
    }

    pub fn origin(&self) -> &ParamVector {
        self.points.last().expect("path is not empty")
    }

    /// Rows `θ_i − θ_n` over weight entries, for every point but the last.
    fn differences(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        let o = &self.origin().values;
        self.points[..self.points.len() - 1]
            .iter()
            .map(|p| idx.iter().map(|&i| p.values[i] - o[i]).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// Unit directions over the full parameter vector; zero off the weight entries.
    pub directions: [Vec<f64>; 2],
    pub layout: Arc<Layout>,
    pub epochs: Vec<usize>,
    /// `(u, v)` per path point; the final point is the origin.
    pub coords: Vec<(f64, f64)>,
    /// `σ_k² / Σσ_i²` for the two axes.
    pub variance: [f64; 2],
    /// Number of nonzero singular values of the difference matrix.
    pub rank: usize,
    pub lr_drops: Vec<usize>,
}

impl PcaProjection {
    /// Second axis has no support in the path.
    pub fn degenerate(&self) -> bool {
        self.rank < 2
    }

    pub fn captured(&self) -> f64 {
        self.variance[0] + self.variance[1]
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# landscape projection v1")?;
        writeln!(out, "# variance1 = {}", fmt_f64(self.variance[0]))?;
        writeln!(out, "# variance2 = {}", fmt_f64(self.variance[1]))?;
        writeln!(out, "# rank = {}", self.rank)?;
        writeln!(out, "# degenerate = {}", self.degenerate())?;
        writeln!(out, "# model_spec_hash = {}", self.layout.spec_hash)?;
        writeln!(out, "# basis = orthonormal")?;
        writeln!(out, "epoch,u,v,is_lr_drop")?;
        for (e, (u, v)) in self.epochs.iter().zip(&self.coords) {
            writeln!(out, "{e},{},{},{}", fmt_f64(*u), fmt_f64(*v), u8::from(self.lr_drops.contains(e)))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Coordinates and markers read back from a projection file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionTable {
    pub variance: [f64; 2],
    pub epochs: Vec<usize>,
    pub coords: Vec<(f64, f64)>,
    pub lr_drops: Vec<usize>,
}

impl ProjectionTable {
    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let (meta, rows) = read_table(input)?;
        let var = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::Format(format!("missing `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{k}`")))
        };
        let mut t = ProjectionTable { variance: [var("variance1")?, var("variance2")?], epochs: vec![], coords: vec![], lr_drops: vec![] };
        for r in rows {
            if r.len() != 4 {
                return Err(Error::Format("projection rows need 4 columns".into()));
            }
            let e = r[0] as usize;
            t.epochs.push(e);
            t.coords.push((r[1], r[2]));
            if r[3] != 0.0 {
                t.lr_drops.push(e);
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn expand(idx: &[usize], len: usize, compact: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (&i, &v) in idx.iter().zip(compact) {
        out[i] = v;
    }
    out
}

/// Sign convention: the entry of largest magnitude is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        scale(v, -1.0);
    }
}

/// Unit vector orthogonal to `against`, built from the first coordinate axis
/// that is not nearly parallel to it.
fn complete(against: &[f64]) -> Vec<f64> {
    for k in 0..against.len() {
        let mut e = vec![0.0; against.len()];
        e[k] = 1.0;
        let c = dot(&e, against);
        axpy(&mut e, -c, against);
        let n = norm(&e);
        if n > 0.5 {
            scale(&mut e, 1.0 / n);
            return e;
        }
    }
    vec![0.0; against.len()]
}

/// Top two principal directions of `M = [θ_0 − θ_n; …; θ_{n−1} − θ_n]` over
/// weight entries, via the eigendecomposition of `M Mᵀ`.
pub fn pca_directions(path: &TrajectoryPath) -> Result<PcaProjection> {
    if path.points.len() < 3 {
        return Err(Error::Invalid(format!("PCA needs at least 3 checkpoints, got {}", path.points.len())));
    }
    let layout = path.origin().layout().clone();
    if let Some(p) = path.points.iter().find(|p| p.layout() != &layout) {
        return Err(Error::SpecHashMismatch(layout.spec_hash.clone(), p.layout().spec_hash.clone()));
    }
    let idx = layout.weight_indices();
    let m = path.differences(&idx);
    let n = m.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&m[i], &m[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let total: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    let (vals, vecs) = symmetric_eigen(&gram, n)?;
    let top = vals[n - 1].max(0.0);
    let rank = vals.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count();
    let axis = |k: usize| -> Option<(Vec<f64>, f64)> {
        if k >= rank {
            return None;
        }
        let col = n - 1 - k;
        let mut e = vec![0.0; idx.len()];
        for (i, row) in m.iter().enumerate() {
            axpy(&mut e, vecs[i * n + col], row);
        }
        let s = norm(&e);
        scale(&mut e, 1.0 / s);
        canonical_sign(&mut e);
        Some((e, vals[col] / total))
    };
    let (e1, f1) = axis(0).unwrap_or_else(|| {
        let mut e = vec![0.0; idx.len()];
        if let Some(x) = e.first_mut() {
            *x = 1.0;
        }
        (e, 0.0)
    });
    let (e2, f2) = axis(1).unwrap_or_else(|| (complete(&e1), 0.0));
    let directions = [expand(&idx, layout.len, &e1), expand(&idx, layout.len, &e2)];
    let coords = project(path, &directions)?;
    Ok(PcaProjection {
        directions,
        layout,
        epochs: path.epochs.clone(),
        coords,
        variance: [f64::clamp(f1, 0.0, 1.0), f64::clamp(f2, 0.0, 1.0)],
        rank,
        lr_drops: path.lr_drops.clone(),
    })
}

fn check_pair(len: usize, pair: &[Vec<f64>; 2]) -> Result<()> {
    for d in pair {
        if d.len() != len {
            return Err(Error::Dimension { expected: len, got: d.len() });
        }
    }
    let (a, b, c) = (dot(&pair[0], &pair[0]), dot(&pair[1], &pair[1]), dot(&pair[0], &pair[1]));
    if (a - 1.0).abs() > ORTHONORMAL_TOL || (b - 1.0).abs() > ORTHONORMAL_TOL || c.abs() > ORTHONORMAL_TOL {
        return Err(Error::Invalid(format!("direction pair is not orthonormal (norms² {a}, {b}; inner product {c})")));
    }
    Ok(())
}

/// `(u_i, v_i) = ((θ_i − θ_n)·e₁, (θ_i − θ_n)·e₂)` for every path point.
pub fn project(path: &TrajectoryPath, pair: &[Vec<f64>; 2]) -> Result<Vec<(f64, f64)>> {
    let o = &path.origin().values;
    check_pair(o.len(), pair)?;
    path.points
        .iter()
        .map(|p| {
            if p.len() != o.len() {
                return Err(Error::Dimension { expected: o.len(), got: p.len() });
            }
            let d: Vec<f64> = p.values.iter().zip(o).map(|(a, b)| a - b).collect();
            Ok((dot(&d, &pair[0]), dot(&d, &pair[1])))
        })
        .collect()
}

/// Fraction of the path's weight-space variance about `θ_n` captured by the
/// plane of an orthonormal pair.
pub fn captured_variance(path: &TrajectoryPath, pair: &[Vec<f64>; 2]) -> Result<f64> {
    let idx = path.origin().layout().weight_indices();
    let total: f64 = path.differences(&idx).iter().map(|r| dot(r, r)).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let coords = project(path, pair)?;
    Ok(coords.iter().map(|(u, v)| u * u + v * v).sum::<f64>() / total)
}

/// Gaussian pair over the weight entries of `template`, orthonormalized.
pub fn random_orthonormal_pair(template: &ParamVector, seed: u64) -> [Vec<f64>; 2] {
    let idx = template.layout().weight_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { idx.iter().map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut a = draw();
    let mut b = draw();
    let na = norm(&a);
    scale(&mut a, 1.0 / na);
    for _ in 0..2 {
        let c = dot(&b, &a);
        axpy(&mut b, -c, &a);
    }
    let nb = norm(&b);
    scale(&mut b, 1.0 / nb);
    [expand(&idx, template.len(), &a), expand(&idx, template.len(), &b)]
}

/// Loss surface over the PCA plane around `θ_n` plus the path overlay.
pub struct TrajectorySurface {
    pub grid: LossGrid,
    pub overlay: Vec<(f64, f64)>,
    pub epochs: Vec<usize>,
    pub lr_drops: Vec<usize>,
}

/// Surface directions are filter-normalized copies of the PCA axes; overlay
/// coordinates stay in the orthonormal PCA basis. A degenerate second axis
/// yields a 1D ray along the first.
pub fn trajectory_surface(
    obj: &dyn Objective,
    path: &TrajectoryPath,
    pca: &PcaProjection,
    x: AxisSpec,
    y: AxisSpec,
    exec: Execution,
) -> Result<TrajectorySurface> {
    let origin = path.origin();
    let dir = |k: usize| -> Result<Direction> {
        let raw = Direction::new(pca.directions[k].clone(), origin.layout().clone(), Scheme::None, IgnorePolicy::BiasBn, k as u64)?;
        normalize(&raw, origin, Scheme::Filter)
    };
    let d1 = dir(0)?;
    let mut grid = if pca.degenerate() {
        ray_1d(obj, origin, &d1, x, exec)?
    } else {
        grid_2d(obj, origin, &d1, &dir(1)?, x, y, exec)?
    };
    grid.meta.set("kind", "trajectory");
    grid.meta.set("xseed", "pca1");
    if !pca.degenerate() {
        grid.meta.set("yseed", "pca2");
    }
    grid.meta.set("variance1", fmt_f64(pca.variance[0]));
    grid.meta.set("variance2", fmt_f64(pca.variance[1]));
    grid.meta.set("overlay_basis", "orthonormal");
    grid.meta.set("surface_basis", "filter-normalized");
    Ok(TrajectorySurface { grid, overlay: pca.coords.clone(), epochs: pca.epochs.clone(), lr_drops: pca.lr_drops.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntryKind, LayerKind, LayerLayout, Region};

    fn layout(n: usize) -> Arc<Layout> {
        Arc::new(Layout {
            layers: vec![LayerLayout {
                kind: LayerKind::Linear,
                regions: vec![Region { kind: EntryKind::Weight, range: 0..n - 1 }, Region { kind: EntryKind::Bias, range: n - 1..n }],
                filter_len: n - 1,
            }],
            len: n,
            spec_hash: String::new(),
        })
    }

    fn path(points: Vec<Vec<f64>>) -> TrajectoryPath {
        let l = layout(points[0].len());
        TrajectoryPath {
            epochs: (0..points.len()).collect(),
            points: points.into_iter().map(|p| ParamVector::new(p, l.clone()).unwrap()).collect(),
            lr_drops: vec![1],
        }
    }

    #[test]
    fn straight_line_is_rank_one() {
        let p = path((0..5).map(|i| vec![i as f64, 2.0 * i as f64, 0.0, 7.0]).collect());
        let pca = pca_directions(&p).unwrap();
        assert_eq!(pca.rank, 1);
        assert!(pca.degenerate());
        assert!((pca.variance[0] - 1.0).abs() < 1e-12);
        assert_eq!(pca.variance[1], 0.0);
        let g = dot(&pca.directions[0], &pca.directions[1]);
        assert!(g.abs() < 1e-12);
        assert_eq!(pca.coords.last(), Some(&(0.0, 0.0)));
    }

    #[test]
    fn planar_path_captures_everything() {
        let p = path((0..6).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), 0.0, 1.0]).collect());
        let pca = pca_directions(&p).unwrap();
        assert_eq!(pca.rank, 2);
        assert!((pca.captured() - 1.0).abs() < 1e-10);
        assert!(pca.variance[0] >= pca.variance[1]);
        // bias entry is excluded
        assert_eq!(pca.directions[0][3], 0.0);
    }

    #[test]
    fn constant_path_projects_to_origin() {
        let p = path(vec![vec![1.0, 2.0, 3.0]; 4]);
        let pca = pca_directions(&p).unwrap();
        assert_eq!(pca.rank, 0);
        assert!(pca.coords.iter().all(|&c| c == (0.0, 0.0)));
    }

    #[test]
    fn projection_checks_its_inputs() {
        let p = path(vec![vec![1.0, 2.0, 3.0]; 3]);
        assert!(project(&p, &[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).is_err());
        assert!(project(&p, &[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(pca_directions(&path(vec![vec![1.0, 2.0]; 2])).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = path((0..5).map(|i| vec![i as f64, (i * i) as f64, 0.5, 0.0]).collect());
        let pca = pca_directions(&p).unwrap();
        let t = ProjectionTable::read_from(pca.to_csv_string().as_bytes()).unwrap();
        assert_eq!(t.coords, pca.coords);
        assert_eq!(t.lr_drops, vec![1]);
        assert_eq!(t.variance, pca.variance);
    }

    #[test]
    fn random_pair_is_orthonormal() {
        let l = layout(50);
        let theta = ParamVector::new(vec![0.0; 50], l).unwrap();
        let [a, b] = random_orthonormal_pair(&theta, 3);
        assert!((dot(&a, &a) - 1.0).abs() < 1e-12);
        assert!((dot(&b, &b) - 1.0).abs() < 1e-12);
        assert!(dot(&a, &b).abs() < 1e-12);
        assert_eq!(a[49], 0.0);
    }
}
