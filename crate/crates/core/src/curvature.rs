//! Extremal Hessian eigenvalues by Lanczos iteration, and eigenvalue-ratio maps
//! over a parameter plane.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::directions::Direction;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale, tridiagonal_eigen};
use crate::model::ParamVector;
use crate::objective::Objective;
use crate::par::{try_map_indexed, Execution};
use crate::surface::{fmt_f64, read_table, AxisSpec, LossGrid, Metadata};

/// Relative drift of `uᵀHv` against `vᵀHu` above which the oracle is rejected.
pub const SYMMETRY_TOL: f64 = 1e-8;
const MAX_RESTARTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosSettings {
    /// Krylov dimension; `None` means `min(dim, 100)`.
    pub iterations: Option<usize>,
    /// Bound on `‖Hv − λv‖ / |λ|` for both returned Ritz pairs.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosSettings {
    fn default() -> Self {
        LanczosSettings { iterations: None, tol: 1e-6, seed: 0 }
    }
}

impl LanczosSettings {
    pub fn krylov_dim(&self, dim: usize) -> usize {
        self.iterations.unwrap_or(100).min(dim).max(1)
    }

    fn describe(&self, meta: &mut Metadata) {
        meta.set("lanczos_iterations", self.iterations.map_or("min(dim,100)".to_string(), |k| k.to_string()));
        meta.set("lanczos_reorthogonalization", "full");
        meta.set("lanczos_tol", self.tol);
        meta.set("lanczos_seed", self.seed);
    }
}

/// Smallest and largest eigenvalue estimates with their relative residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub residual_min: f64,
    pub residual_max: f64,
    /// Krylov dimension of the final run.
    pub iterations: usize,
}

impl Extremes {
    pub fn converged(&self, tol: f64) -> bool {
        self.residual_min <= tol && self.residual_max <= tol
    }

    /// `|λ_min / λ_max|`; 0 when both vanish, infinite when only `λ_max` does.
    pub fn ratio(&self) -> f64 {
        ratio(self.lambda_min, self.lambda_max)
    }
}

pub fn ratio(lmin: f64, lmax: f64) -> f64 {
    if lmax != 0.0 {
        (lmin / lmax).abs()
    } else if lmin == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    (n > 0.0 && n.is_finite()).then(|| {
        scale(&mut v, 1.0 / n);
        v
    })
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // twice is enough
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            axpy(w, -c, q);
        }
    }
}

/// Fresh unit vector orthogonal to `basis`, or `None` once the space is exhausted.
fn fresh_vector(dim: usize, basis: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if basis.len() >= dim {
        return None;
    }
    for _ in 0..MAX_RESTARTS {
        let mut v = gaussian(dim, rng);
        let before = norm(&v);
        orthogonalize(&mut v, basis);
        if norm(&v) > 1e-8 * before {
            return unit(v);
        }
    }
    None
}

struct Ritz {
    value: f64,
    vector: Vec<f64>,
}

/// Runs `k` Lanczos steps and returns the extreme Ritz pairs.
fn lanczos_run<F>(op: &F, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<(Ritz, Ritz)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    let mut q = fresh_vector(dim, &[], rng).ok_or_else(|| Error::Lanczos("could not draw a start vector".into()))?;
    let mut scale_est = 0.0f64;
    loop {
        let mut w = op(&q)?;
        if w.len() != dim {
            return Err(Error::Dimension { expected: dim, got: w.len() });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Lanczos("operator returned a non-finite vector".into()));
        }
        scale_est = scale_est.max(norm(&w));
        let a = dot(&q, &w);
        alpha.push(a);
        basis.push(q);
        if basis.len() == k {
            break;
        }
        orthogonalize(&mut w, &basis);
        let b = norm(&w);
        if b > 1e-10 * scale_est.max(f64::MIN_POSITIVE) {
            beta.push(b);
            scale(&mut w, 1.0 / b);
            q = w;
        } else {
            // invariant subspace found; continue in its complement
            match fresh_vector(dim, &basis, rng) {
                Some(v) => {
                    beta.push(0.0);
                    q = v;
                }
                None => break,
            }
        }
    }
    let m = basis.len();
    let (vals, vecs) = tridiagonal_eigen(&alpha, &beta[..m - 1])?;
    let ritz = |col: usize| {
        let mut y = vec![0.0; dim];
        for (i, qi) in basis.iter().enumerate() {
            axpy(&mut y, vecs[i * m + col], qi);
        }
        let y = unit(y).unwrap_or_else(|| basis[0].clone());
        Ritz { value: vals[col], vector: y }
    };
    Ok((ritz(0), ritz(m - 1)))
}

fn residual<F>(op: &F, r: &Ritz) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut hv = op(&r.vector)?;
    axpy(&mut hv, -r.value, &r.vector);
    Ok(norm(&hv))
}

fn relative(res: f64, lambda: f64, spectral: f64) -> f64 {
    // |λ| floored at machine precision relative to the spectrum's scale
    res / lambda.abs().max(f64::EPSILON * spectral).max(f64::MIN_POSITIVE)
}

/// Rejects operators whose bilinear form drifts from symmetry.
pub fn check_symmetry<F>(op: &F, dim: usize, seed: u64) -> Result<()>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5e);
    let u = gaussian(dim, &mut rng);
    let v = gaussian(dim, &mut rng);
    let hu = op(&u)?;
    let hv = op(&v)?;
    let uhv = dot(&u, &hv);
    let vhu = dot(&v, &hu);
    let scale = norm(&u) * norm(&hv).max(norm(&hu));
    if (uhv - vhu).abs() > SYMMETRY_TOL * scale {
        return Err(Error::NonSymmetric { uhv, vhu });
    }
    Ok(())
}

/// Smallest and largest eigenvalues of the symmetric operator `op` on `R^dim`.
///
/// Both ends come from one Lanczos run with full reorthogonalization. An end
/// whose residual misses `tol` is recomputed on the negated operator (for
/// `λ_min`) or with a larger Krylov space, until the space is exhausted.
pub fn lanczos_extremal<F>(op: F, dim: usize, settings: &LanczosSettings) -> Result<Extremes>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::Lanczos("empty operator".into()));
    }
    if let Some(k) = settings.iterations {
        if k == 0 || k > dim {
            return Err(Error::Lanczos(format!("{k} iterations for dimension {dim}")));
        }
    }
    check_symmetry(&op, dim, settings.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut k = settings.krylov_dim(dim);
    let (lo, hi) = lanczos_run(&op, dim, k, &mut rng)?;
    let spectral = lo.value.abs().max(hi.value.abs());
    let mut best_min = (lo.value, relative(residual(&op, &lo)?, lo.value, spectral));
    let mut best_max = (hi.value, relative(residual(&op, &hi)?, hi.value, spectral));
    let neg = |v: &[f64]| -> Result<Vec<f64>> {
        let mut h = op(v)?;
        scale(&mut h, -1.0);
        Ok(h)
    };
    let mut rounds = 0;
    while (best_min.1 > settings.tol || best_max.1 > settings.tol) && rounds < MAX_RESTARTS {
        rounds += 1;
        if best_min.1 > settings.tol {
            let (_, top) = lanczos_run(&neg, dim, k, &mut rng)?;
            let cand = Ritz { value: -top.value, vector: top.vector };
            let r = relative(residual(&op, &cand)?, cand.value, spectral);
            if r < best_min.1 {
                best_min = (cand.value, r);
            }
        }
        if best_min.1 <= settings.tol && best_max.1 <= settings.tol {
            break;
        }
        if k == dim {
            break;
        }
        k = (2 * k).min(dim);
        let (lo, hi) = lanczos_run(&op, dim, k, &mut rng)?;
        let rl = relative(residual(&op, &lo)?, lo.value, spectral);
        let rh = relative(residual(&op, &hi)?, hi.value, spectral);
        if rl < best_min.1 {
            best_min = (lo.value, rl);
        }
        if rh < best_max.1 {
            best_max = (hi.value, rh);
        }
    }
    let (mut lmin, mut lmax) = (best_min.0, best_max.0);
    if lmin > lmax {
        std::mem::swap(&mut lmin, &mut lmax);
    }
    Ok(Extremes { lambda_min: lmin, lambda_max: lmax, residual_min: best_min.1, residual_max: best_max.1, iterations: k })
}

/// Hessian of `obj` at `params` restricted to the coordinates in `idx`.
pub struct RestrictedHessian<'a> {
    obj: &'a dyn Objective,
    params: Vec<f64>,
    idx: Vec<usize>,
}

impl<'a> RestrictedHessian<'a> {
    pub fn new(obj: &'a dyn Objective, params: Vec<f64>, idx: Vec<usize>) -> Result<Self> {
        obj.check(&params)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= params.len()) {
            return Err(Error::Dimension { expected: params.len(), got: bad + 1 });
        }
        Ok(RestrictedHessian { obj, params, idx })
    }

    /// Restriction to the weight-kind entries of `theta`'s layout.
    pub fn weights(obj: &'a dyn Objective, theta: &ParamVector) -> Result<Self> {
        Self::new(obj, theta.values.clone(), theta.layout().weight_indices())
    }

    pub fn dim(&self) -> usize {
        self.idx.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.idx.len() {
            return Err(Error::Dimension { expected: self.idx.len(), got: v.len() });
        }
        let mut full = vec![0.0; self.params.len()];
        for (&i, &x) in self.idx.iter().zip(v) {
            full[i] = x;
        }
        let h = self.obj.hvp(&self.params, &full)?;
        Ok(self.idx.iter().map(|&i| h[i]).collect())
    }

    pub fn extremes(&self, settings: &LanczosSettings) -> Result<Extremes> {
        lanczos_extremal(|v| self.apply(v), self.dim(), settings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigCell {
    pub lmin: f64,
    pub lmax: f64,
    pub ratio: f64,
}

/// `|λ_min / λ_max|` of the weight Hessian at every cell of a 2D plane.
#[derive(Clone, Debug, PartialEq)]
pub struct EigRatioMap {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub cells: Vec<EigCell>,
    /// Cells whose Ritz residuals missed the tolerance.
    pub unconverged: Vec<usize>,
    pub meta: Metadata,
}

impl EigRatioMap {
    pub fn at(&self, i: usize, j: usize) -> &EigCell {
        &self.cells[i * self.y.steps + j]
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.ratio).collect()
    }

    /// Errors unless `grid` samples the same plane coordinates.
    pub fn check_alignment(&self, grid: &LossGrid) -> Result<()> {
        if grid.x != self.x || grid.y != Some(self.y) {
            return Err(Error::Invalid(format!(
                "axes mismatch: map {} × {}, grid {} × {}",
                self.x,
                self.y,
                grid.x,
                grid.y.map_or("-".to_string(), |a| a.to_string())
            )));
        }
        for key in ["center_digest", "xseed", "yseed"] {
            if let (Some(a), Some(b)) = (self.meta.get(key), grid.meta.get(key)) {
                if a != b {
                    return Err(Error::Invalid(format!("{key} differs: map {a}, grid {b}")));
                }
            }
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# landscape eigmap v1")?;
        writeln!(out, "# x = {}", self.x)?;
        writeln!(out, "# y = {}", self.y)?;
        for (k, v) in &self.meta.0 {
            writeln!(out, "# {k} = {v}")?;
        }
        let list: Vec<String> = self.unconverged.iter().map(|i| i.to_string()).collect();
        writeln!(out, "# unconverged = {}", list.join(","))?;
        writeln!(out, "alpha,beta,lmin,lmax,ratio")?;
        for (k, c) in self.cells.iter().enumerate() {
            let (i, j) = (k / self.y.steps, k % self.y.steps);
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(self.x.value(i)),
                fmt_f64(self.y.value(j)),
                fmt_f64(c.lmin),
                fmt_f64(c.lmax),
                fmt_f64(c.ratio)
            )?;
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

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let (mut meta, rows) = read_table(input)?;
        let take = |meta: &mut Metadata, k: &str| -> Result<String> {
            let pos = meta.0.iter().position(|(key, _)| key == k).ok_or_else(|| Error::Format(format!("missing `{k}`")))?;
            Ok(meta.0.remove(pos).1)
        };
        let x: AxisSpec = take(&mut meta, "x")?.parse()?;
        let y: AxisSpec = take(&mut meta, "y")?.parse()?;
        let unconverged = crate::surface::parse_index_list(&take(&mut meta, "unconverged")?)?;
        if rows.len() != x.steps * y.steps || rows.iter().any(|r| r.len() != 5) {
            return Err(Error::Format(format!("expected {} rows of 5 columns", x.steps * y.steps)));
        }
        let cells = rows.iter().map(|r| EigCell { lmin: r[2], lmax: r[3], ratio: r[4] }).collect();
        Ok(EigRatioMap { x, y, cells, unconverged, meta })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Extremal weight-Hessian eigenvalues at `θ* + αδ + βη` for every cell.
///
/// Each cell runs its own Lanczos with the same settings, so results do not
/// depend on evaluation order. With `companion`, the map's axes and
/// directions must match that grid.
#[allow(clippy::too_many_arguments)]
pub fn ratio_map(
    obj: &dyn Objective,
    center: &ParamVector,
    delta: &Direction,
    eta: &Direction,
    x: AxisSpec,
    y: AxisSpec,
    settings: &LanczosSettings,
    companion: Option<&LossGrid>,
    exec: Execution,
) -> Result<EigRatioMap> {
    for d in [delta, eta] {
        if d.len() != center.len() {
            return Err(Error::Dimension { expected: center.len(), got: d.len() });
        }
    }
    obj.check(&center.values)?;
    let idx = center.layout().weight_indices();
    let results = try_map_indexed(x.steps * y.steps, exec, |k| {
        let (a, b) = (x.value(k / y.steps), y.value(k % y.steps));
        let p: Vec<f64> = center
            .values
            .iter()
            .zip(&delta.values)
            .zip(&eta.values)
            .map(|((&c, &d), &e)| c + a * d + b * e)
            .collect();
        RestrictedHessian::new(obj, p, idx.clone())?.extremes(settings)
    })?;
    let mut meta = Metadata::default();
    meta.set("kind", "eigmap");
    meta.set("model_spec_hash", obj.spec_hash());
    meta.set("center_digest", center.digest());
    meta.set("hessian", "weights");
    for (p, d) in [("x", delta), ("y", eta)] {
        meta.set(&format!("{p}seed"), d.seed);
        meta.set(&format!("{p}norm"), d.scheme);
        meta.set(&format!("{p}ignore"), d.ignore);
    }
    settings.describe(&mut meta);
    let unconverged = results
        .iter()
        .enumerate()
        .filter_map(|(k, e)| (!e.converged(settings.tol)).then_some(k))
        .collect();
    let cells = results.iter().map(|e| EigCell { lmin: e.lambda_min, lmax: e.lambda_max, ratio: e.ratio() }).collect();
    let map = EigRatioMap { x, y, cells, unconverged, meta };
    if let Some(grid) = companion {
        map.check_alignment(grid)?;
    }
    Ok(map)
}
