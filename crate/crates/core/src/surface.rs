//! Loss-surface sampling: interpolation between two minimizers, rays along one
//! direction, and planes spanned by two directions around a center point.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::directions::{DirType, Direction, RNG_ID};
use crate::error::{Error, Result};
use crate::model::{EntryKind, ParamVector};
use crate::objective::{CellValue, Objective};
use crate::par::{try_map_indexed, Execution};

/// Stored in place of non-finite or overflowing losses; such cells are listed
/// in the grid's overflow set.
pub const OVERFLOW_SENTINEL: f64 = 1e300;

/// Uniformly spaced, endpoint-inclusive axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, steps: usize) -> Result<Self> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Invalid(format!("axis needs finite min < max, got {min}:{max}")));
        }
        if steps < 2 {
            return Err(Error::Invalid(format!("axis needs at least 2 steps, got {steps}")));
        }
        Ok(AxisSpec { min, max, steps })
    }

    /// `[-1, 1]` with 401 points.
    pub fn default_1d() -> Self {
        AxisSpec { min: -1.0, max: 1.0, steps: 401 }
    }

    /// `[-1, 1]` with 51 points per axis.
    pub fn default_2d() -> Self {
        AxisSpec { min: -1.0, max: 1.0, steps: 51 }
    }

    /// Point `i`. Symmetric axes yield exactly negated mirror points, and any
    /// point that is an exact dyadic fraction of the span (such as 0 on `[-1, 1]`)
    /// comes out exact.
    pub fn value(&self, i: usize) -> f64 {
        let last = self.steps - 1;
        if i == 0 {
            return self.min;
        }
        if i == last {
            return self.max;
        }
        (self.min * (last - i) as f64 + self.max * i as f64) / last as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.value(i)).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.steps - 1) as f64
    }

    /// Index of the point closest to 0.
    pub fn nearest_zero(&self) -> usize {
        (0..self.steps)
            .min_by(|&a, &b| self.value(a).abs().total_cmp(&self.value(b).abs()))
            .unwrap_or(0)
    }
}

impl fmt::Display for AxisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.steps)
    }
}

impl FromStr for AxisSpec {
    type Err = Error;
    /// `min:max:steps`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Invalid(format!("axis `{s}` is not min:max:steps"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let min = parts[0].trim().parse().map_err(|_| bad())?;
        let max = parts[1].trim().parse().map_err(|_| bad())?;
        let steps = parts[2].trim().parse().map_err(|_| bad())?;
        AxisSpec::new(min, max, steps)
    }
}

/// Ordered key/value provenance attached to output files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.0.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// 1D or 2D array of loss/error samples.
///
/// Cells are stored with the first axis outermost: cell `(i, j)` is at
/// `i * y.steps + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrid {
    pub x: AxisSpec,
    pub y: Option<AxisSpec>,
    pub cells: Vec<CellValue>,
    /// Indices of cells whose loss was replaced by [`OVERFLOW_SENTINEL`].
    pub overflow: Vec<usize>,
    pub meta: Metadata,
}

fn cap(v: f64) -> (f64, bool) {
    if !v.is_finite() || v > OVERFLOW_SENTINEL {
        (OVERFLOW_SENTINEL, true)
    } else {
        (v, false)
    }
}

impl LossGrid {
    fn from_cells(x: AxisSpec, y: Option<AxisSpec>, raw: Vec<CellValue>, meta: Metadata) -> Self {
        let mut overflow = Vec::new();
        let cells = raw
            .into_iter()
            .enumerate()
            .map(|(i, mut c)| {
                let (tl, a) = cap(c.train_loss);
                c.train_loss = tl;
                let mut flagged = a;
                // NaN test loss means "no test split"
                if !c.test_loss.is_nan() {
                    let (sl, b) = cap(c.test_loss);
                    c.test_loss = sl;
                    flagged |= b;
                }
                if flagged {
                    overflow.push(i);
                }
                c
            })
            .collect();
        LossGrid { x, y, cells, overflow, meta }
    }

    pub fn is_2d(&self) -> bool {
        self.y.is_some()
    }

    pub fn ny(&self) -> usize {
        self.y.map_or(1, |a| a.steps)
    }

    pub fn at(&self, i: usize, j: usize) -> &CellValue {
        &self.cells[i * self.ny() + j]
    }

    /// Coordinates of cell index `k`.
    pub fn coords(&self, k: usize) -> (f64, Option<f64>) {
        let ny = self.ny();
        (self.x.value(k / ny), self.y.map(|a| a.value(k % ny)))
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.train_loss).collect()
    }

    /// Cell nearest the origin.
    pub fn center_index(&self) -> usize {
        self.x.nearest_zero() * self.ny() + self.y.map_or(0, |a| a.nearest_zero())
    }

    /// Writes the self-describing text header and CSV body.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        let kind = if self.is_2d() { "grid2d" } else { "grid1d" };
        writeln!(out, "# landscape {kind} v1")?;
        writeln!(out, "# x = {}", self.x)?;
        if let Some(y) = self.y {
            writeln!(out, "# y = {y}")?;
        }
        for (k, v) in &self.meta.0 {
            writeln!(out, "# {k} = {v}")?;
        }
        let flagged: Vec<String> = self.overflow.iter().map(usize::to_string).collect();
        writeln!(out, "# overflow = {}", flagged.join(","))?;
        if self.is_2d() {
            writeln!(out, "alpha,beta,train_loss,train_err,test_loss,test_err")?;
        } else {
            writeln!(out, "alpha,train_loss,train_err,test_loss,test_err")?;
        }
        for (k, c) in self.cells.iter().enumerate() {
            let (a, b) = self.coords(k);
            let mut fields = vec![fmt_f64(a)];
            if let Some(b) = b {
                fields.push(fmt_f64(b));
            }
            fields.extend([c.train_loss, c.train_err, c.test_loss, c.test_err].map(fmt_f64));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let (header, rows) = read_table(input)?;
        let x: AxisSpec = header.get("x").ok_or_else(|| Error::Format("grid file has no x axis".into()))?.parse()?;
        let y: Option<AxisSpec> = header.get("y").map(str::parse).transpose()?;
        let offset = if y.is_some() { 2 } else { 1 };
        let mut cells = Vec::with_capacity(rows.len());
        for r in &rows {
            if r.len() != offset + 4 {
                return Err(Error::Format(format!("grid row has {} fields, expected {}", r.len(), offset + 4)));
            }
            cells.push(CellValue { train_loss: r[offset], train_err: r[offset + 1], test_loss: r[offset + 2], test_err: r[offset + 3] });
        }
        if cells.len() != x.steps * y.map_or(1, |a| a.steps) {
            return Err(Error::Format(format!("grid has {} rows for axes {x} / {y:?}", cells.len())));
        }
        let overflow = parse_index_list(header.get("overflow").unwrap_or(""))?;
        let meta = Metadata(
            header.0.into_iter().filter(|(k, _)| !matches!(k.as_str(), "x" | "y" | "overflow")).collect(),
        );
        Ok(LossGrid { x, y, cells, overflow, meta })
    }
}

pub(crate) fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| Error::Format(format!("bad index `{p}`"))))
        .collect()
}

/// 17 significant digits; round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Reads `# key = value` header lines and numeric CSV rows (first non-comment
/// line is the column header).
pub(crate) fn read_table(input: impl BufRead) -> Result<(Metadata, Vec<Vec<f64>>)> {
    let mut meta = Metadata::default();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for line in input.lines() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.0.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if !seen_columns {
            seen_columns = true;
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((meta, rows))
}

fn axpy_point(center: &[f64], terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut p = center.to_vec();
    for &(a, d) in terms {
        if a == 0.0 {
            continue;
        }
        for (v, &di) in p.iter_mut().zip(d) {
            *v += a * di;
        }
    }
    p
}

fn check_dir(center: &ParamVector, d: &Direction) -> Result<()> {
    if d.len() != center.len() {
        return Err(Error::Dimension { expected: center.len(), got: d.len() });
    }
    Ok(())
}

fn base_meta(obj: &dyn Objective, center: &ParamVector, kind: &str) -> Metadata {
    let mut m = Metadata::default();
    m.set("kind", kind);
    m.set("model_spec_hash", obj.spec_hash());
    m.set("center_digest", center.digest());
    m.set("rng", RNG_ID);
    m.set("split", "train,test");
    m
}

fn describe_direction(m: &mut Metadata, prefix: &str, d: &Direction) {
    m.set(&format!("{prefix}seed"), d.seed);
    m.set(&format!("{prefix}norm"), d.scheme);
    m.set(&format!("{prefix}ignore"), d.ignore);
}

/// `f(α) = L((1 − α)·θa + α·θb)`. With `DirType::Weights` the batch-norm running
/// statistics stay at `θa`'s values; `States` interpolates them too.
/// The cells at α = 0 and α = 1 evaluate `θa` and `θb` exactly.
pub fn interpolate_1d(
    obj: &dyn Objective,
    a: &ParamVector,
    b: &ParamVector,
    axis: AxisSpec,
    dir_type: DirType,
    exec: Execution,
) -> Result<LossGrid> {
    if a.layout().spec_hash != b.layout().spec_hash || a.layout() != b.layout() {
        return Err(Error::SpecHashMismatch(a.layout().spec_hash.clone(), b.layout().spec_hash.clone()));
    }
    obj.check(&a.values)?;
    let stat = a.layout().mask(|k| k == EntryKind::BnRunningStat);
    let cells = try_map_indexed(axis.steps, exec, |i| {
        let t = axis.value(i);
        let p = if t == 0.0 {
            a.values.clone()
        } else if t == 1.0 && dir_type == DirType::States {
            b.values.clone()
        } else {
            a.values
                .iter()
                .zip(&b.values)
                .zip(&stat)
                .map(|((&u, &v), &is_stat)| {
                    if (is_stat && dir_type == DirType::Weights) || u == v {
                        u
                    } else if t == 1.0 {
                        v
                    } else {
                        (1.0 - t) * u + t * v
                    }
                })
                .collect()
        };
        obj.evaluate(&p)
    })?;
    let mut meta = base_meta(obj, a, "interp1d");
    meta.set("end_digest", b.digest());
    meta.set("dir_type", dir_type);
    Ok(LossGrid::from_cells(axis, None, cells, meta))
}

/// `f(α) = L(θ* + α·δ)`.
pub fn ray_1d(obj: &dyn Objective, center: &ParamVector, d: &Direction, axis: AxisSpec, exec: Execution) -> Result<LossGrid> {
    check_dir(center, d)?;
    obj.check(&center.values)?;
    let cells = try_map_indexed(axis.steps, exec, |i| {
        let p = axpy_point(&center.values, &[(axis.value(i), &d.values)]);
        obj.evaluate(&p)
    })?;
    let mut meta = base_meta(obj, center, "ray1d");
    describe_direction(&mut meta, "x", d);
    Ok(LossGrid::from_cells(axis, None, cells, meta))
}

/// `f(α, β) = L(θ* + α·δ + β·η)`.
pub fn grid_2d(
    obj: &dyn Objective,
    center: &ParamVector,
    delta: &Direction,
    eta: &Direction,
    x: AxisSpec,
    y: AxisSpec,
    exec: Execution,
) -> Result<LossGrid> {
    check_dir(center, delta)?;
    check_dir(center, eta)?;
    obj.check(&center.values)?;
    if delta.seed == eta.seed && (delta.norm() > 0.0 || eta.norm() > 0.0) {
        return Err(Error::Invalid(format!(
            "both directions use seed {}; the plane is degenerate",
            delta.seed
        )));
    }
    let cells = try_map_indexed(x.steps * y.steps, exec, |k| {
        let (i, j) = (k / y.steps, k % y.steps);
        let p = axpy_point(&center.values, &[(x.value(i), &delta.values), (y.value(j), &eta.values)]);
        obj.evaluate(&p)
    })?;
    let mut meta = base_meta(obj, center, "grid2d");
    describe_direction(&mut meta, "x", delta);
    describe_direction(&mut meta, "y", eta);
    Ok(LossGrid::from_cells(x, Some(y), cells, meta))
}

/// One ray per seed, each along a freshly sampled and normalized direction.
pub fn repeat_study(
    obj: &dyn Objective,
    center: &ParamVector,
    seeds: &[u64],
    scheme: crate::directions::Scheme,
    ignore: crate::directions::IgnorePolicy,
    axis: AxisSpec,
    exec: Execution,
) -> Result<Vec<LossGrid>> {
    if seeds.len() < 2 {
        return Err(Error::Invalid(format!("repeat study needs at least 2 seeds, got {}", seeds.len())));
    }
    let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
    try_map_indexed(seeds.len(), exec, |s| {
        let d = crate::directions::random_direction(center, seeds[s], scheme, ignore);
        let mut g = ray_1d(obj, center, &d, axis, inner)?;
        g.meta.set("kind", "repeat");
        Ok(g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::{IgnorePolicy, Scheme};
    use crate::model::{LayerKind, LayerLayout, Layout, Region};
    use crate::objective::Quadratic;
    use std::sync::Arc;

    fn flat(n: usize) -> Arc<Layout> {
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

    fn pv(v: Vec<f64>) -> ParamVector {
        let n = v.len();
        ParamVector::new(v, flat(n)).unwrap()
    }

    fn dir(v: Vec<f64>, seed: u64) -> Direction {
        let n = v.len();
        Direction::new(v, flat(n), Scheme::None, IgnorePolicy::BiasBn, seed).unwrap()
    }

    #[test]
    fn axis_parsing_and_validation() {
        let a: AxisSpec = "-1:1:51".parse().unwrap();
        assert_eq!(a, AxisSpec { min: -1.0, max: 1.0, steps: 51 });
        assert!("1:-1:51".parse::<AxisSpec>().is_err());
        assert!("-1:1:1".parse::<AxisSpec>().is_err());
        assert!("-1:1".parse::<AxisSpec>().is_err());
        assert_eq!(a.to_string(), "-1:1:51");
    }

    #[test]
    fn axis_points_are_symmetric_and_hit_zero() {
        let a = AxisSpec::default_1d();
        for i in 0..a.steps {
            assert_eq!(a.value(i), -a.value(a.steps - 1 - i));
        }
        assert_eq!(a.value(200), 0.0);
        let b = AxisSpec::new(-0.5, 1.5, 401).unwrap();
        assert_eq!(b.value(100), 0.0);
        assert_eq!(b.value(300), 1.0);
    }

    #[test]
    fn interpolating_a_point_with_itself_is_constant() {
        let q = Quadratic::identity(3);
        let a = pv(vec![0.5, -1.0, 2.0]);
        let g = interpolate_1d(&q, &a, &a, AxisSpec::new(-0.5, 1.5, 21).unwrap(), DirType::Weights, Execution::Sequential).unwrap();
        assert!(g.cells.iter().all(|c| c.train_loss == g.cells[0].train_loss));
    }

    #[test]
    fn scalar_interpolation_midpoint() {
        // L(w) = w² = ½·2·w²
        let q = Quadratic::diagonal(&[2.0]);
        let g = interpolate_1d(&q, &pv(vec![0.0]), &pv(vec![2.0]), AxisSpec::new(0.0, 1.0, 3).unwrap(), DirType::Weights, Execution::Sequential)
            .unwrap();
        assert_eq!(g.cells[1].train_loss, 1.0);
        assert_eq!(g.cells[2].train_loss, 4.0);
    }

    #[test]
    fn interpolation_rejects_different_models() {
        let q = Quadratic::identity(2);
        let a = pv(vec![0.0, 1.0]);
        let mut other = (*flat(2)).clone();
        other.spec_hash = "abc".into();
        let b = ParamVector::new(vec![1.0, 1.0], Arc::new(other)).unwrap();
        let r = interpolate_1d(&q, &a, &b, AxisSpec::default_1d(), DirType::Weights, Execution::Sequential);
        assert!(matches!(r, Err(Error::SpecHashMismatch(..))));
    }

    #[test]
    fn ray_along_unit_vector_of_half_norm() {
        let q = Quadratic::identity(2);
        let g = ray_1d(&q, &pv(vec![0.0, 0.0]), &dir(vec![0.6, 0.8], 1), AxisSpec::new(-1.0, 1.0, 11).unwrap(), Execution::Sequential).unwrap();
        for (k, c) in g.cells.iter().enumerate() {
            let a = g.x.value(k);
            assert!((c.train_loss - a * a / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_direction_gives_constant_ray_and_grid() {
        let q = Quadratic::identity(2);
        let c = pv(vec![0.3, 0.4]);
        let z = dir(vec![0.0, 0.0], 0);
        let g = ray_1d(&q, &c, &z, AxisSpec::default_1d(), Execution::Sequential).unwrap();
        assert!(g.cells.iter().all(|v| v.train_loss == 0.125));
        let g = grid_2d(&q, &c, &z, &z, AxisSpec::new(-1.0, 1.0, 5).unwrap(), AxisSpec::new(-1.0, 1.0, 5).unwrap(), Execution::Sequential)
            .unwrap();
        assert!(g.cells.iter().all(|v| v.train_loss == 0.125));
    }

    #[test]
    fn negated_direction_mirrors_ray() {
        let q = Quadratic::new(vec![2.0, 0.5, 0.5, 1.0], vec![0.1, -0.3]).unwrap();
        let c = pv(vec![0.7, 0.2]);
        let d = dir(vec![0.3, -1.1], 4);
        let ax = AxisSpec::default_1d();
        let f = ray_1d(&q, &c, &d, ax, Execution::Sequential).unwrap();
        let g = ray_1d(&q, &c, &d.negated(), ax, Execution::Sequential).unwrap();
        for i in 0..ax.steps {
            assert_eq!(f.cells[i].train_loss, g.cells[ax.steps - 1 - i].train_loss);
        }
    }

    #[test]
    fn plane_of_half_norm_is_paraboloid() {
        let q = Quadratic::identity(3);
        let c = pv(vec![0.0; 3]);
        let g = grid_2d(&q, &c, &dir(vec![1.0, 0.0, 0.0], 1), &dir(vec![0.0, 0.0, 1.0], 2), AxisSpec::default_2d(), AxisSpec::default_2d(), Execution::Parallel)
            .unwrap();
        for k in 0..g.cells.len() {
            let (a, b) = g.coords(k);
            let b = b.unwrap();
            assert!((g.cells[k].train_loss - (a * a + b * b) / 2.0).abs() < 1e-15);
        }
        assert_eq!(g.cells[g.center_index()].train_loss, 0.0);
    }

    #[test]
    fn identical_seeds_are_rejected() {
        let q = Quadratic::identity(2);
        let c = pv(vec![0.0; 2]);
        let d = dir(vec![1.0, 0.0], 3);
        let r = grid_2d(&q, &c, &d, &d, AxisSpec::default_2d(), AxisSpec::default_2d(), Execution::Sequential);
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn repeat_needs_two_seeds_and_is_seed_determined() {
        let q = Quadratic::identity(4);
        let c = pv(vec![1.0, 2.0, 3.0, 4.0]);
        let ax = AxisSpec::new(-1.0, 1.0, 9).unwrap();
        assert!(repeat_study(&q, &c, &[1], Scheme::Filter, IgnorePolicy::BiasBn, ax, Execution::Sequential).is_err());
        let g = repeat_study(&q, &c, &[5, 5], Scheme::Filter, IgnorePolicy::BiasBn, ax, Execution::Parallel).unwrap();
        assert_eq!(g[0].to_csv_string(), g[1].to_csv_string());
    }

    #[test]
    fn non_finite_losses_are_capped_and_flagged() {
        let raw = vec![
            CellValue { train_loss: 1.0, train_err: 0.0, test_loss: f64::NAN, test_err: f64::NAN },
            CellValue { train_loss: f64::INFINITY, train_err: 0.5, test_loss: f64::NAN, test_err: f64::NAN },
            CellValue { train_loss: f64::NAN, train_err: 0.5, test_loss: 2.0, test_err: 0.1 },
        ];
        let g = LossGrid::from_cells(AxisSpec::new(0.0, 1.0, 3).unwrap(), None, raw, Metadata::default());
        assert_eq!(g.overflow, vec![1, 2]);
        assert_eq!(g.cells[1].train_loss, OVERFLOW_SENTINEL);
        assert!(g.cells[0].test_loss.is_nan());
    }

    #[test]
    fn grid_file_round_trips_bitwise() {
        let q = Quadratic::new(vec![2.0, 0.3, 0.3, 1.0], vec![0.1, -0.3]).unwrap();
        let c = pv(vec![0.7, 0.2]);
        let g = grid_2d(&q, &c, &dir(vec![0.3, -1.1], 1), &dir(vec![0.9, 0.1], 2), AxisSpec::new(-1.0, 1.0, 7).unwrap(), AxisSpec::new(-2.0, 2.0, 5).unwrap(), Execution::Sequential)
            .unwrap();
        let text = g.to_csv_string();
        assert!(text.contains("alpha,beta,train_loss,train_err,test_loss,test_err"));
        let back = LossGrid::read_from(text.as_bytes()).unwrap();
        assert_eq!(back.cells.len(), g.cells.len());
        for (a, b) in back.cells.iter().zip(&g.cells) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
        assert_eq!(back.meta.get("xseed"), Some("1"));
        assert_eq!(back.to_csv_string(), text);
    }
}
