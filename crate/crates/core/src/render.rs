//! Isoline extraction, flatness widths and static SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::surface::{AxisSpec, LossGrid, OVERFLOW_SENTINEL};
use crate::train::Histogram;
use crate::trajectory::ProjectionTable;

pub const DEFAULT_LEVEL_COUNT: usize = 12;
pub const DEFAULT_LEVEL_CAP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Line1d,
    Contour2d,
    Heat2d,
    TrajectoryOverlay,
    Histogram,
    NormCurve,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "line-1d" => PlotKind::Line1d,
            "contour-2d" => PlotKind::Contour2d,
            "heat-2d" => PlotKind::Heat2d,
            "trajectory-overlay" => PlotKind::TrajectoryOverlay,
            "histogram" => PlotKind::Histogram,
            "norm-curve" => PlotKind::NormCurve,
            _ => return Err(Error::Invalid(format!("unknown plot kind `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Linear,
    Log,
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Transform::Linear),
            "log" => Ok(Transform::Log),
            _ => Err(Error::Invalid(format!("unknown transform `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Levels {
    /// Log-spaced from the data minimum up to `cap`.
    Count { count: usize, cap: f64 },
    List(Vec<f64>),
}

impl Default for Levels {
    fn default() -> Self {
        Levels::Count { count: DEFAULT_LEVEL_COUNT, cap: DEFAULT_LEVEL_CAP }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSpec {
    pub kind: PlotKind,
    pub levels: Levels,
    pub transform: Transform,
    pub output: Option<PathBuf>,
}

impl RenderSpec {
    pub fn new(kind: PlotKind) -> Self {
        RenderSpec { kind, levels: Levels::default(), transform: Transform::Linear, output: None }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.levels {
            Levels::List(l) if l.is_empty() || !l.windows(2).all(|w| w[0] < w[1]) => {
                Err(Error::Invalid(format!("contour levels must be strictly increasing, got {l:?}")))
            }
            Levels::List(l) if self.transform == Transform::Log && l.iter().any(|&v| v <= 0.0) => {
                Err(Error::Invalid("log transform needs positive levels".into()))
            }
            Levels::Count { count, cap } if *count == 0 || !(*cap > 0.0) => {
                Err(Error::Invalid(format!("level count {count} / cap {cap} invalid")))
            }
            _ => Ok(()),
        }
    }

    /// Concrete levels for data whose smallest finite value is `min`.
    pub fn resolve_levels(&self, min: f64) -> Vec<f64> {
        match &self.levels {
            Levels::List(l) => l.clone(),
            Levels::Count { count, cap } => default_levels(min, *cap, *count),
        }
    }
}

/// `count` levels geometrically spaced above `min` up to and including `cap`.
/// Non-positive minima start at `cap·1e-4`; empty when `min ≥ cap`.
pub fn default_levels(min: f64, cap: f64, count: usize) -> Vec<f64> {
    if !(min < cap) || count == 0 {
        return Vec::new();
    }
    let lo = if min > 0.0 { min } else { cap * 1e-4 };
    let r = (cap / lo).ln();
    (1..=count).map(|k| if k == count { cap } else { lo * (r * k as f64 / count as f64).exp() }).collect()
}

/// Length of the maximal interval around α = 0 on which the 1D profile stays
/// below `level`, with linear interpolation at the two crossings.
pub fn width_at_level(grid: &LossGrid, level: f64) -> Result<f64> {
    if grid.is_2d() {
        return Err(Error::Invalid("width_at_level needs a 1D grid".into()));
    }
    let f = grid.train_losses();
    let xs = grid.x.points();
    let c = grid.x.nearest_zero();
    if f[c] >= level {
        return Err(Error::CenterAboveLevel { center: f[c], level });
    }
    let crossing = |a: usize, b: usize| xs[a] + (level - f[a]) / (f[b] - f[a]) * (xs[b] - xs[a]);
    let hi = (c..f.len() - 1).find(|&i| f[i + 1] >= level).map_or(xs[xs.len() - 1], |i| crossing(i, i + 1));
    let lo = (1..=c).rev().find(|&i| f[i - 1] >= level).map_or(xs[0], |i| crossing(i, i - 1));
    Ok(hi - lo)
}

/// Point on a grid edge: `H(i, j)` joins nodes (i, j)–(i+1, j), `V(i, j)` joins (i, j)–(i, j+1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeId {
    H(usize, usize),
    V(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
}

/// Scalar field sampled on the nodes of a rectilinear grid; `values[i * ny + j]`
/// sits at `(xs[i], ys[j])`.
pub struct Field<'a> {
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub values: &'a [f64],
}

impl Field<'_> {
    fn v(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ys.len() + j]
    }

    fn edge_point(&self, e: EdgeId, level: f64) -> (f64, f64) {
        let (a, b, pa, pb) = match e {
            EdgeId::H(i, j) => (self.v(i, j), self.v(i + 1, j), (self.xs[i], self.ys[j]), (self.xs[i + 1], self.ys[j])),
            EdgeId::V(i, j) => (self.v(i, j), self.v(i, j + 1), (self.xs[i], self.ys[j]), (self.xs[i], self.ys[j + 1])),
        };
        let t = ((level - a) / (b - a)).clamp(0.0, 1.0);
        (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
    }

    /// Marching-squares segments at `level`, as pairs of crossed edges.
    /// Saddle cells are split according to the mean of their four corners.
    pub fn segments(&self, level: f64) -> Vec<(EdgeId, EdgeId)> {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let mut out = Vec::new();
        for i in 0..nx.saturating_sub(1) {
            for j in 0..ny.saturating_sub(1) {
                let c = [self.v(i, j), self.v(i + 1, j), self.v(i + 1, j + 1), self.v(i, j + 1)];
                let inside = c.map(|v| v < level);
                let case = inside.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (u8::from(b) << k));
                // edges: bottom, right, top, left
                let bottom = EdgeId::H(i, j);
                let right = EdgeId::V(i + 1, j);
                let top = EdgeId::H(i, j + 1);
                let left = EdgeId::V(i, j);
                match case {
                    0 | 15 => {}
                    5 | 10 => {
                        let center_inside = (c[0] + c[1] + c[2] + c[3]) / 4.0 < level;
                        // corners 0 and 2 share a status in case 5, corners 1 and 3 in case 10
                        let cut_02 = (case == 5) != center_inside;
                        if cut_02 {
                            out.push((left, bottom));
                            out.push((right, top));
                        } else {
                            out.push((bottom, right));
                            out.push((top, left));
                        }
                    }
                    _ => {
                        let crossed: Vec<EdgeId> = [(0, 1, bottom), (1, 2, right), (3, 2, top), (0, 3, left)]
                            .into_iter()
                            .filter(|&(a, b, _)| inside[a] != inside[b])
                            .map(|(_, _, e)| e)
                            .collect();
                        out.push((crossed[0], crossed[1]));
                    }
                }
            }
        }
        out
    }

    /// Segments at `level` joined into polylines.
    pub fn isolines(&self, level: f64) -> Vec<Polyline> {
        let segs = self.segments(level);
        let mut adj: BTreeMap<EdgeId, Vec<usize>> = BTreeMap::new();
        for (k, &(a, b)) in segs.iter().enumerate() {
            adj.entry(a).or_default().push(k);
            adj.entry(b).or_default().push(k);
        }
        let mut used = vec![false; segs.len()];
        let mut lines = Vec::new();
        let other = |k: usize, e: EdgeId| if segs[k].0 == e { segs[k].1 } else { segs[k].0 };
        let next_from = |e: EdgeId, used: &[bool]| adj[&e].iter().copied().find(|&k| !used[k]);
        // open chains start at edges touched once
        let starts: Vec<EdgeId> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(&e, _)| e).collect();
        let seeds = starts.into_iter().chain(segs.iter().map(|s| s.0)).collect::<Vec<_>>();
        for start in seeds {
            let Some(mut k) = next_from(start, &used) else { continue };
            let mut chain = vec![start];
            let mut at = start;
            loop {
                used[k] = true;
                at = other(k, at);
                chain.push(at);
                match next_from(at, &used) {
                    Some(n) => k = n,
                    None => break,
                }
            }
            let closed = chain.len() > 2 && chain.first() == chain.last();
            lines.push(Polyline { points: chain.iter().map(|&e| self.edge_point(e, level)).collect(), closed });
        }
        lines
    }
}

const W: f64 = 480.0;
const H: f64 = 480.0;
const M: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * W
    }

    fn py(&self, y: f64) -> f64 {
        M + H - (y - self.y0) / (self.y1 - self.y0) * H
    }

    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if a < b { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }
}

fn svg_open(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        w = W + 2.0 * M,
        h = H + 2.0 * M,
        tx = M + W / 2.0,
        title = escape(title)
    );
}

fn svg_axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(s, r#"<rect x="{M}" y="{M}" width="{W}" height="{H}" fill="none" stroke="black"/>"#);
    for (v, anchor) in [(f.x0, "start"), (f.x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            f.px(v),
            M + H + 16.0,
            num(v)
        );
    }
    for v in [f.y0, f.y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            M - 4.0,
            f.py(v) + 4.0,
            num(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        M + W / 2.0,
        M + H + 40.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.3}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.3})">{}</text>"#,
        M + H / 2.0,
        M + H / 2.0,
        escape(ylabel)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn points_attr(f: &Frame, pts: &[(f64, f64)]) -> String {
    pts.iter().map(|&(x, y)| format!("{:.3},{:.3}", f.px(x), f.py(y))).collect::<Vec<_>>().join(" ")
}

fn transform_values(values: &[f64], t: Transform) -> Result<Vec<f64>> {
    match t {
        Transform::Linear => Ok(values.to_vec()),
        Transform::Log => values
            .iter()
            .map(|&v| {
                if v >= OVERFLOW_SENTINEL {
                    Ok(OVERFLOW_SENTINEL.ln())
                } else if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Invalid(format!("log transform needs positive values, got {v}")))
                }
            })
            .collect(),
    }
}

fn finite_min(values: &[f64]) -> f64 {
    values.iter().copied().filter(|v| v.is_finite() && *v < OVERFLOW_SENTINEL).fold(f64::INFINITY, f64::min)
}

fn palette(t: f64) -> String {
    // dark blue to yellow
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(STOPS.len() - 2);
    let u = pos - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let c = |p: f64, q: f64| (p + u * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

fn require_2d(grid: &LossGrid) -> Result<AxisSpec> {
    grid.y.ok_or_else(|| Error::Invalid("plot needs a 2D grid".into()))
}

fn contour_body(s: &mut String, frame: &Frame, grid: &LossGrid, spec: &RenderSpec) -> Result<usize> {
    spec.validate()?;
    let y = require_2d(grid)?;
    let raw = grid.train_losses();
    let values = transform_values(&raw, spec.transform)?;
    let levels = spec.resolve_levels(finite_min(&raw));
    let (xs, ys) = (grid.x.points(), y.points());
    let field = Field { xs: &xs, ys: &ys, values: &values };
    let mut drawn = 0;
    for (n, &level) in levels.iter().enumerate() {
        let l = match spec.transform {
            Transform::Linear => level,
            Transform::Log => level.ln(),
        };
        let lines = field.isolines(l);
        if lines.is_empty() {
            continue;
        }
        drawn += 1;
        let color = palette(n as f64 / levels.len().max(2).saturating_sub(1) as f64);
        for line in &lines {
            let tag = if line.closed { "polygon" } else { "polyline" };
            let _ = writeln!(s, r#"<{tag} points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#, points_attr(frame, &line.points));
        }
        let longest = lines.iter().max_by_key(|l| l.points.len()).expect("non-empty");
        let (lx, ly) = longest.points[longest.points.len() / 2];
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="9" fill="{color}">{}</text>"#,
            frame.px(lx),
            frame.py(ly),
            num(level)
        );
    }
    if drawn == 0 {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="14" text-anchor="middle" fill="red">no contour level intersects the data</text>"#,
            M + W / 2.0,
            M + H / 2.0
        );
    }
    Ok(drawn)
}

/// Isolines of the training loss of a 2D grid. When no level meets the data
/// the document carries a warning instead of contours.
pub fn contour_svg(grid: &LossGrid, spec: &RenderSpec) -> Result<String> {
    let y = require_2d(grid)?;
    let frame = Frame::new(grid.x.min, grid.x.max, y.min, y.max);
    let mut s = String::new();
    svg_open(&mut s, "training loss contours");
    contour_body(&mut s, &frame, grid, spec)?;
    svg_axes(&mut s, &frame, "alpha", "beta");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Contours of `grid` with the optimizer path overlaid; learning-rate drops
/// are marked red.
pub fn trajectory_overlay_svg(grid: &LossGrid, path: &ProjectionTable, spec: &RenderSpec) -> Result<String> {
    let y = require_2d(grid)?;
    let frame = Frame::new(grid.x.min, grid.x.max, y.min, y.max);
    let mut s = String::new();
    svg_open(&mut s, &format!("trajectory ({}% / {}% variance)", num(100.0 * path.variance[0]), num(100.0 * path.variance[1])));
    contour_body(&mut s, &frame, grid, spec)?;
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, points_attr(&frame, &path.coords));
    for (e, &(u, v)) in path.epochs.iter().zip(&path.coords) {
        let (fill, r) = if path.lr_drops.contains(e) { ("red", 4.0) } else { ("black", 2.0) };
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="{r}" fill="{fill}"/>"#, frame.px(u), frame.py(v));
    }
    svg_axes(&mut s, &frame, "1st PCA component", "2nd PCA component");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Filled cells colored by value; used for loss grids and ratio maps.
pub fn heat_svg(x: &AxisSpec, y: &AxisSpec, values: &[f64], title: &str, spec: &RenderSpec) -> Result<String> {
    if values.len() != x.steps * y.steps {
        return Err(Error::Dimension { expected: x.steps * y.steps, got: values.len() });
    }
    let t = transform_values(values, spec.transform)?;
    let finite: Vec<f64> = t.iter().copied().filter(|v| v.is_finite() && *v < OVERFLOW_SENTINEL.ln().min(OVERFLOW_SENTINEL)).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(x.min, x.max, y.min, y.max);
    let (dx, dy) = (x.spacing().max(1e-300), y.spacing().max(1e-300));
    let mut s = String::new();
    svg_open(&mut s, title);
    for i in 0..x.steps {
        for j in 0..y.steps {
            let v = t[i * y.steps + j];
            let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let (cx, cy) = (x.value(i), y.value(j));
            let (px0, px1) = (frame.px((cx - dx / 2.0).max(x.min)), frame.px((cx + dx / 2.0).min(x.max)));
            let (py0, py1) = (frame.py((cy + dy / 2.0).min(y.max)), frame.py((cy - dy / 2.0).max(y.min)));
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                px0,
                py0,
                px1 - px0,
                py1 - py0,
                palette(u)
            );
        }
    }
    svg_axes(&mut s, &frame, "alpha", "beta");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Training (solid) and, when present, test (dashed) loss along a 1D grid.
pub fn line_svg(grid: &LossGrid, spec: &RenderSpec) -> Result<String> {
    if grid.is_2d() {
        return Err(Error::Invalid("line plot needs a 1D grid".into()));
    }
    let xs = grid.x.points();
    let train = transform_values(&grid.train_losses(), spec.transform)?;
    let test_raw: Vec<f64> = grid.cells.iter().map(|c| c.test_loss).collect();
    let has_test = test_raw.iter().all(|v| !v.is_nan());
    let test = if has_test { transform_values(&test_raw, spec.transform)? } else { Vec::new() };
    let capped = |v: &f64| *v < OVERFLOW_SENTINEL.ln() || spec.transform == Transform::Linear && *v < OVERFLOW_SENTINEL;
    let all: Vec<f64> = train.iter().chain(&test).copied().filter(capped).collect();
    let (lo, hi) = (all.iter().copied().fold(f64::INFINITY, f64::min), all.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let frame = Frame::new(grid.x.min, grid.x.max, lo, hi);
    let mut s = String::new();
    svg_open(&mut s, "loss along the direction");
    for (vals, dash) in [(&train, ""), (&test, r#" stroke-dasharray="6,4""#)] {
        if vals.is_empty() {
            continue;
        }
        let pts: Vec<(f64, f64)> = xs.iter().zip(vals.iter()).filter(|(_, v)| capped(v)).map(|(&x, &v)| (x, v)).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"{dash}/>"#, points_attr(&frame, &pts));
    }
    let ylabel = if spec.transform == Transform::Log { "ln loss" } else { "loss" };
    svg_axes(&mut s, &frame, "alpha", ylabel);
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame::new(h.lo, h.hi, 0.0, top);
    let w = h.bin_width();
    let mut s = String::new();
    svg_open(&mut s, title);
    for (k, &c) in h.counts.iter().enumerate() {
        let x0 = h.lo + k as f64 * w;
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="steelblue" stroke="white" stroke-width="0.5"/>"#,
            frame.px(x0),
            frame.py(c as f64),
            frame.px(x0 + w) - frame.px(x0),
            frame.py(0.0) - frame.py(c as f64)
        );
    }
    svg_axes(&mut s, &frame, "weight value", "count");
    s.push_str("</svg>\n");
    s
}

/// Weight norm against its index (epoch or iteration).
pub fn norm_curve_svg(series: &[f64], xlabel: &str) -> String {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(0.0, series.len().saturating_sub(1) as f64, lo.min(hi), hi.max(lo));
    let pts: Vec<(f64, f64)> = series.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
    let mut s = String::new();
    svg_open(&mut s, "weight norm");
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, points_attr(&frame, &pts));
    svg_axes(&mut s, &frame, xlabel, "||theta||");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::CellValue;
    use crate::surface::Metadata;

    fn grid_of(x: AxisSpec, y: Option<AxisSpec>, f: impl Fn(f64, f64) -> f64) -> LossGrid {
        let ny = y.map_or(1, |a| a.steps);
        let cells = (0..x.steps * ny)
            .map(|k| {
                let (a, b) = (x.value(k / ny), y.map_or(0.0, |ax| ax.value(k % ny)));
                CellValue { train_loss: f(a, b), train_err: 0.0, test_loss: f64::NAN, test_err: f64::NAN }
            })
            .collect();
        LossGrid { x, y, cells, overflow: vec![], meta: Metadata::default() }
    }

    #[test]
    fn width_of_parabola() {
        let g = grid_of(AxisSpec::new(-2.0, 2.0, 401).unwrap(), None, |a, _| a * a);
        assert!((width_at_level(&g, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let flat = grid_of(AxisSpec::new(-1.5, 1.0, 11).unwrap(), None, |_, _| 0.3);
        assert_eq!(width_at_level(&flat, 1.0).unwrap(), 2.5);
        assert!(matches!(width_at_level(&flat, 0.3), Err(Error::CenterAboveLevel { .. })));
    }

    #[test]
    fn circle_contour() {
        let ax = AxisSpec::new(-1.0, 1.0, 51).unwrap();
        let g = grid_of(ax, Some(ax), |a, b| a * a + b * b);
        let xs = ax.points();
        let vals = g.train_losses();
        let field = Field { xs: &xs, ys: &xs, values: &vals };
        let lines = field.isolines(0.25);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].closed);
        let diag = ax.spacing() * 2f64.sqrt();
        for &(x, y) in &lines[0].points {
            assert!(((x * x + y * y).sqrt() - 0.5).abs() < diag);
        }
    }

    #[test]
    fn constant_grid_has_no_segments() {
        let ax = AxisSpec::new(-1.0, 1.0, 5).unwrap();
        let vals = vec![2.0; 25];
        let xs = ax.points();
        assert!(Field { xs: &xs, ys: &xs, values: &vals }.segments(2.0).is_empty());
        assert!(Field { xs: &xs, ys: &xs, values: &vals }.segments(1.0).is_empty());
    }

    #[test]
    fn saddle_uses_center_average() {
        let xs = [0.0, 1.0];
        // corners (0,0)=1, (1,0)=-1, (1,1)=1, (0,1)=-1 in node order i*ny+j
        let low_center = [1.0, -1.0, -1.0, 1.0];
        let segs = Field { xs: &xs, ys: &xs, values: &low_center }.segments(0.5);
        // center mean 0 < 0.5: inside corners (1,0),(0,1) connect; the two high corners are cut off
        assert_eq!(segs, vec![(EdgeId::V(0, 0), EdgeId::H(0, 0)), (EdgeId::V(1, 0), EdgeId::H(0, 1))]);
        let segs = Field { xs: &xs, ys: &xs, values: &low_center }.segments(-0.5);
        assert_eq!(segs, vec![(EdgeId::H(0, 0), EdgeId::V(1, 0)), (EdgeId::H(0, 1), EdgeId::V(0, 0))]);
    }

    #[test]
    fn svg_is_deterministic_and_warns_when_empty() {
        let ax = AxisSpec::new(-1.0, 1.0, 11).unwrap();
        let g = grid_of(ax, Some(ax), |a, b| a * a + b * b + 0.1);
        let spec = RenderSpec::new(PlotKind::Contour2d);
        let a = contour_svg(&g, &spec).unwrap();
        assert_eq!(a, contour_svg(&g, &spec).unwrap());
        assert!(a.contains("<polygon"));
        let high = grid_of(ax, Some(ax), |_, _| 50.0);
        assert!(contour_svg(&high, &spec).unwrap().contains("no contour level"));
    }

    #[test]
    fn level_rules() {
        let l = default_levels(0.01, 10.0, 4);
        assert_eq!(l.len(), 4);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*l.last().unwrap(), 10.0);
        assert!(default_levels(20.0, 10.0, 4).is_empty());
        let mut spec = RenderSpec::new(PlotKind::Contour2d);
        spec.levels = Levels::List(vec![1.0, 1.0]);
        assert!(spec.validate().is_err());
        spec.levels = Levels::List(vec![-1.0, 1.0]);
        spec.transform = Transform::Log;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn log_transform_preserves_order() {
        let v = transform_values(&[0.1, 1.0, 5.0], Transform::Log).unwrap();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(transform_values(&[0.0], Transform::Log).is_err());
    }
}
