//! Statistic functions, permutations and the pair quantities every other
//! module is built on.
//!
//! A model is fixed by a vector statistic `f = (f_1, ..., f_L)` on the unit
//! square. For a permutation `π` of `n` items the sufficient statistic is
//! `T(π) = Σ_i f(i/n, π(i)/n)` and the log-weight of `π` is `θ·T(π)`.
//!
//! Indices in this API are 0-based: item `i` sits at `x = (i + 1) / n` and
//! image `k` at `y = (k + 1) / n`. Text formats (permutation files, CLI) are
//! 1-based.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PermexpError, Result};

/// Default resolution of the midpoint grid used for centering and Gram
/// quadratures.
pub const DEFAULT_PROJECTION_RESOLUTION: usize = 512;

/// Row/column averages below this count as zero.
pub const CENTERING_TOLERANCE: f64 = 1e-9;

/// Gram eigenvalues at or below this mean the components are dependent.
pub const LINEAR_INDEPENDENCE_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    /// `f(x, y) = x y` (Spearman's rank correlation).
    Xy,
    /// `f(x, y) = -|x - y|` (Spearman's footrule).
    NegAbsDiff,
    /// `f(x, y) = -(x - y)^2`.
    NegSqDiff,
}

impl Builtin {
    #[inline]
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Builtin::Xy => x * y,
            Builtin::NegAbsDiff => -(x - y).abs(),
            Builtin::NegSqDiff => {
                let d = x - y;
                -(d * d)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Xy => "xy",
            Builtin::NegAbsDiff => "neg_abs_diff",
            Builtin::NegSqDiff => "neg_sq_diff",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "xy" => Some(Builtin::Xy),
            "neg_abs_diff" => Some(Builtin::NegAbsDiff),
            "neg_sq_diff" => Some(Builtin::NegSqDiff),
            _ => None,
        }
    }
}

/// Linear interpolation of values tabulated at the midpoints `(k + 1/2)/m`,
/// extended linearly past the outermost nodes.
#[inline]
fn midpoint_coord(t: f64, m: usize) -> (usize, f64) {
    if m == 1 {
        return (0, 0.0);
    }
    let s = t * m as f64 - 0.5;
    let k = (s.floor().max(0.0) as usize).min(m - 2);
    (k, s - k as f64)
}

#[inline]
fn interp_1d(values: &[f64], t: f64) -> f64 {
    let m = values.len();
    let (k, w) = midpoint_coord(t, m);
    if m == 1 {
        return values[0];
    }
    values[k] + w * (values[k + 1] - values[k])
}

/// An `m x m` table of values at midpoints, row-major with `x` as the row.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    m: usize,
    values: Vec<f64>,
}

impl GridTable {
    pub fn new(m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(PermexpError::InvalidStatistic("table resolution must be positive".into()));
        }
        if values.len() != m * m {
            return Err(PermexpError::DimensionMismatch {
                expected: m * m,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PermexpError::InvalidStatistic("table contains non-finite values".into()));
        }
        Ok(Self { m, values })
    }

    /// Tabulates `f` at the midpoints of an `m x m` grid.
    pub fn tabulate(m: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(m * m);
        for k in 0..m {
            let x = (k as f64 + 0.5) / m as f64;
            for l in 0..m {
                let y = (l as f64 + 0.5) / m as f64;
                values.push(f(x, y));
            }
        }
        Self::new(m, values)
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear interpolation; reproduces bilinear functions exactly.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let m = self.m;
        if m == 1 {
            return self.values[0];
        }
        let (k, wx) = midpoint_coord(x, m);
        let (l, wy) = midpoint_coord(y, m);
        let v = &self.values;
        let v00 = v[k * m + l];
        let v01 = v[k * m + l + 1];
        let v10 = v[(k + 1) * m + l];
        let v11 = v[(k + 1) * m + l + 1];
        let lo = v00 + wy * (v01 - v00);
        let hi = v10 + wy * (v11 - v10);
        lo + wx * (hi - lo)
    }
}

/// `f(x, y) - r(x) - c(y) + g` where `r`, `c` are the row and column
/// averages of `f` tabulated on a midpoint grid and `g` is their mean.
///
/// The offsets are additive in `x` and `y` separately, so pair differences
/// are unchanged and `T(π)` shifts by a constant.
#[derive(Clone, Debug)]
pub struct CenteredComponent {
    base: Component,
    row_avg: Vec<f64>,
    col_avg: Vec<f64>,
    grand_avg: f64,
}

impl CenteredComponent {
    fn new(base: Component, resolution: usize) -> Self {
        let m = resolution;
        let mut row_avg = vec![0.0; m];
        let mut col_avg = vec![0.0; m];
        for k in 0..m {
            let x = (k as f64 + 0.5) / m as f64;
            for l in 0..m {
                let y = (l as f64 + 0.5) / m as f64;
                let v = base.eval(x, y);
                row_avg[k] += v;
                col_avg[l] += v;
            }
        }
        for v in row_avg.iter_mut().chain(col_avg.iter_mut()) {
            *v /= m as f64;
        }
        let grand_avg = row_avg.iter().sum::<f64>() / m as f64;
        Self {
            base,
            row_avg,
            col_avg,
            grand_avg,
        }
    }

    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.base.eval(x, y) - interp_1d(&self.row_avg, x) - interp_1d(&self.col_avg, y) + self.grand_avg
    }

    pub fn base(&self) -> &Component {
        &self.base
    }
}

/// One scalar component `f_r` of the statistic.
#[derive(Clone)]
pub enum Component {
    Builtin(Builtin),
    Table(Arc<GridTable>),
    Scaled(f64, Box<Component>),
    Centered(Arc<CenteredComponent>),
    /// Arbitrary user-supplied function; must be finite and bounded on the
    /// unit square.
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Component {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Component::Builtin(b) => b.eval(x, y),
            Component::Table(t) => t.eval(x, y),
            Component::Scaled(c, inner) => c * inner.eval(x, y),
            Component::Centered(c) => c.eval(x, y),
            Component::Custom(f) => f(x, y),
        }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Component::Custom(Arc::new(f))
    }

    fn describe(&self) -> String {
        match self {
            Component::Builtin(b) => b.name().to_string(),
            Component::Table(t) => format!("table[{}x{}]", t.m, t.m),
            Component::Scaled(c, inner) => format!("{c}*{}", inner.describe()),
            Component::Centered(c) => format!("centered({})", c.base.describe()),
            Component::Custom(_) => "custom".to_string(),
        }
    }
}

impl fmt::Debug for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl From<Builtin> for Component {
    fn from(b: Builtin) -> Self {
        Component::Builtin(b)
    }
}

/// The vector statistic `f = (f_1, ..., f_L)`.
#[derive(Clone, Debug)]
pub struct StatisticSpec {
    components: Vec<Component>,
    centered: bool,
}

impl StatisticSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(PermexpError::InvalidStatistic("at least one component is required".into()));
        }
        Ok(Self {
            components,
            centered: false,
        })
    }

    pub fn builtin(b: Builtin) -> Self {
        Self {
            components: vec![Component::Builtin(b)],
            centered: false,
        }
    }

    /// Parses a comma-separated list of built-in names, e.g. `xy,neg_abs_diff`.
    pub fn from_names(names: &str) -> Result<Self> {
        let components = names
            .split(',')
            .map(str::trim)
            .map(|name| {
                Builtin::from_name(name)
                    .map(Component::Builtin)
                    .ok_or_else(|| PermexpError::InvalidStatistic(format!("unknown statistic `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Writes `f(x, y)` into `out` (length `L`).
    #[inline]
    pub fn eval_into(&self, x: f64, y: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x, y);
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.eval_into(x, y, &mut out);
        out
    }

    /// `θ·f(x, y)`.
    #[inline]
    pub fn eval_dot(&self, theta: &[f64], x: f64, y: f64) -> f64 {
        self.components
            .iter()
            .zip(theta)
            .map(|(c, t)| t * c.eval(x, y))
            .sum()
    }

    /// Multiplies every component by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|comp| Component::Scaled(c, Box::new(comp.clone())))
                .collect(),
            centered: self.centered,
        }
    }

    /// Largest absolute row or column average of any component over the
    /// midpoint grid of the given resolution.
    pub fn max_marginal_average(&self, resolution: usize) -> f64 {
        let m = resolution;
        let mut worst = 0.0f64;
        for comp in &self.components {
            let mut row = vec![0.0; m];
            let mut col = vec![0.0; m];
            for k in 0..m {
                let x = (k as f64 + 0.5) / m as f64;
                for l in 0..m {
                    let y = (l as f64 + 0.5) / m as f64;
                    let v = comp.eval(x, y);
                    row[k] += v;
                    col[l] += v;
                }
            }
            for v in row.iter().chain(col.iter()) {
                worst = worst.max((v / m as f64).abs());
            }
        }
        worst
    }

    /// Sets the centered flag if every component already has zero row and
    /// column averages on the grid. Returns the flag.
    pub fn detect_centered(&mut self, resolution: usize) -> bool {
        self.centered = self.max_marginal_average(resolution) < CENTERING_TOLERANCE;
        self.centered
    }

    /// Checks every component for finite values on a midpoint grid.
    pub fn validate(&self, resolution: usize) -> Result<()> {
        let m = resolution;
        for (r, comp) in self.components.iter().enumerate() {
            for k in 0..=m {
                for l in 0..=m {
                    let v = comp.eval(k as f64 / m as f64, l as f64 / m as f64);
                    if !v.is_finite() {
                        return Err(PermexpError::InvalidStatistic(format!(
                            "component {r} is not finite at ({}, {})",
                            k as f64 / m as f64,
                            l as f64 / m as f64
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads a tabulated statistic: header `m L`, then `m*m` lines of `L`
    /// reals in row-major (x-major) midpoint order.
    pub fn read_table(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(PermexpError::Parse("empty statistic table".into())),
            }
        };
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| PermexpError::Parse(format!("bad header token `{t}`"))))
            .collect::<Result<_>>()?;
        let (m, dim) = match head.as_slice() {
            [m, l] if *m > 0 && *l > 0 => (*m, *l),
            _ => return Err(PermexpError::Parse("table header must be `m L` with m, L > 0".into())),
        };
        let mut columns = vec![Vec::with_capacity(m * m); dim];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| PermexpError::Parse(format!("bad value `{t}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(PermexpError::Parse(format!("expected {dim} values per line, got {}", vals.len())));
            }
            for (col, v) in columns.iter_mut().zip(vals) {
                col.push(v);
            }
        }
        if columns[0].len() != m * m {
            return Err(PermexpError::Parse(format!("expected {} rows, got {}", m * m, columns[0].len())));
        }
        let components = columns
            .into_iter()
            .map(|values| GridTable::new(m, values).map(|t| Component::Table(Arc::new(t))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn read_table_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_table(std::io::BufReader::new(file))
    }

    /// Writes the statistic tabulated on an `m x m` midpoint grid.
    pub fn write_table(&self, m: usize, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", m, self.dimension())?;
        let mut buf = vec![0.0; self.dimension()];
        for k in 0..m {
            let x = (k as f64 + 0.5) / m as f64;
            for l in 0..m {
                let y = (l as f64 + 0.5) / m as f64;
                self.eval_into(x, y, &mut buf);
                let line: Vec<String> = buf.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }
}

/// A bijection of `{0, ..., n-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            images: (0..n).collect(),
        }
    }

    pub fn from_zero_indexed(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        if n == 0 {
            return Err(PermexpError::InvalidPermutation("empty permutation".into()));
        }
        let mut seen = vec![false; n];
        for &v in &images {
            if v >= n || seen[v] {
                return Err(PermexpError::InvalidPermutation(format!(
                    "value {} repeated or out of range for n = {n}",
                    v + 1
                )));
            }
            seen[v] = true;
        }
        Ok(Self { images })
    }

    pub fn from_one_indexed(images: &[usize]) -> Result<Self> {
        if images.contains(&0) {
            return Err(PermexpError::InvalidPermutation("1-indexed images must be >= 1".into()));
        }
        Self::from_zero_indexed(images.iter().map(|&v| v - 1).collect())
    }

    /// Skips validation; callers guarantee a bijection.
    pub(crate) fn from_images_unchecked(images: Vec<usize>) -> Self {
        debug_assert!(Self::from_zero_indexed(images.clone()).is_ok());
        Self { images }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut images: Vec<usize> = (0..n).collect();
        images.shuffle(rng);
        Self { images }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    #[inline]
    pub fn image(&self, i: usize) -> usize {
        self.images[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn one_indexed(&self) -> Vec<usize> {
        self.images.iter().map(|v| v + 1).collect()
    }

    /// Exchanges the images of `i` and `j` (composition with the
    /// transposition `(i j)` on the right).
    pub fn swap(&mut self, i: usize, j: usize) {
        self.images.swap(i, j);
    }

    pub fn transposed(&self, i: usize, j: usize) -> Self {
        let mut p = self.clone();
        p.swap(i, j);
        p
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &v) in self.images.iter().enumerate() {
            inv[v] = i;
        }
        Self { images: inv }
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let images: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| PermexpError::Parse(format!("bad permutation entry `{t}`"))))
            .collect::<Result<_>>()?;
        Self::from_one_indexed(&images)
    }

    /// Space-separated 1-indexed images, without the trailing newline.
    pub fn to_line(&self) -> String {
        let parts: Vec<String> = self.images.iter().map(|v| (v + 1).to_string()).collect();
        parts.join(" ")
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| PermexpError::Parse("permutation file is empty".into()))?;
        Self::parse_line(line)
    }

    /// Reads every non-empty line as a permutation.
    pub fn read_all(reader: impl BufRead) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(Self::parse_line(&line)?);
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.to_line())?;
        Ok(())
    }
}

/// The natural parameter `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector(Vec<f64>);

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PermexpError::InvalidConfig("theta must have at least one entry".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PermexpError::InvalidConfig("theta entries must be finite".into()));
        }
        Ok(Self(values))
    }

    pub fn scalar(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_dimension(&self, spec: &StatisticSpec) -> Result<()> {
        if self.0.len() != spec.dimension() {
            return Err(PermexpError::DimensionMismatch {
                expected: spec.dimension(),
                got: self.0.len(),
            });
        }
        Ok(())
    }
}

impl std::ops::Deref for ThetaVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn node(i: usize, n: usize) -> f64 {
    (i + 1) as f64 / n as f64
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `T(π) = Σ_i f(i/n, π(i)/n)`.
pub fn sufficient_statistic(spec: &StatisticSpec, pi: &Permutation) -> Vec<f64> {
    let n = pi.len();
    let mut total = vec![0.0; spec.dimension()];
    let mut buf = vec![0.0; spec.dimension()];
    for i in 0..n {
        spec.eval_into(node(i, n), node(pi.image(i), n), &mut buf);
        for (t, b) in total.iter_mut().zip(&buf) {
            *t += b;
        }
    }
    total
}

/// Writes `y_π(i, j)` into `out`.
pub fn pair_difference_into(
    spec: &StatisticSpec,
    pi: &Permutation,
    i: usize,
    j: usize,
    out: &mut [f64],
) -> Result<()> {
    let n = pi.len();
    if i == j {
        return Err(PermexpError::SameIndex(i));
    }
    for &index in &[i, j] {
        if index >= n {
            return Err(PermexpError::IndexOutOfRange { index, n });
        }
    }
    if out.len() != spec.dimension() {
        return Err(PermexpError::DimensionMismatch {
            expected: spec.dimension(),
            got: out.len(),
        });
    }
    let (xi, xj) = (node(i, n), node(j, n));
    let (ui, uj) = (node(pi.image(i), n), node(pi.image(j), n));
    for (o, c) in out.iter_mut().zip(spec.components()) {
        *o = pair_term(c, xi, ui, xj, uj);
    }
    Ok(())
}

/// `y_π(i, j) = f(x_i, π_i) + f(x_j, π_j) - f(x_i, π_j) - f(x_j, π_i)`.
pub fn pair_difference(spec: &StatisticSpec, pi: &Permutation, i: usize, j: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.dimension()];
    pair_difference_into(spec, pi, i, j, &mut out)?;
    Ok(out)
}

// Summed in a fixed order so that y(i,j) and y(j,i) agree bitwise.
#[inline]
fn pair_term(c: &Component, x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    let (a, b) = (c.eval(x1, y1), c.eval(x2, y2));
    let (p, q) = (c.eval(x1, y2), c.eval(x2, y1));
    (a + b) - (p + q)
}

/// `g(z1, z2) = f(x1, y1) + f(x2, y2) - f(x1, y2) - f(x2, y1)`.
pub fn g_kernel(spec: &StatisticSpec, z1: (f64, f64), z2: (f64, f64)) -> Vec<f64> {
    spec.components()
        .iter()
        .map(|c| pair_term(c, z1.0, z1.1, z2.0, z2.1))
        .collect()
}

/// Doubly centers every component on a midpoint grid of the default
/// resolution.
pub fn center_components(spec: &StatisticSpec) -> StatisticSpec {
    center_components_with(spec, DEFAULT_PROJECTION_RESOLUTION)
}

pub fn center_components_with(spec: &StatisticSpec, resolution: usize) -> StatisticSpec {
    let components = spec
        .components()
        .iter()
        .map(|c| Component::Centered(Arc::new(CenteredComponent::new(c.clone(), resolution))))
        .collect();
    StatisticSpec {
        components,
        centered: true,
    }
}

/// Mean of `|f|²` over the `n × n` node grid, a reference scale for
/// deciding when a curvature matrix is numerically zero.
pub fn node_mean_square(spec: &StatisticSpec, n: usize) -> f64 {
    let mut buf = vec![0.0; spec.dimension()];
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..n {
            spec.eval_into(node(i, n), node(k, n), &mut buf);
            total += buf.iter().map(|v| v * v).sum::<f64>();
        }
    }
    total / (n * n) as f64
}

/// Midpoint-quadrature Gram matrix `∫ f_p f_q` on an `m x m` grid.
pub fn gram_matrix(spec: &StatisticSpec, resolution: usize) -> DMatrix<f64> {
    let dim = spec.dimension();
    let m = resolution;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut buf = vec![0.0; dim];
    for k in 0..m {
        let x = (k as f64 + 0.5) / m as f64;
        for l in 0..m {
            let y = (l as f64 + 0.5) / m as f64;
            spec.eval_into(x, y, &mut buf);
            for p in 0..dim {
                for q in p..dim {
                    gram[(p, q)] += buf[p] * buf[q];
                }
            }
        }
    }
    let cells = (m * m) as f64;
    for p in 0..dim {
        for q in p..dim {
            let v = gram[(p, q)] / cells;
            gram[(p, q)] = v;
            gram[(q, p)] = v;
        }
    }
    gram
}

/// Smallest eigenvalue of the Gram matrix; the model is rejected when this
/// is at most [`LINEAR_INDEPENDENCE_THRESHOLD`].
pub fn check_linear_independence(spec: &StatisticSpec) -> f64 {
    check_linear_independence_with(spec, DEFAULT_PROJECTION_RESOLUTION)
}

pub fn check_linear_independence_with(spec: &StatisticSpec, resolution: usize) -> f64 {
    gram_matrix(spec, resolution).symmetric_eigenvalues().min()
}
