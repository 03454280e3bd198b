//! Discrete canonical path space.
//!
//! Paths are d-dimensional trajectories on a fixed time grid. Prefixes carry
//! the adaptedness contract: an object that receives a [`PathPrefix`] cut at
//! index `k` structurally cannot read values beyond `k`, which replaces the
//! measurability bookkeeping of the continuous-time setting.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Time discretization of `[0, T]` with `N + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with step `T / n`.
    pub fn uniform(horizon: f64, n: usize) -> Arc<Self> {
        assert!(horizon > 0.0, "horizon must be positive");
        assert!(n >= 1, "step count must be at least 1");
        let dt = horizon / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
        nodes[n] = horizon;
        Arc::new(TimeGrid { horizon, nodes })
    }

    /// Grid from explicit nodes. Nodes must start at 0, be strictly
    /// increasing and end at the horizon.
    pub fn from_nodes(nodes: Vec<f64>) -> Arc<Self> {
        assert!(nodes.len() >= 2, "need at least two nodes");
        assert_eq!(nodes[0], 0.0, "first node must be 0");
        assert!(
            nodes.windows(2).all(|w| w[1] > w[0]),
            "nodes must be strictly increasing"
        );
        let horizon = *nodes.last().unwrap();
        Arc::new(TimeGrid { horizon, nodes })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps N; the grid has N + 1 nodes.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    /// Step size `t_{j+1} - t_j`.
    pub fn dt(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    /// Uniform step size. Panics on non-uniform grids; the tree oracles
    /// require a single step size.
    pub fn uniform_dt(&self) -> f64 {
        let dt = self.dt(0);
        debug_assert!(
            self.nodes.windows(2).all(|w| (w[1] - w[0] - dt).abs() < 1e-12 * self.horizon),
            "grid is not uniform"
        );
        dt
    }
}

fn same_space(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>, da: usize, db: usize) -> Result<()> {
    if !Arc::ptr_eq(a, b) && **a != **b {
        return Err(Error::GridMismatch);
    }
    if da != db {
        return Err(Error::DimMismatch { expected: da, got: db });
    }
    Ok(())
}

/// Full trajectory on the grid: values at indices `0..=N`.
#[derive(Debug, Clone)]
pub struct Path {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

/// Trajectory prefix: values at indices `0..=cut`. The only path view that
/// adapted objects (controls, coefficients) ever receive.
#[derive(Debug, Clone)]
pub struct PathPrefix {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

/// Trajectory tail: values at indices `start..=N`. Continuations and SDE
/// solutions from an intermediate time live here.
#[derive(Debug, Clone)]
pub struct PathSegment {
    grid: Arc<TimeGrid>,
    dim: usize,
    start: usize,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = (grid.steps() + 1) * dim;
        if values.len() != expected {
            return Err(Error::DimMismatch { expected, got: values.len() });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "path values", step: 0 });
        }
        Ok(Path { grid, dim, values })
    }

    /// Constant path pinned at `x`.
    pub fn constant(grid: Arc<TimeGrid>, x: &[f64]) -> Self {
        let n = grid.steps();
        let values = x.iter().copied().cycle().take((n + 1) * x.len()).collect();
        Path { grid, dim: x.len(), values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.point(self.grid.steps())
    }

    /// First `k + 1` values as a prefix.
    pub fn restrict(&self, k: usize) -> Result<PathPrefix> {
        let n = self.grid.steps();
        if k > n {
            return Err(Error::IndexOutOfRange { index: k, max: n });
        }
        Ok(PathPrefix {
            grid: self.grid.clone(),
            dim: self.dim,
            values: self.values[..(k + 1) * self.dim].to_vec(),
        })
    }

    /// Shifted tail: `result_j = path_j - path_k` for `j >= k`.
    pub fn shift(&self, k: usize) -> Result<PathSegment> {
        let n = self.grid.steps();
        if k > n {
            return Err(Error::IndexOutOfRange { index: k, max: n });
        }
        let base = self.point(k).to_vec();
        let mut values = Vec::with_capacity((n + 1 - k) * self.dim);
        for j in k..=n {
            for (i, b) in base.iter().enumerate() {
                values.push(self.point(j)[i] - b);
            }
        }
        Ok(PathSegment { grid: self.grid.clone(), dim: self.dim, start: k, values })
    }

    /// Whole path viewed as a segment starting at index 0.
    pub fn as_segment(&self) -> PathSegment {
        PathSegment {
            grid: self.grid.clone(),
            dim: self.dim,
            start: 0,
            values: self.values.clone(),
        }
    }

    /// Tail of this path from index `k`, without shifting.
    pub fn tail(&self, k: usize) -> Result<PathSegment> {
        let n = self.grid.steps();
        if k > n {
            return Err(Error::IndexOutOfRange { index: k, max: n });
        }
        Ok(PathSegment {
            grid: self.grid.clone(),
            dim: self.dim,
            start: k,
            values: self.values[k * self.dim..].to_vec(),
        })
    }
}

impl PathPrefix {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() % dim != 0 || values.is_empty() {
            return Err(Error::DimMismatch { expected: dim, got: values.len() });
        }
        let cut = values.len() / dim - 1;
        let n = grid.steps();
        if cut > n {
            return Err(Error::IndexOutOfRange { index: cut, max: n });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "prefix values", step: 0 });
        }
        Ok(PathPrefix { grid, dim, values })
    }

    /// Single-point prefix at index 0.
    pub fn origin(grid: Arc<TimeGrid>, x: &[f64]) -> Self {
        PathPrefix { grid, dim: x.len(), values: x.to_vec() }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cut index k: the prefix exposes values at `0..=k` and nothing beyond.
    pub fn cut(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.cut())
    }

    pub fn restrict(&self, k: usize) -> Result<PathPrefix> {
        if k > self.cut() {
            return Err(Error::IndexOutOfRange { index: k, max: self.cut() });
        }
        Ok(PathPrefix {
            grid: self.grid.clone(),
            dim: self.dim,
            values: self.values[..(k + 1) * self.dim].to_vec(),
        })
    }

    /// Extend by one node. Internal to the solvers; user code builds
    /// prefixes through `Path::restrict` or `concat`.
    pub(crate) fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(self.cut() < self.grid.steps());
        self.values.extend_from_slice(x);
    }

    pub(crate) fn pop(&mut self) {
        debug_assert!(self.cut() > 0);
        self.values.truncate(self.values.len() - self.dim);
    }

    /// Interpret a completed prefix (cut == N) as a full path.
    pub fn into_path(self) -> Result<Path> {
        if self.cut() != self.grid.steps() {
            return Err(Error::IndexOutOfRange { index: self.cut(), max: self.grid.steps() });
        }
        Ok(Path { grid: self.grid, dim: self.dim, values: self.values })
    }
}

impl PathSegment {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, start: usize, values: Vec<f64>) -> Result<Self> {
        let n = grid.steps();
        if start > n {
            return Err(Error::IndexOutOfRange { index: start, max: n });
        }
        let expected = (n + 1 - start) * dim;
        if values.len() != expected {
            return Err(Error::DimMismatch { expected, got: values.len() });
        }
        Ok(PathSegment { grid, dim, start, values })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Value at absolute grid index `j >= start`.
    pub fn point(&self, j: usize) -> &[f64] {
        let off = (j - self.start) * self.dim;
        &self.values[off..off + self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.point(self.grid.steps())
    }
}

/// Concatenation at the prefix's cut index k:
/// the result follows the prefix on `0..=k` and continues with the
/// increments of `continuation` after k.
pub fn concat(prefix: &PathPrefix, continuation: &PathSegment) -> Result<Path> {
    same_space(&prefix.grid, &continuation.grid, prefix.dim, continuation.dim)?;
    let k = prefix.cut();
    if continuation.start > k {
        return Err(Error::IndexOutOfRange { index: continuation.start, max: k });
    }
    let n = prefix.grid.steps();
    let d = prefix.dim;
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(&prefix.values);
    let anchor = prefix.point(k).to_vec();
    let cont_at_k = continuation.point(k).to_vec();
    // When the continuation already agrees with the prefix at the cut, pass
    // its values through untouched so that self-concatenation is exact.
    let aligned = anchor.iter().zip(&cont_at_k).all(|(a, c)| a.to_bits() == c.to_bits());
    for j in k + 1..=n {
        let c = continuation.point(j);
        for i in 0..d {
            values.push(if aligned { c[i] } else { anchor[i] + (c[i] - cont_at_k[i]) });
        }
    }
    Ok(Path { grid: prefix.grid.clone(), dim: d, values })
}

/// Convenience: concatenate a full path as the continuation.
pub fn concat_path(prefix: &PathPrefix, continuation: &Path) -> Result<Path> {
    concat(prefix, &continuation.as_segment())
}

enum View<'a> {
    Full(&'a Path),
    Prefix(&'a PathPrefix),
    Segment(&'a PathSegment),
}

/// Either side of a sup-distance comparison.
pub struct PathView<'a>(View<'a>);

impl<'a> From<&'a Path> for PathView<'a> {
    fn from(p: &'a Path) -> Self {
        PathView(View::Full(p))
    }
}
impl<'a> From<&'a PathPrefix> for PathView<'a> {
    fn from(p: &'a PathPrefix) -> Self {
        PathView(View::Prefix(p))
    }
}
impl<'a> From<&'a PathSegment> for PathView<'a> {
    fn from(p: &'a PathSegment) -> Self {
        PathView(View::Segment(p))
    }
}

impl<'a> PathView<'a> {
    fn grid(&self) -> &Arc<TimeGrid> {
        match &self.0 {
            View::Full(p) => &p.grid,
            View::Prefix(p) => &p.grid,
            View::Segment(p) => &p.grid,
        }
    }
    fn dim(&self) -> usize {
        match &self.0 {
            View::Full(p) => p.dim,
            View::Prefix(p) => p.dim,
            View::Segment(p) => p.dim,
        }
    }
    fn range(&self) -> (usize, usize) {
        match &self.0 {
            View::Full(p) => (0, p.grid.steps()),
            View::Prefix(p) => (0, p.cut()),
            View::Segment(p) => (p.start, p.grid.steps()),
        }
    }
    fn point(&self, j: usize) -> &[f64] {
        match &self.0 {
            View::Full(p) => p.point(j),
            View::Prefix(p) => p.point(j),
            View::Segment(p) => p.point(j),
        }
    }
}

/// Uniform (sup) distance over indices `from..=upto`: the max Euclidean
/// distance of the two trajectories node by node.
pub fn sup_distance_from<'a, 'b>(
    a: impl Into<PathView<'a>>,
    b: impl Into<PathView<'b>>,
    from: usize,
    upto: usize,
) -> Result<f64> {
    let a = a.into();
    let b = b.into();
    same_space(a.grid(), b.grid(), a.dim(), b.dim())?;
    let (alo, ahi) = a.range();
    let (blo, bhi) = b.range();
    let lo = alo.max(blo);
    let hi = ahi.min(bhi);
    if from < lo || upto > hi || from > upto {
        return Err(Error::IndexOutOfRange { index: upto, max: hi });
    }
    let mut best = 0.0f64;
    for j in from..=upto {
        let pa = a.point(j);
        let pb = b.point(j);
        let d2: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
        best = best.max(d2.sqrt());
    }
    Ok(best)
}

/// Sup distance over `0..=upto` (segments start where they start).
pub fn sup_distance<'a, 'b>(
    a: impl Into<PathView<'a>>,
    b: impl Into<PathView<'b>>,
    upto: usize,
) -> Result<f64> {
    let a = a.into();
    let b = b.into();
    let from = a.range().0.max(b.range().0);
    sup_distance_from(a, b, from, upto)
}

/// Serialize a path to CSV with columns `step,t,x_0,...,x_{d-1}`.
pub fn path_to_csv(path: &Path) -> String {
    let mut out = String::from("step,t");
    for i in 0..path.dim {
        out.push_str(&format!(",x_{i}"));
    }
    out.push('\n');
    for j in 0..=path.grid.steps() {
        out.push_str(&format!("{j},{:.16e}", path.grid.node(j)));
        for v in path.point(j) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path1(grid: &Arc<TimeGrid>, vals: &[f64]) -> Path {
        Path::new(grid.clone(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn concat_hand_example() {
        // grid {0, .5, 1}, prefix (0, 1), continuation values at 1,2 = (1, 3)
        let grid = TimeGrid::uniform(1.0, 2);
        let prefix = PathPrefix::new(grid.clone(), 1, vec![0.0, 1.0]).unwrap();
        let cont = PathSegment::new(grid.clone(), 1, 1, vec![1.0, 3.0]).unwrap();
        let out = concat(&prefix, &cont).unwrap();
        assert_eq!(out.point(0), &[0.0]);
        assert_eq!(out.point(1), &[1.0]);
        assert_eq!(out.point(2), &[3.0]);
    }

    #[test]
    fn concat_self_identity() {
        let grid = TimeGrid::uniform(1.0, 4);
        let p = path1(&grid, &[0.0, 0.3, -0.2, 1.1, 0.9]);
        for k in 0..=4 {
            let out = concat_path(&p.restrict(k).unwrap(), &p).unwrap();
            for j in 0..=4 {
                assert_eq!(out.point(j), p.point(j));
            }
        }
    }

    #[test]
    fn concat_translation_case() {
        let grid = TimeGrid::uniform(1.0, 3);
        let prefix = PathPrefix::new(grid.clone(), 1, vec![2.5]).unwrap();
        let cont = path1(&grid, &[0.0, 1.0, -1.0, 4.0]);
        let out = concat_path(&prefix, &cont).unwrap();
        for j in 0..=3 {
            assert_eq!(out.point(j)[0], 2.5 + cont.point(j)[0]);
        }
    }

    #[test]
    fn shift_hand_example() {
        let grid = TimeGrid::uniform(1.0, 2);
        let p = path1(&grid, &[2.0, 5.0, 4.0]);
        let s = p.shift(1).unwrap();
        assert_eq!(s.point(1), &[0.0]);
        assert_eq!(s.point(2), &[-1.0]);
    }

    #[test]
    fn shift_identity_and_zero() {
        let grid = TimeGrid::uniform(1.0, 2);
        let p = path1(&grid, &[0.0, 1.0, 2.0]);
        let s = p.shift(0).unwrap();
        for j in 0..=2 {
            assert_eq!(s.point(j), p.point(j));
        }
        let c = Path::constant(grid.clone(), &[3.0]);
        let s = c.shift(1).unwrap();
        assert_eq!(s.point(1), &[0.0]);
        assert_eq!(s.point(2), &[0.0]);
    }

    #[test]
    fn sup_distance_hand_example() {
        let grid = TimeGrid::uniform(1.0, 2);
        let a = path1(&grid, &[0.0, 1.0, 2.0]);
        let b = path1(&grid, &[0.0, 0.0, 4.0]);
        assert_eq!(sup_distance(&a, &b, 2).unwrap(), 2.0);
        assert_eq!(sup_distance(&a, &a, 2).unwrap(), 0.0);
    }

    #[test]
    fn sup_distance_translation() {
        let grid = TimeGrid::uniform(1.0, 2);
        let a = path1(&grid, &[0.0, 1.0, 2.0]);
        let b = path1(&grid, &[0.7, 1.7, 2.7]);
        assert!((sup_distance(&a, &b, 2).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn restrict_roundtrips() {
        let grid = TimeGrid::uniform(1.0, 3);
        let p = path1(&grid, &[0.0, 1.0, -2.0, 0.5]);
        let full = p.restrict(3).unwrap();
        assert_eq!(full.cut(), 3);
        let single = p.restrict(0).unwrap();
        assert_eq!(single.cut(), 0);
        assert_eq!(single.point(0), &[0.0]);
        // restrict(concat(p, c), k) = p
        let prefix = p.restrict(2).unwrap();
        let cont = path1(&grid, &[0.0, 5.0, 5.0, 9.0]);
        let glued = concat_path(&prefix, &cont).unwrap();
        let back = glued.restrict(2).unwrap();
        for j in 0..=2 {
            assert_eq!(back.point(j), prefix.point(j));
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let g1 = TimeGrid::uniform(1.0, 2);
        let g2 = TimeGrid::uniform(2.0, 2);
        let a = path1(&g1, &[0.0, 1.0, 2.0]);
        let b = Path::new(g2, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(sup_distance(&a, &b, 2).is_err());
    }

    #[test]
    fn csv_format() {
        let grid = TimeGrid::uniform(1.0, 1);
        let p = path1(&grid, &[0.0, 0.5]);
        let csv = path_to_csv(&p);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,t,x_0");
        assert!(lines.next().unwrap().starts_with("0,0"));
    }
}
