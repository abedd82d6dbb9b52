//! Uniform time grids over `[t_min, t_max]` with `t_min ≤ 0 ≤ t_max`, and
//! paths sampled on them.
//!
//! Times are never stored: a grid point is an index, and its time is the
//! exact product `mesh · (index − index_of_zero)`. Delays registered with a
//! grid must be exact integer multiples of the mesh, which turns the time
//! shift `s ↦ s − r_i` into an exact index shift.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Uniform grid on `[t_min, t_max]` with `t_min = −cells_before · mesh ≤ 0`
/// and `t_max = cells_after · mesh ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    mesh: T,
    cells_before: usize,
    cells_after: usize,
}

impl<T: Scalar> Grid<T> {
    pub fn new(mesh: T, cells_before: usize, cells_after: usize) -> Result<Self> {
        if !(mesh > T::zero()) || !mesh.is_finite() {
            return Err(Error::domain("mesh must be positive and finite"));
        }
        if cells_after == 0 {
            return Err(Error::domain("grid must extend past t = 0"));
        }
        Ok(Grid { mesh, cells_before, cells_after })
    }

    /// Grid on `[0, T]` with `T = cells · mesh`.
    pub fn nonnegative(mesh: T, cells: usize) -> Result<Self> {
        Grid::new(mesh, 0, cells)
    }

    #[inline]
    pub fn mesh(&self) -> T {
        self.mesh
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.cells_before + self.cells_after + 1
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.cells_before + self.cells_after
    }

    /// Index of the grid point t = 0.
    #[inline]
    pub fn index_zero(&self) -> usize {
        self.cells_before
    }

    /// Index of the last grid point (t = t_max).
    #[inline]
    pub fn index_end(&self) -> usize {
        self.n_points() - 1
    }

    #[inline]
    pub fn t_min(&self) -> T {
        self.time(0)
    }

    #[inline]
    pub fn t_max(&self) -> T {
        self.time(self.index_end())
    }

    /// Time of a grid index, exact in the sense `mesh · (i − i₀)`.
    #[inline]
    pub fn time(&self, index: usize) -> T {
        self.mesh * T::from_index(index as isize - self.cells_before as isize)
    }

    /// Time difference `time(j) − time(i)`.
    #[inline]
    pub fn span(&self, i: usize, j: usize) -> T {
        self.mesh * T::from_index(j as isize - i as isize)
    }

    /// Number of whole cells a duration covers, if it is grid-aligned.
    ///
    /// Works on an f64 image of the duration; accepts values within 1e-9
    /// relative of an exact multiple (the CLI parses meshes as exact
    /// rationals, so inputs arrive clean).
    pub fn cells_of(&self, duration: T) -> Result<usize> {
        let ratio = (duration / self.mesh).to_f64().unwrap_or(f64::NAN);
        let rounded = ratio.round();
        if !ratio.is_finite() || (ratio - rounded).abs() > 1e-9 * (1.0 + ratio.abs()) || rounded < 0.0 {
            return Err(Error::alignment(format!(
                "duration {duration} is not a nonnegative integer multiple of mesh {}",
                self.mesh
            )));
        }
        Ok(rounded as usize)
    }
}

/// A (possibly matrix-valued) path sampled on a contiguous index range of a
/// grid. Vector paths have `cols = 1`; density paths of controlled paths are
/// matrix-valued. Data is shared, so clones and sub-segment views are cheap.
#[derive(Debug, Clone)]
pub struct GridPath<T> {
    grid: Grid<T>,
    start: usize,
    rows: usize,
    cols: usize,
    data: Arc<[T]>,
}

impl<T: Scalar> GridPath<T> {
    /// Path over the full grid from a value function of the grid index.
    pub fn from_fn(grid: &Grid<T>, rows: usize, cols: usize, f: impl FnMut(usize) -> Mat<T>) -> Self {
        Self::segment_from_fn(grid, 0, grid.n_points(), rows, cols, f)
    }

    /// Path over grid indices `start .. start + len`.
    pub fn segment_from_fn(
        grid: &Grid<T>,
        start: usize,
        len: usize,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize) -> Mat<T>,
    ) -> Self {
        assert!(start + len <= grid.n_points(), "segment exceeds grid");
        assert!(len > 0, "empty segment");
        let mut data = Vec::with_capacity(len * rows * cols);
        for i in start..start + len {
            let v = f(i);
            assert_eq!(v.shape(), (rows, cols), "value shape mismatch at index {i}");
            data.extend_from_slice(v.as_slice());
        }
        GridPath { grid: grid.clone(), start, rows, cols, data: data.into() }
    }

    /// Scalar-component constructor for vector paths (`cols = 1`):
    /// `f(component, grid_index)`.
    pub fn from_components(grid: &Grid<T>, dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self::from_fn(grid, dim, 1, |i| Mat::from_fn(dim, 1, |r, _| f(r, i)))
    }

    pub fn from_raw(grid: Grid<T>, start: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if !data.len().is_multiple_of(rows * cols) {
            return Err(Error::shape("raw buffer not a multiple of the value size"));
        }
        let len = data.len() / (rows * cols);
        if start + len > grid.n_points() {
            return Err(Error::shape("segment exceeds grid"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("path contains non-finite entries"));
        }
        Ok(GridPath { grid, start, rows, cols, data: data.into() })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// First grid index covered.
    #[inline]
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last grid index covered (inclusive).
    #[inline]
    pub fn end(&self) -> usize {
        self.start + self.len() - 1
    }

    /// Number of grid points covered.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / (self.rows * self.cols)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Vector dimension; panics for matrix-valued paths.
    pub fn dim(&self) -> usize {
        assert_eq!(self.cols, 1, "dim() on a matrix-valued path");
        self.rows
    }

    pub fn covers(&self, index: usize) -> bool {
        index >= self.start && index <= self.end()
    }

    pub fn covers_range(&self, lo: usize, hi: usize) -> bool {
        lo >= self.start && hi <= self.end()
    }

    /// Raw value slice at a grid index.
    #[inline]
    pub fn at(&self, index: usize) -> &[T] {
        debug_assert!(self.covers(index), "index {index} outside segment");
        let k = (index - self.start) * self.rows * self.cols;
        &self.data[k..k + self.rows * self.cols]
    }

    #[inline]
    pub fn entry(&self, index: usize, r: usize, c: usize) -> T {
        self.at(index)[r * self.cols + c]
    }

    /// Value at a grid index as a matrix.
    pub fn value(&self, index: usize) -> Mat<T> {
        Mat::from_vec(self.rows, self.cols, self.at(index).to_vec())
    }

    /// Increment `value(j) − value(i)`.
    pub fn increment(&self, i: usize, j: usize) -> Mat<T> {
        let a = self.at(i);
        let b = self.at(j);
        Mat::from_vec(self.rows, self.cols, b.iter().zip(a).map(|(&x, &y)| x - y).collect())
    }

    /// Cheap sub-segment view sharing the same buffer.
    pub fn restrict(&self, start: usize, end: usize) -> Result<Self> {
        if !self.covers_range(start, end) || start > end {
            return Err(Error::domain(format!(
                "restrict [{start}, {end}] outside segment [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let w = self.rows * self.cols;
        let lo = (start - self.start) * w;
        let hi = (end + 1 - self.start) * w;
        Ok(GridPath {
            grid: self.grid.clone(),
            start,
            rows: self.rows,
            cols: self.cols,
            data: self.data[lo..hi].to_vec().into(),
        })
    }

    pub fn sup_norm(&self) -> T {
        let mut m = T::zero();
        for &v in self.data.iter() {
            if v.abs() > m {
                m = v.abs();
            }
        }
        m
    }

    /// Pointwise difference of two paths on the intersection of their spans.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("path difference: value shapes differ"));
        }
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        if lo > hi {
            return Err(Error::domain("path difference: disjoint segments"));
        }
        let w = self.rows * self.cols;
        let mut data = Vec::with_capacity((hi - lo + 1) * w);
        for i in lo..=hi {
            data.extend(self.at(i).iter().zip(other.at(i)).map(|(&a, &b)| a - b));
        }
        Ok(GridPath { grid: self.grid.clone(), start: lo, rows: self.rows, cols: self.cols, data: data.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_are_index_exact() {
        let g = Grid::new(0.25f64, 2, 4).unwrap();
        assert_eq!(g.n_points(), 7);
        assert_eq!(g.index_zero(), 2);
        assert_eq!(g.time(0), -0.5);
        assert_eq!(g.time(2), 0.0);
        assert_eq!(g.time(6), 1.0);
        assert_eq!(g.span(1, 5), 1.0);
    }

    #[test]
    fn cells_of_alignment() {
        let g = Grid::new(1.0 / 256.0f64, 0, 256).unwrap();
        assert_eq!(g.cells_of(0.25).unwrap(), 64);
        assert!(g.cells_of(0.3).is_err());
    }

    #[test]
    fn segment_views() {
        let g = Grid::new(0.5f64, 0, 8).unwrap();
        let p = GridPath::from_components(&g, 2, |c, i| (c * 100 + i) as f64);
        assert_eq!(p.entry(3, 1, 0), 103.0);
        let q = p.restrict(2, 5).unwrap();
        assert_eq!(q.start(), 2);
        assert_eq!(q.end(), 5);
        assert_eq!(q.entry(4, 0, 0), 4.0);
        let inc = p.increment(1, 6);
        assert_eq!(inc.get(0, 0), 5.0);
        assert_eq!(inc.get(1, 0), 5.0);
    }

    #[test]
    fn rejects_nonfinite() {
        let g = Grid::new(1.0f64, 0, 1).unwrap();
        let res = GridPath::from_raw(g, 0, 1, 1, vec![0.0, f64::NAN]);
        assert!(res.is_err());
    }
}
