//! Grid construction of the delayed Lévy area x²(v).
//!
//! For each registered delay shift (in grid cells, 0 always included) the
//! area stores one d×d matrix per grid cell of `[0, t_max]`, built by the
//! symmetric one-cell rule
//!
//! ```text
//! A_v[cell](a, b) = ½ (δx^a)_{cell+v} (δx^b)_{cell}
//! ```
//!
//! and assembles multi-cell values through the Chen relation
//! `δx²(v) = δx^v ⊗ δx`, which therefore holds exactly (at floating-point
//! roundoff) at every grid triple.
//!
//! Index convention (load-bearing, do not transpose): the FIRST index of an
//! area value is the component of the delayed inner increment, the SECOND is
//! the component of the outer integrator, so `A(v)(a, b)` over `[s, t]`
//! approximates `∫_s^t (δx^a)_{s+v, u+v} dx^b_u`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridPath;
use crate::increments::Increment2;
use crate::mat::Mat;
use crate::scalar::{real, Scalar};

/// The family x²(v) for v in the delay set, over the cells of `[0, t_max]`.
#[derive(Clone)]
pub struct DelayedArea<T> {
    base: GridPath<T>,
    /// Delay shifts in grid cells, ascending, starting with 0.
    shifts: Vec<usize>,
    /// `per_step[delay][cell − index_zero]`, each a d×d matrix.
    per_step: Arc<Vec<Vec<Mat<T>>>>,
}

/// Build the delayed area of a driver path for the given positive delay
/// shifts (cells). The zero shift is always included and deduplicated.
pub fn build_area<T: Scalar>(path: &GridPath<T>, delay_cells: &[usize]) -> Result<DelayedArea<T>> {
    if path.cols() != 1 {
        return Err(Error::shape("driver path must be vector-valued"));
    }
    if path.start() != 0 || path.end() != path.grid().index_end() {
        return Err(Error::domain("driver path must cover the full grid"));
    }
    let i0 = path.grid().index_zero();
    let mut shifts: Vec<usize> = Vec::with_capacity(delay_cells.len() + 1);
    shifts.push(0);
    for &s in delay_cells {
        if !shifts.contains(&s) {
            shifts.push(s);
        }
    }
    shifts.sort_unstable();
    for &s in &shifts {
        if s > i0 {
            return Err(Error::alignment(format!(
                "delay of {s} cells reaches before the grid start ({i0} cells available)"
            )));
        }
    }
    let _ = path.dim();
    let end = path.grid().index_end();
    let half = real::<T>(0.5);
    let mut per_step = Vec::with_capacity(shifts.len());
    for &shift in &shifts {
        let mut cells = Vec::with_capacity(end - i0);
        for c in i0..end {
            let inner = path.increment(c - shift, c + 1 - shift);
            let outer = path.increment(c, c + 1);
            cells.push(Mat::outer(&inner, &outer).scale(half));
        }
        per_step.push(cells);
    }
    Ok(DelayedArea { base: path.clone(), shifts, per_step: Arc::new(per_step) })
}

impl<T: Scalar> DelayedArea<T> {
    pub fn base_path(&self) -> &GridPath<T> {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Registered delay shifts in cells (ascending, first is 0).
    pub fn shifts(&self) -> &[usize] {
        &self.shifts
    }

    pub fn delay_index(&self, shift: usize) -> Result<usize> {
        self.shifts
            .iter()
            .position(|&s| s == shift)
            .ok_or_else(|| Error::domain(format!("no area stored for delay shift {shift}")))
    }

    /// The stored one-cell matrix at `cell` (absolute grid index of the cell
    /// start, which must lie in `[index_zero, end)`).
    pub fn per_step(&self, delay_idx: usize, cell: usize) -> &Mat<T> {
        let i0 = self.base.grid().index_zero();
        &self.per_step[delay_idx][cell - i0]
    }

    /// Chen-assembled area over `[s, t]` (grid indices, both ≥ index of 0):
    /// sum of per-cell matrices plus the cross terms
    /// `δx^v_{s, c} ⊗ δx_{c, c+1}`.
    pub fn over(&self, delay_idx: usize, s: usize, t: usize) -> Result<Mat<T>> {
        let i0 = self.base.grid().index_zero();
        let end = self.base.grid().index_end();
        if s < i0 || t > end || s > t {
            return Err(Error::domain(format!(
                "area requested over [{s}, {t}] outside [{i0}, {end}]"
            )));
        }
        let d = self.dim();
        let shift = self.shifts[delay_idx];
        let mut acc = Mat::zeros(d, d);
        for c in s..t {
            acc = acc.add(&self.per_step[delay_idx][c - i0]);
            if c > s {
                let inner = self.base.increment(s - shift, c - shift);
                let outer = self.base.increment(c, c + 1);
                acc = acc.add(&Mat::outer(&inner, &outer));
            }
        }
        Ok(acc)
    }

    /// The area of one delay as a 1-increment on `[0, t_max]`, for norm scans.
    pub fn as_increment2(&self, delay_idx: usize) -> Increment2<T> {
        let me = self.clone();
        let grid = self.base.grid().clone();
        let d = self.dim();
        Increment2::new(grid.clone(), grid.index_zero(), grid.index_end(), d, d, move |s, t| {
            me.over(delay_idx, s, t).expect("domain-checked scan")
        })
    }
}

/// Monte-Carlo second-moment summary of the area at one delay/component.
#[derive(Debug, Clone, Serialize)]
pub struct SpanMoment {
    pub span_time: f64,
    pub mean_square: f64,
    /// `mean_square / span^{4H}` — compare with 3/4 on the diagonal at v = 0.
    pub scaled: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AreaMomentReport {
    pub shift_cells: usize,
    pub component: (usize, usize),
    pub trials: u64,
    pub per_span: Vec<SpanMoment>,
    /// Least-squares slope of log mean-square against log span.
    pub fitted_exponent: f64,
}

/// Estimate `E|x²_{0,span}(v)(i,j)|²` across a ladder of spans and fit the
/// scaling exponent on log–log data.
pub fn area_moment_check<T: Scalar>(
    spec: &crate::fbm::FbmSpec<T>,
    shift_cells: usize,
    component: (usize, usize),
    spans_cells: &[usize],
    trials: u64,
) -> Result<AreaMomentReport> {
    if trials < 256 {
        return Err(Error::domain("area moment check needs at least 256 trials"));
    }
    if component.0 >= spec.dim || component.1 >= spec.dim {
        return Err(Error::domain("component indices out of range"));
    }
    let sampler = crate::fbm::FbmSampler::new(spec)?;
    let i0 = spec.grid.index_zero();
    let max_span = spec.grid.index_end() - i0;
    if spans_cells.iter().any(|&s| s == 0 || s > max_span) {
        return Err(Error::domain("span ladder outside the grid"));
    }
    let hurst = spec.hurst.to_f64().expect("hurst");
    let mut acc = vec![0.0f64; spans_cells.len()];
    for trial in 0..trials {
        let path = sampler.sample(trial);
        let area = build_area(&path, &[shift_cells])?;
        let di = area.delay_index(shift_cells)?;
        for (k, &span) in spans_cells.iter().enumerate() {
            let v = area
                .over(di, i0, i0 + span)?
                .get(component.0, component.1)
                .to_f64()
                .expect("area value");
            acc[k] += v * v;
        }
    }
    let mesh = spec.grid.mesh().to_f64().expect("mesh");
    let per_span: Vec<SpanMoment> = spans_cells
        .iter()
        .zip(&acc)
        .map(|(&span, &sum)| {
            let span_time = span as f64 * mesh;
            let mean_square = sum / trials as f64;
            SpanMoment { span_time, mean_square, scaled: mean_square / span_time.powf(4.0 * hurst) }
        })
        .collect();
    let fitted_exponent = fit_loglog_slope(&per_span);
    Ok(AreaMomentReport { shift_cells, component, trials, per_span, fitted_exponent })
}

fn fit_loglog_slope(points: &[SpanMoment]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let x = p.span_time.ln();
        let y = p.mean_square.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Sidecar pinning the index convention so downstream consumers cannot
/// silently transpose.
#[derive(Debug, Clone, Serialize)]
pub struct AreaSidecar {
    pub index_convention: &'static str,
    pub delays: Vec<f64>,
    pub mesh: f64,
    pub dim: usize,
}

pub fn area_sidecar<T: Scalar>(area: &DelayedArea<T>) -> AreaSidecar {
    let mesh = area.base_path().grid().mesh().to_f64().expect("mesh");
    AreaSidecar {
        index_convention:
            "inner-first: value[a][b] over [s,t] approximates int_s^t (delta x^a)_{s+v,u+v} dx^b_u",
        delays: area.shifts().iter().map(|&s| -(s as f64) * mesh).collect(),
        mesh,
        dim: area.dim(),
    }
}

/// CSV export of per-step entries: `k,v,a,b,value`, with `k` the cell index
/// counted from t = 0, `v` the (non-positive) delay time, and `a`, `b`
/// 1-based component indices.
pub fn write_area_csv<T: Scalar>(area: &DelayedArea<T>, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "k,v,a,b,value")?;
    let grid = area.base_path().grid();
    let i0 = grid.index_zero();
    let mesh = grid.mesh().to_f64().expect("mesh");
    let d = area.dim();
    for (di, &shift) in area.shifts().iter().enumerate() {
        let v = -(shift as f64) * mesh;
        for cell in i0..grid.index_end() {
            let m = area.per_step(di, cell);
            for a in 0..d {
                for b in 0..d {
                    writeln!(
                        out,
                        "{},{:.16e},{},{},{:.16e}",
                        cell - i0,
                        v,
                        a + 1,
                        b + 1,
                        m.get(a, b).to_f64().expect("value")
                    )?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{FbmSampler, FbmSpec, Method};
    use crate::grid::Grid;
    use crate::rng;

    fn fbm_path(hurst: f64, cells_before: usize, cells_after: usize, seed: u64) -> GridPath<f64> {
        let mesh = 1.0 / cells_after as f64;
        let grid = Grid::new(mesh, cells_before, cells_after).unwrap();
        let spec = FbmSpec::new(hurst, 2, grid, seed, Method::Cholesky).unwrap();
        FbmSampler::new(&spec).unwrap().sample(0)
    }

    #[test]
    fn zero_span_and_single_cell() {
        let path = fbm_path(0.45, 8, 32, 3);
        let area = build_area(&path, &[8]).unwrap();
        let i0 = path.grid().index_zero();
        for di in 0..2 {
            assert_eq!(area.over(di, i0 + 3, i0 + 3).unwrap().max_norm(), 0.0);
            let single = area.over(di, i0 + 3, i0 + 4).unwrap();
            assert_eq!(&single, area.per_step(di, i0 + 3));
        }
    }

    #[test]
    fn chen_relation_exact() {
        let path = fbm_path(0.4, 16, 64, 7);
        let area = build_area(&path, &[4, 16]).unwrap();
        let i0 = path.grid().index_zero();
        let end = path.grid().index_end();
        for (di, &shift) in area.shifts().iter().enumerate() {
            for k in 0..200u64 {
                let key = rng::stream_key(99, k, di as u64);
                let span = end - i0;
                let mut idx: Vec<usize> = (0..3)
                    .map(|j| i0 + (rng::uniform(key, j) * (span + 1) as f64) as usize)
                    .map(|i| i.min(end))
                    .collect();
                idx.sort_unstable();
                let (s, u, t) = (idx[0], idx[1], idx[2]);
                let lhs = area
                    .over(di, s, t)
                    .unwrap()
                    .sub(&area.over(di, s, u).unwrap())
                    .sub(&area.over(di, u, t).unwrap());
                let inner = path.increment(s - shift, u - shift);
                let outer = path.increment(u, t);
                let rhs = Mat::outer(&inner, &outer);
                let scale = 1.0 + inner.max_norm() * outer.max_norm();
                assert!(lhs.sub(&rhs).max_norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn diagonal_identity_at_zero_delay() {
        let path = fbm_path(0.45, 0, 48, 11);
        let area = build_area(&path, &[]).unwrap();
        let end = path.grid().index_end();
        for s in 0..end {
            for t in (s + 1)..=end {
                let m = area.over(0, s, t).unwrap();
                for a in 0..2 {
                    let inc = path.entry(t, a, 0) - path.entry(s, a, 0);
                    let want = 0.5 * inc * inc;
                    assert!((m.get(a, a) - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn linear_path_closed_form() {
        // x_t = w t: area(s,t)(a,b) = ½ w_a w_b (t−s)² at v = 0.
        let grid = Grid::nonnegative(1.0 / 16.0f64, 16).unwrap();
        let w = [1.5, -0.75];
        let path = GridPath::from_components(&grid, 2, |c, i| w[c] * grid.time(i));
        let area = build_area(&path, &[]).unwrap();
        for (s, t) in [(0usize, 16usize), (3, 9), (5, 6)] {
            let span = grid.span(s, t);
            let m = area.over(0, s, t).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    let want = 0.5 * w[a] * w[b] * span * span;
                    assert!((m.get(a, b) - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn smooth_pair_matches_quadrature() {
        // x = (sin t, cos 2t), v = 0: area(0,1)(1,2) → ∫₀¹ sin u d(cos 2u)
        // = −(4/3) sin³(1), with O(mesh²) error of the composite trapezoid.
        let closed_form = -(4.0 / 3.0) * 1.0f64.sin().powi(3);
        // numeric cross-check of the oracle at a fine mesh
        let fine = 1 << 16;
        let mut quad = 0.0;
        for c in 0..fine {
            let u0 = c as f64 / fine as f64;
            let u1 = (c + 1) as f64 / fine as f64;
            quad += 0.5 * (u0.sin() + u1.sin()) * ((2.0 * u1).cos() - (2.0 * u0).cos());
        }
        assert!((quad - closed_form).abs() < 1e-8);

        for cells in [64usize, 128] {
            let mesh = 1.0 / cells as f64;
            let grid = Grid::nonnegative(mesh, cells).unwrap();
            let path = GridPath::from_components(&grid, 2, |c, i| {
                let t = grid.time(i);
                if c == 0 {
                    t.sin()
                } else {
                    (2.0 * t).cos()
                }
            });
            let area = build_area(&path, &[]).unwrap();
            let got = area.over(0, 0, cells).unwrap().get(0, 1);
            assert!(
                (got - closed_form).abs() <= 5.0 * mesh * mesh,
                "cells {cells}: got {got}, want {closed_form}"
            );
        }
    }

    #[test]
    fn antisymmetry_defect_vanishes_at_zero_delay() {
        // A + Aᵀ = δx ⊗ δx is an algebraic identity of the trapezoid + Chen
        // construction at v = 0; monitored here at roundoff scale.
        let path = fbm_path(0.4, 0, 32, 21);
        let area = build_area(&path, &[]).unwrap();
        for (s, t) in [(0usize, 32usize), (4, 20), (7, 8)] {
            let m = area.over(0, s, t).unwrap();
            let inc = path.increment(s, t);
            let defect = m.add(&m.transpose()).sub(&Mat::outer(&inc, &inc));
            assert!(defect.max_norm() <= 1e-12 * (1.0 + inc.max_norm() * inc.max_norm()));
        }
    }

    #[test]
    fn unaligned_delay_rejected() {
        let path = fbm_path(0.45, 4, 16, 1);
        // shift of 5 cells reaches before the grid start (only 4 available)
        assert!(build_area(&path, &[5]).is_err());
    }

    #[test]
    fn holder_scan_of_area_is_finite() {
        let hurst = 0.45;
        let path = fbm_path(hurst, 8, 64, 13);
        let area = build_area(&path, &[8]).unwrap();
        for di in 0..2 {
            let inc = area.as_increment2(di);
            let scan = crate::increments::holder_seminorm2(&inc, 2.0 * (hurst - 0.05)).unwrap();
            assert!(scan.value.is_finite());
        }
    }

    #[test]
    fn moment_check_rejects_small_trials() {
        let grid = Grid::nonnegative(1.0 / 8.0f64, 8).unwrap();
        let spec = FbmSpec::new(0.5, 2, grid, 1, Method::Cholesky).unwrap();
        assert!(area_moment_check(&spec, 0, (0, 0), &[4], 64).is_err());
    }

    #[test]
    fn csv_and_sidecar() {
        let path = fbm_path(0.5, 4, 8, 2);
        let area = build_area(&path, &[4]).unwrap();
        let mut buf = Vec::new();
        write_area_csv(&area, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,v,a,b,value\n"));
        // 2 delays × 8 cells × 4 entries
        assert_eq!(text.lines().count(), 1 + 2 * 8 * 4);
        let sidecar = area_sidecar(&area);
        assert!(sidecar.index_convention.contains("inner-first"));
        assert_eq!(sidecar.delays, vec![0.0, -0.5]);
    }
}
