//! k-increments on a grid, the coboundary operator δ, Hölder (semi-)norms,
//! and the δ product rules.
//!
//! A 1-increment is a function of two grid times vanishing on the diagonal;
//! a 2-increment is a function of three grid times vanishing when adjacent
//! arguments coincide. Both are represented as evaluation rules (closures
//! over shared path data), never as materialised O(n²)/O(n³) tables; the
//! norm scans are the only global sweeps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridPath};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::PAIR_CAP;

type Eval2<T> = Arc<dyn Fn(usize, usize) -> Mat<T> + Send + Sync>;
type Eval3<T> = Arc<dyn Fn(usize, usize, usize) -> Mat<T> + Send + Sync>;

/// 1-increment: grid pair `(s, t)` with `s ≤ t` to a matrix value.
#[derive(Clone)]
pub struct Increment2<T> {
    grid: Grid<T>,
    lo: usize,
    hi: usize,
    rows: usize,
    cols: usize,
    eval: Eval2<T>,
}

/// 2-increment: grid triple `(s, u, t)` with `s ≤ u ≤ t` to a matrix value.
#[derive(Clone)]
pub struct Increment3<T> {
    grid: Grid<T>,
    lo: usize,
    hi: usize,
    rows: usize,
    cols: usize,
    eval: Eval3<T>,
}

impl<T: Scalar> Increment2<T> {
    pub fn new(
        grid: Grid<T>,
        lo: usize,
        hi: usize,
        rows: usize,
        cols: usize,
        eval: impl Fn(usize, usize) -> Mat<T> + Send + Sync + 'static,
    ) -> Self {
        assert!(lo < hi && hi < grid.n_points(), "invalid increment domain");
        Increment2 { grid, lo, hi, rows, cols, eval: Arc::new(eval) }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Index domain `[lo, hi]`.
    #[inline]
    pub fn domain(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, s: usize, t: usize) -> Mat<T> {
        debug_assert!(self.lo <= s && s <= t && t <= self.hi, "pair outside domain");
        (self.eval)(s, t)
    }

    /// Max over the scan set of `|h_st|`.
    pub fn sup_norm(&self) -> T {
        let mut m = T::zero();
        for (s, t) in pair_scan(self.lo, self.hi).0 {
            let v = self.at(s, t).max_norm();
            if v > m {
                m = v;
            }
        }
        m
    }

    /// Pointwise difference of two increments over the common domain.
    pub fn sub(&self, other: &Increment2<T>) -> Result<Increment2<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape("increment difference: shapes differ"));
        }
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo >= hi {
            return Err(Error::domain("increment difference: disjoint domains"));
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Increment2::new(self.grid.clone(), lo, hi, self.rows, self.cols, move |s, t| {
            a.at(s, t).sub(&b.at(s, t))
        }))
    }
}

impl<T: Scalar> Increment3<T> {
    pub fn new(
        grid: Grid<T>,
        lo: usize,
        hi: usize,
        rows: usize,
        cols: usize,
        eval: impl Fn(usize, usize, usize) -> Mat<T> + Send + Sync + 'static,
    ) -> Self {
        assert!(lo < hi && hi < grid.n_points(), "invalid increment domain");
        Increment3 { grid, lo, hi, rows, cols, eval: Arc::new(eval) }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn domain(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, s: usize, u: usize, t: usize) -> Mat<T> {
        debug_assert!(self.lo <= s && s <= u && u <= t && t <= self.hi, "triple outside domain");
        (self.eval)(s, u, t)
    }

    /// `(δh)_{suvt} = h_{uvt} − h_{svt} + h_{sut} − h_{suv}` at one 4-tuple —
    /// the cocycle residual used to test membership in ker δ.
    pub fn delta_at(&self, s: usize, u: usize, v: usize, t: usize) -> Mat<T> {
        self.at(u, v, t)
            .sub(&self.at(s, v, t))
            .add(&self.at(s, u, t))
            .sub(&self.at(s, u, v))
    }
}

/// `(δg)_{st} = g_t − g_s` for a path `g`.
pub fn delta1<T: Scalar>(g: &GridPath<T>) -> Increment2<T> {
    let p = g.clone();
    Increment2::new(
        g.grid().clone(),
        g.start(),
        g.end(),
        g.rows(),
        g.cols(),
        move |s, t| p.increment(s, t),
    )
}

/// `(δh)_{sut} = h_{st} − h_{su} − h_{ut}` for a 1-increment `h`.
pub fn delta2<T: Scalar>(h: &Increment2<T>) -> Increment3<T> {
    let (lo, hi) = h.domain();
    let (rows, cols) = h.shape();
    let h = h.clone();
    Increment3::new(h.grid().clone(), lo, hi, rows, cols, move |s, u, t| {
        h.at(s, t).sub(&h.at(s, u)).sub(&h.at(u, t))
    })
}

/// Result of a Hölder norm scan.
#[derive(Debug, Clone, Copy)]
pub struct NormScan<T> {
    pub value: T,
    /// True when every pair/triple of the domain was evaluated.
    pub exact: bool,
    pub evaluated: usize,
}

/// Scan set for pairs in `[lo, hi]`: exhaustive when the pair count fits in
/// [`PAIR_CAP`], otherwise all pairs with gap ≤ 64 cells plus the pairs of a
/// strided coarse index lattice.
fn pair_scan(lo: usize, hi: usize) -> (Vec<(usize, usize)>, bool) {
    let n = hi - lo + 1;
    let total = n * (n - 1) / 2;
    if total <= PAIR_CAP {
        let mut v = Vec::with_capacity(total);
        for s in lo..hi {
            for t in (s + 1)..=hi {
                v.push((s, t));
            }
        }
        return (v, true);
    }
    let mut v = Vec::new();
    for s in lo..hi {
        let top = hi.min(s + 64);
        for t in (s + 1)..=top {
            v.push((s, t));
        }
    }
    let stride = coarse_stride(n, PAIR_CAP / 2);
    let lattice: Vec<usize> = (lo..=hi).step_by(stride).chain(std::iter::once(hi)).collect();
    for (a, &s) in lattice.iter().enumerate() {
        for &t in &lattice[a + 1..] {
            if t > s {
                v.push((s, t));
            }
        }
    }
    (v, false)
}

fn coarse_stride(n: usize, budget: usize) -> usize {
    let mut stride = 1usize;
    while (n / stride) * (n / stride) / 2 > budget {
        stride += 1;
    }
    stride.max(1)
}

/// `‖h‖_µ = sup over scanned pairs of |h_st| / |t−s|^µ` (entrywise max norm).
pub fn holder_seminorm2<T: Scalar>(h: &Increment2<T>, mu: T) -> Result<NormScan<T>> {
    if !(mu > T::zero()) {
        return Err(Error::domain("holder exponent must be positive"));
    }
    let (lo, hi) = h.domain();
    let gap_pows = gap_powers(h.grid(), hi - lo, mu);
    let (pairs, exact) = pair_scan(lo, hi);
    let mut best = T::zero();
    for &(s, t) in &pairs {
        let v = h.at(s, t).max_norm() / gap_pows[t - s];
        if v > best {
            best = v;
        }
    }
    Ok(NormScan { value: best, exact, evaluated: pairs.len() })
}

/// Split Hölder norm of a 2-increment:
/// `‖h‖_{γ,ρ} = sup over scanned triples s<u<t of |h_sut| / (|u−s|^γ |t−u|^ρ)`.
///
/// This is the computable upper-bound surrogate for the
/// infimum-over-decompositions norm; all C₃ regularity checks in this crate
/// are stated against it.
pub fn holder_norm3_split<T: Scalar>(h: &Increment3<T>, gamma: T, rho: T) -> Result<NormScan<T>> {
    if !(gamma > T::zero()) || !(rho > T::zero()) {
        return Err(Error::domain("holder exponents must be positive"));
    }
    let (lo, hi) = h.domain();
    let n = hi - lo + 1;
    let left_pows = gap_powers(h.grid(), n - 1, gamma);
    let right_pows = gap_powers(h.grid(), n - 1, rho);
    let (triples, exact) = triple_scan(lo, hi);
    let mut best = T::zero();
    for &(s, u, t) in &triples {
        let v = h.at(s, u, t).max_norm() / (left_pows[u - s] * right_pows[t - u]);
        if v > best {
            best = v;
        }
    }
    Ok(NormScan { value: best, exact, evaluated: triples.len() })
}

fn triple_scan(lo: usize, hi: usize) -> (Vec<(usize, usize, usize)>, bool) {
    let n = hi - lo + 1;
    let total = n * (n - 1) * (n - 2) / 6;
    if total <= PAIR_CAP {
        let mut v = Vec::with_capacity(total);
        for s in lo..hi {
            for u in (s + 1)..hi {
                for t in (u + 1)..=hi {
                    v.push((s, u, t));
                }
            }
        }
        return (v, true);
    }
    let mut v = Vec::new();
    for s in lo..hi {
        let top = hi.min(s + 64);
        for u in (s + 1)..top {
            for t in (u + 1)..=top {
                v.push((s, u, t));
            }
        }
    }
    let mut stride = 1usize;
    while {
        let m = n / stride;
        m * m * m / 6 > PAIR_CAP / 2
    } {
        stride += 1;
    }
    let lattice: Vec<usize> = (lo..=hi).step_by(stride).chain(std::iter::once(hi)).collect();
    for (a, &s) in lattice.iter().enumerate() {
        for (b, &u) in lattice.iter().enumerate().skip(a + 1) {
            for &t in &lattice[b + 1..] {
                if s < u && u < t {
                    v.push((s, u, t));
                }
            }
        }
    }
    (v, false)
}

fn gap_powers<T: Scalar>(grid: &Grid<T>, max_gap: usize, mu: T) -> Vec<T> {
    let mut pows = Vec::with_capacity(max_gap + 1);
    pows.push(T::one()); // gap 0 never divides anything
    for g in 1..=max_gap {
        pows.push((grid.mesh() * T::from_index(g as isize)).powf(mu));
    }
    pows
}

/// Arguments and results for the δ product convention
/// `(gh)_{t1..t_{m+n−1}} = g_{t1..t_n} h_{t_n..t_{m+n−1}}`.
#[derive(Clone)]
pub enum IncArg<T> {
    Path(GridPath<T>),
    Two(Increment2<T>),
}

#[derive(Clone)]
pub enum IncOut<T> {
    Path(GridPath<T>),
    Two(Increment2<T>),
    Three(Increment3<T>),
}

/// Product of two paths or increments under the convention above; the result
/// has arity `n + m − 1`.
pub fn product_increments<T: Scalar>(g: &IncArg<T>, h: &IncArg<T>) -> Result<IncOut<T>> {
    match (g, h) {
        (IncArg::Path(g), IncArg::Path(h)) => Ok(IncOut::Path(product_path_path(g, h)?)),
        (IncArg::Path(g), IncArg::Two(h)) => Ok(IncOut::Two(product_path_inc2(g, h)?)),
        (IncArg::Two(g), IncArg::Path(h)) => Ok(IncOut::Two(product_inc2_path(g, h)?)),
        (IncArg::Two(g), IncArg::Two(h)) => Ok(IncOut::Three(product_inc2_inc2(g, h)?)),
    }
}

/// `(gh)_t = g_t h_t`.
pub fn product_path_path<T: Scalar>(g: &GridPath<T>, h: &GridPath<T>) -> Result<GridPath<T>> {
    if g.cols() != h.rows() {
        return Err(Error::shape("path product: inner dimensions differ"));
    }
    let lo = g.start().max(h.start());
    let hi = g.end().min(h.end());
    if lo > hi {
        return Err(Error::domain("path product: disjoint segments"));
    }
    let (rows, cols) = (g.rows(), h.cols());
    Ok(GridPath::segment_from_fn(g.grid(), lo, hi - lo + 1, rows, cols, |i| {
        g.value(i).matmul(&h.value(i)).expect("checked shapes")
    }))
}

/// `(gh)_{st} = g_s h_{st}`.
pub fn product_path_inc2<T: Scalar>(g: &GridPath<T>, h: &Increment2<T>) -> Result<Increment2<T>> {
    if g.cols() != h.shape().0 {
        return Err(Error::shape("path × increment: inner dimensions differ"));
    }
    let lo = g.start().max(h.domain().0);
    let hi = g.end().min(h.domain().1);
    if lo >= hi {
        return Err(Error::domain("path × increment: domain too small"));
    }
    let (gp, hp) = (g.clone(), h.clone());
    Ok(Increment2::new(g.grid().clone(), lo, hi, g.rows(), h.shape().1, move |s, t| {
        gp.value(s).matmul(&hp.at(s, t)).expect("checked shapes")
    }))
}

/// `(gh)_{st} = g_{st} h_t`.
pub fn product_inc2_path<T: Scalar>(g: &Increment2<T>, h: &GridPath<T>) -> Result<Increment2<T>> {
    if g.shape().1 != h.rows() {
        return Err(Error::shape("increment × path: inner dimensions differ"));
    }
    let lo = g.domain().0.max(h.start());
    let hi = g.domain().1.min(h.end());
    if lo >= hi {
        return Err(Error::domain("increment × path: domain too small"));
    }
    let (gp, hp) = (g.clone(), h.clone());
    Ok(Increment2::new(h.grid().clone(), lo, hi, g.shape().0, h.cols(), move |s, t| {
        gp.at(s, t).matmul(&hp.value(t)).expect("checked shapes")
    }))
}

/// `(gh)_{sut} = g_{su} h_{ut}`.
pub fn product_inc2_inc2<T: Scalar>(g: &Increment2<T>, h: &Increment2<T>) -> Result<Increment3<T>> {
    if g.shape().1 != h.shape().0 {
        return Err(Error::shape("increment × increment: inner dimensions differ"));
    }
    let lo = g.domain().0.max(h.domain().0);
    let hi = g.domain().1.min(h.domain().1);
    if lo >= hi {
        return Err(Error::domain("increment × increment: domain too small"));
    }
    let (gp, hp) = (g.clone(), h.clone());
    Ok(Increment3::new(g.grid().clone(), lo, hi, g.shape().0, h.shape().1, move |s, u, t| {
        gp.at(s, u).matmul(&hp.at(u, t)).expect("checked shapes")
    }))
}
