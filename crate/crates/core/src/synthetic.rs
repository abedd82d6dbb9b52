//! Deterministic synthetic inputs for verification suites and tests: smooth
//! drivers, seeded smooth paths, controlled paths built from a driver, and
//! bump perturbations for the continuity experiments.

use crate::controlled::Ccp;
use crate::grid::{Grid, GridPath};
use crate::mat::Mat;
use crate::rng;
use crate::scalar::{real, Scalar};

/// The smooth two-dimensional test driver `(sin t, cos 2t)`.
pub fn smooth_driver_sincos<T: Scalar>(grid: &Grid<T>) -> GridPath<T> {
    GridPath::from_components(grid, 2, |c, i| {
        let t = grid.time(i).to_f64().expect("time");
        if c == 0 {
            real::<T>(t.sin())
        } else {
            real::<T>((2.0 * t).cos())
        }
    })
}

/// Seeded smooth matrix path: each entry a short sum of sines with
/// stream-keyed coefficients, scaled by `amplitude`.
pub fn seeded_smooth_path<T: Scalar>(
    grid: &Grid<T>,
    rows: usize,
    cols: usize,
    seed: u64,
    amplitude: f64,
) -> GridPath<T> {
    GridPath::from_fn(grid, rows, cols, |i| {
        let t = grid.time(i).to_f64().expect("time");
        Mat::from_fn(rows, cols, |r, c| {
            let key = rng::stream_key(seed, r as u64, c as u64);
            let mut v = 0.0;
            for j in 0..3u64 {
                let a = 2.0 * rng::uniform(key, 3 * j) - 1.0;
                let omega = 1.0 + 5.0 * rng::uniform(key, 3 * j + 1);
                let phase = std::f64::consts::TAU * rng::uniform(key, 3 * j + 2);
                v += a * (omega * t + phase).sin() / (j + 1) as f64;
            }
            real::<T>(amplitude * v)
        })
    })
}

/// Smooth bump used by the Itô-map sweeps: `ε · sin(π (t − t_min) / range)`
/// per component, with component-dependent phase so components differ.
pub fn bump_path<T: Scalar>(grid: &Grid<T>, dim: usize, eps: f64) -> GridPath<T> {
    let t_min = grid.t_min().to_f64().expect("t_min");
    let range = grid.t_max().to_f64().expect("t_max") - t_min;
    GridPath::from_components(grid, dim, |c, i| {
        let t = grid.time(i).to_f64().expect("time");
        let x = (t - t_min) / range;
        real::<T>(eps * (std::f64::consts::PI * x * (1.0 + 0.5 * c as f64)).sin())
    })
}

/// A controlled path over `[lo, hi]` built from a driver: the density is a
/// seeded smooth n×d path, the value accumulates `ζ_c (δx)_c` over cells plus
/// a seeded smooth drift, so the derived remainder is genuinely 2κ-regular.
pub fn random_ccp<T: Scalar>(
    driver: &GridPath<T>,
    lo: usize,
    hi: usize,
    n: usize,
    seed: u64,
) -> Ccp<T> {
    let grid = driver.grid();
    let d = driver.dim();
    let density = seeded_smooth_path(grid, n, d, seed ^ 0xD5, 0.8)
        .restrict(lo, hi)
        .expect("span inside grid");
    let drift = seeded_smooth_path(grid, n, 1, seed ^ 0x1F, 0.3);
    let mut values = Vec::with_capacity((hi - lo + 1) * n);
    let mut current = Mat::from_fn(n, 1, |r, _| {
        real::<T>(2.0 * rng::uniform(rng::stream_key(seed ^ 0xA0, r as u64, 0), 0) - 1.0)
    });
    values.extend_from_slice(current.as_slice());
    for c in lo..hi {
        let step = density
            .value(c)
            .matmul(&driver.increment(c, c + 1))
            .expect("density times driver increment")
            .add(&drift.increment(c, c + 1));
        current = current.add(&step);
        values.extend_from_slice(current.as_slice());
    }
    let value = GridPath::from_raw(grid.clone(), lo, n, 1, values).expect("finite values");
    Ccp::new(value, density, driver.clone()).expect("consistent spans")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_driver_components() {
        let g = Grid::nonnegative(0.25f64, 4).unwrap();
        let p = smooth_driver_sincos(&g);
        assert_eq!(p.entry(0, 0, 0), 0.0);
        assert_eq!(p.entry(0, 1, 0), 1.0);
        assert!((p.entry(4, 0, 0) - 1.0f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn random_ccp_is_reproducible() {
        let g = Grid::nonnegative(1.0 / 32.0f64, 32).unwrap();
        let x = smooth_driver_sincos(&g);
        let a = random_ccp(&x, 0, 32, 2, 9);
        let b = random_ccp(&x, 0, 32, 2, 9);
        for i in 0..=32 {
            assert_eq!(a.value().entry(i, 0, 0), b.value().entry(i, 0, 0));
        }
    }
}
