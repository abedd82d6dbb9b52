//! Exact-in-law sampling of d-dimensional fractional Brownian motion on a
//! uniform grid over `[−r_k, T]`, plus covariance / scaling / stationarity
//! utilities.
//!
//! Sampling strategy: an auxiliary fBm is drawn on the shifted nonnegative
//! grid `[0, T + r_k]` and re-anchored by stationarity, `B_t := B̃_{t+r_k} −
//! B̃_{r_k}`, so that `B_0 = 0` exactly in every component of every sample.
//! The Cholesky factorisation of the full covariance matrix is the mandatory
//! baseline (exact law, O(n³)); circulant embedding of the increment process
//! is the optional fast path and must agree with it in distribution.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::{self, Complex};
use crate::grid::{Grid, GridPath};
use crate::mat::{cholesky, Mat};
use crate::rng;
use crate::scalar::{real, Scalar};

/// Sampling method for [`FbmSampler`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cholesky,
    Circulant,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Cholesky => write!(f, "cholesky"),
            Method::Circulant => write!(f, "circulant"),
        }
    }
}

/// Specification of an fBm ensemble on a grid.
#[derive(Debug, Clone)]
pub struct FbmSpec<T> {
    pub hurst: T,
    pub dim: usize,
    pub grid: Grid<T>,
    pub seed: u64,
    pub method: Method,
}

impl<T: Scalar> FbmSpec<T> {
    pub fn new(hurst: T, dim: usize, grid: Grid<T>, seed: u64, method: Method) -> Result<Self> {
        let third = T::one() / real::<T>(3.0);
        if !(hurst > third && hurst < T::one()) {
            return Err(Error::domain(format!(
                "hurst parameter must lie in (1/3, 1), got {hurst}"
            )));
        }
        if dim == 0 {
            return Err(Error::domain("driver dimension must be at least 1"));
        }
        Ok(FbmSpec { hurst, dim, grid, seed, method })
    }
}

/// `R_H(t, s) = ½(|s|^{2H} + |t|^{2H} − |t−s|^{2H})`.
pub fn covariance<T: Scalar>(hurst: T, s: T, t: T) -> T {
    let two_h = hurst + hurst;
    let half = real::<T>(0.5);
    half * (s.abs().powf(two_h) + t.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

enum Factor<T> {
    /// Lower Cholesky factor of the covariance of `(B̃_{u_1}, …, B̃_{u_N})`.
    Cholesky(Mat<T>),
    /// Square roots of circulant eigenvalues scaled for the embedding of the
    /// increment process, length `2N`.
    Circulant(Vec<f64>),
}

/// Reusable sampler: the factorisation is built once, trials are drawn from
/// independent counter-based streams keyed by `(seed, trial, component)`.
pub struct FbmSampler<T> {
    spec: FbmSpec<T>,
    factor: Factor<T>,
    /// Max-norm residual `‖LLᵀ − R‖_max` (Cholesky method only).
    chol_residual: Option<T>,
    jittered: bool,
}

impl<T: Scalar> FbmSampler<T> {
    pub fn new(spec: &FbmSpec<T>) -> Result<Self> {
        let steps = spec.grid.n_cells();
        match spec.method {
            Method::Cholesky => {
                let r = covariance_matrix(spec.hurst, spec.grid.mesh(), steps);
                let (l, jittered) = match cholesky(&r) {
                    Ok(l) => (l, false),
                    Err(_) => {
                        let mut rj = r.clone();
                        let jitter = real::<T>(1e-12) * max_diag(&r);
                        for i in 0..steps {
                            rj.add_assign_at(i, i, jitter);
                        }
                        match cholesky(&rj) {
                            Ok(l) => (l, true),
                            Err(minor) => {
                                return Err(Error::NotPositiveDefinite { minor, jittered: true })
                            }
                        }
                    }
                };
                let residual = l.matmul(&l.transpose())?.sub(&r).max_norm();
                Ok(FbmSampler {
                    spec: spec.clone(),
                    factor: Factor::Cholesky(l),
                    chol_residual: Some(residual),
                    jittered,
                })
            }
            Method::Circulant => {
                let lam = circulant_sqrt_eigs(
                    spec.hurst.to_f64().expect("hurst"),
                    spec.grid.mesh().to_f64().expect("mesh"),
                    steps,
                )?;
                Ok(FbmSampler {
                    spec: spec.clone(),
                    factor: Factor::Circulant(lam),
                    chol_residual: None,
                    jittered: false,
                })
            }
        }
    }

    pub fn spec(&self) -> &FbmSpec<T> {
        &self.spec
    }

    pub fn cholesky_residual(&self) -> Option<T> {
        self.chol_residual
    }

    pub fn was_jittered(&self) -> bool {
        self.jittered
    }

    /// One path on the full grid `[−r_k, T]`, anchored to 0 at t = 0.
    pub fn sample(&self, trial: u64) -> GridPath<T> {
        let grid = &self.spec.grid;
        let n_pts = grid.n_points();
        let steps = grid.n_cells();
        let d = self.spec.dim;
        let i0 = grid.index_zero();
        let mut data = vec![T::zero(); n_pts * d];
        for c in 0..d {
            let key = rng::stream_key(self.spec.seed, trial, c as u64);
            let tilde = match &self.factor {
                Factor::Cholesky(l) => {
                    let g: Vec<T> = (0..steps)
                        .map(|i| real::<T>(rng::gaussian(key, i as u64)))
                        .collect();
                    let mut b = Vec::with_capacity(n_pts);
                    b.push(T::zero());
                    for j in 0..steps {
                        let mut acc = T::zero();
                        for (l_idx, gv) in g.iter().enumerate().take(j + 1) {
                            acc = acc + l.get(j, l_idx) * *gv;
                        }
                        b.push(acc);
                    }
                    b
                }
                Factor::Circulant(sqrt_lam) => circulant_path::<T>(sqrt_lam, steps, key),
            };
            let anchor = tilde[i0];
            for (i, &v) in tilde.iter().enumerate() {
                data[i * d + c] = v - anchor;
            }
        }
        GridPath::from_raw(grid.clone(), 0, d, 1, data).expect("finite sample")
    }
}

fn covariance_matrix<T: Scalar>(hurst: T, mesh: T, steps: usize) -> Mat<T> {
    Mat::from_fn(steps, steps, |j, l| {
        let s = mesh * T::from_index((j + 1) as isize);
        let t = mesh * T::from_index((l + 1) as isize);
        covariance(hurst, s, t)
    })
}

fn max_diag<T: Scalar>(m: &Mat<T>) -> T {
    let mut best = T::zero();
    for i in 0..m.rows() {
        if m.get(i, i) > best {
            best = m.get(i, i);
        }
    }
    best
}

/// Autocovariance of fractional Gaussian noise at lag k, step h:
/// `γ(k) = h^{2H} ½(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})`.
fn fgn_autocov(hurst: f64, mesh: f64, k: usize) -> f64 {
    let two_h = 2.0 * hurst;
    let k = k as f64;
    mesh.powf(two_h) * 0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

/// Eigenvalue square roots of the minimal circulant embedding (size 2N) of
/// the fGn covariance, pre-scaled by 1/√(2N) for the synthesis transform.
fn circulant_sqrt_eigs(hurst: f64, mesh: f64, steps: usize) -> Result<Vec<f64>> {
    let m = 2 * steps;
    let mut row = vec![Complex::ZERO; m];
    for (k, slot) in row.iter_mut().enumerate().take(steps + 1) {
        *slot = Complex::new(fgn_autocov(hurst, mesh, k), 0.0);
    }
    for k in 1..steps {
        row[m - k] = row[k];
    }
    fft::fft(&mut row);
    let max_eig = row.iter().fold(0.0f64, |a, c| a.max(c.re));
    let mut out = Vec::with_capacity(m);
    for (idx, c) in row.iter().enumerate() {
        if c.re < -1e-8 * max_eig {
            return Err(Error::NotPositiveDefinite { minor: idx, jittered: false });
        }
        out.push((c.re.max(0.0) / m as f64).sqrt());
    }
    Ok(out)
}

/// Davies–Harte synthesis. Deviate order within the stream: index 0 drives
/// the k = 0 mode, index 1 the k = N mode, and indices (2k, 2k+1) the real
/// and imaginary parts of mode k for 0 < k < N.
fn circulant_path<T: Scalar>(sqrt_lam: &[f64], steps: usize, key: u64) -> Vec<T> {
    let m = 2 * steps;
    let mut w = vec![Complex::ZERO; m];
    w[0] = Complex::new(sqrt_lam[0] * rng::gaussian(key, 0), 0.0);
    w[steps] = Complex::new(sqrt_lam[steps] * rng::gaussian(key, 1), 0.0);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for k in 1..steps {
        let u = rng::gaussian(key, 2 * k as u64);
        let v = rng::gaussian(key, 2 * k as u64 + 1);
        let re = sqrt_lam[k] * u * inv_sqrt2;
        let im = sqrt_lam[k] * v * inv_sqrt2;
        w[k] = Complex::new(re, im);
        w[m - k] = Complex::new(re, -im);
    }
    fft::fft(&mut w);
    let mut path = Vec::with_capacity(steps + 1);
    let mut acc = 0.0f64;
    path.push(T::zero());
    for item in w.iter().take(steps) {
        acc += item.re;
        path.push(real::<T>(acc));
    }
    path
}

/// Deterministic single path: trial 0 of a fresh sampler.
pub fn sample_fbm<T: Scalar>(spec: &FbmSpec<T>) -> Result<GridPath<T>> {
    Ok(FbmSampler::new(spec)?.sample(0))
}

/// Report of the self-similarity check against Eq-level scaling
/// `c^H B_{·/c} ~ fBm`.
#[derive(Debug, Clone, Serialize)]
pub struct RescaleReport {
    pub c: usize,
    pub trials: u64,
    pub times_compared: usize,
    /// Max over compared times of |var_rescaled − var_fresh| / SE.
    pub max_standardized: f64,
}

/// Two-sample variance-profile comparison between `c^H B_{·/c}` and a fresh
/// fBm. `c` must be a power of two so rescaled times stay on the grid;
/// `c = 1` compares the ensemble with itself and reports 0.
pub fn rescale_check<T: Scalar>(spec: &FbmSpec<T>, c: usize, trials: u64) -> Result<RescaleReport> {
    if c == 0 || !c.is_power_of_two() {
        return Err(Error::domain(format!(
            "rescale factor must be a positive power of two, got {c}"
        )));
    }
    let cells_after = spec.grid.index_end() - spec.grid.index_zero();
    let m_max = cells_after / c;
    if m_max == 0 {
        return Err(Error::domain("grid too short for requested rescale factor"));
    }
    let sampler = FbmSampler::new(spec)?;
    let i0 = spec.grid.index_zero();
    let hurst = spec.hurst.to_f64().expect("hurst");
    let ch = (c as f64).powf(hurst);

    // Rescaled ensemble: Y_{m·c·h} = c^H B_{m·h}.
    let mut var_rescaled = vec![0.0f64; m_max];
    for trial in 0..trials {
        let path = sampler.sample(trial);
        for m in 1..=m_max {
            let v = ch * path.entry(i0 + m, 0, 0).to_f64().expect("entry");
            var_rescaled[m - 1] += v * v;
        }
    }
    let fresh_spec = FbmSpec {
        seed: spec.seed ^ 0x5851_F42D_4C95_7F2D,
        ..spec.clone()
    };
    let mut var_fresh = vec![0.0f64; m_max];
    if c == 1 {
        var_fresh.copy_from_slice(&var_rescaled);
    } else {
        let fresh = FbmSampler::new(&fresh_spec)?;
        for trial in 0..trials {
            let path = fresh.sample(trial);
            for m in 1..=m_max {
                let v = path.entry(i0 + m * c, 0, 0).to_f64().expect("entry");
                var_fresh[m - 1] += v * v;
            }
        }
    }

    let mesh = spec.grid.mesh().to_f64().expect("mesh");
    let mut max_std = 0.0f64;
    for m in 1..=m_max {
        let v1 = var_rescaled[m - 1] / trials as f64;
        let v2 = var_fresh[m - 1] / trials as f64;
        let sigma2 = ((m * c) as f64 * mesh).powf(2.0 * hurst);
        // Var of the sample variance of N(0, σ²) over n trials is 2σ⁴/n.
        let se = (4.0 * sigma2 * sigma2 / trials as f64).sqrt();
        let z = (v1 - v2).abs() / se;
        if z > max_std {
            max_std = z;
        }
    }
    Ok(RescaleReport { c, trials, times_compared: m_max, max_standardized: max_std })
}

/// The driving data a rough integral needs: the path and its delayed areas.
#[derive(Clone)]
pub struct DriverBundle<T> {
    pub path: GridPath<T>,
    pub fbm_spec: Option<FbmSpec<T>>,
    pub areas: Arc<crate::levy::DelayedArea<T>>,
}

impl<T: Scalar> DriverBundle<T> {
    /// Bundle an fBm sample (trial of `spec`) with its delayed areas.
    /// `delay_cells` are the positive delays in grid cells; the zero delay is
    /// always included.
    pub fn from_fbm(spec: &FbmSpec<T>, trial: u64, delay_cells: &[usize]) -> Result<Self> {
        let path = FbmSampler::new(spec)?.sample(trial);
        let i0 = spec.grid.index_zero();
        for (i, &v) in path.at(i0).iter().enumerate() {
            if v != T::zero() {
                return Err(Error::domain(format!("fBm sample not anchored at 0 (component {i})")));
            }
        }
        let areas = crate::levy::build_area(&path, delay_cells)?;
        Ok(DriverBundle { path, fbm_spec: Some(spec.clone()), areas: Arc::new(areas) })
    }

    /// Bundle an arbitrary grid path (smooth test drivers) with its areas.
    pub fn from_path(path: GridPath<T>, delay_cells: &[usize]) -> Result<Self> {
        let areas = crate::levy::build_area(&path, delay_cells)?;
        Ok(DriverBundle { path, fbm_spec: None, areas: Arc::new(areas) })
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }
}

/// Sidecar metadata emitted beside every exported path.
#[derive(Debug, Clone, Serialize)]
pub struct PathSidecar {
    pub hurst: f64,
    pub dim: usize,
    pub mesh: f64,
    pub seed: u64,
    pub method: String,
}

/// CSV export: header `t,comp_1..comp_d`, one row per grid point, 17
/// significant digits.
pub fn write_path_csv<T: Scalar>(path: &GridPath<T>, out: &mut dyn Write) -> Result<()> {
    write!(out, "t")?;
    for c in 1..=path.dim() {
        write!(out, ",comp_{c}")?;
    }
    writeln!(out)?;
    for i in path.start()..=path.end() {
        write!(out, "{:.16e}", path.grid().time(i).to_f64().expect("time"))?;
        for c in 0..path.dim() {
            write!(out, ",{:.16e}", path.entry(i, c, 0).to_f64().expect("value"))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn path_sidecar<T: Scalar>(spec: &FbmSpec<T>) -> PathSidecar {
    PathSidecar {
        hurst: spec.hurst.to_f64().expect("hurst"),
        dim: spec.dim,
        mesh: spec.grid.mesh().to_f64().expect("mesh"),
        seed: spec.seed,
        method: spec.method.to_string(),
    }
}
