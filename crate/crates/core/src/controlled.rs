//! Classical and delayed controlled paths, their norms, and the composition
//! map T_σ.
//!
//! A classical controlled path (CCP) is a pair `(z, ζ)` of an n-vector value
//! path and an n×d density path; its remainder `ρ_{st} = (δz)_{st} −
//! ζ_s (δx)_{st}` is never stored, always derived, so the decomposition is
//! consistent by construction. A delayed controlled path (DCP) carries one
//! density per delay; its value may be matrix-valued (the output of T_σ is
//! n×d), in which case the density for one delay is stored as an
//! (n·w)×d path whose row block `l·w..(l+1)·w` belongs to value row l.
//!
//! Density layout (load-bearing): densities are value-component major,
//! `ζ[a][b]` multiplying the b-th component of the (possibly delayed) driver
//! increment in the decomposition of value component a. The rough-integral
//! pairing against an area therefore contracts the density's driver index
//! with the area's FIRST (delayed-inner) index and the value column with the
//! SECOND (outer) index. A finite-difference chain-rule oracle in the tests
//! pins this contraction before anything builds on it.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridPath;
use crate::increments::{holder_seminorm2, Increment2};
use crate::mat::Mat;
use crate::scalar::{real, Scalar};

/// Declared sup bounds of σ and its first two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct SigmaBounds<T> {
    pub sup_value: T,
    pub sup_d1: T,
    pub sup_d2: T,
}

/// Jacobian of σ with respect to one delay slot: entries
/// `∂σ_{l,a} / ∂x_{m, slot}` stored as `[l][a][m]`.
#[derive(Debug, Clone)]
pub struct SigmaJac<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> SigmaJac<T> {
    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * d * n);
        for l in 0..n {
            for a in 0..d {
                for m in 0..n {
                    data.push(f(l, a, m));
                }
            }
        }
        SigmaJac { n, d, data }
    }

    #[inline]
    pub fn get(&self, l: usize, a: usize, m: usize) -> T {
        self.data[(l * self.d + a) * self.n + m]
    }

    pub fn max_norm(&self) -> T {
        let mut best = T::zero();
        for &v in &self.data {
            if v.abs() > best {
                best = v.abs();
            }
        }
        best
    }

    /// Contract against an n-vector remainder: `out[l][a] = Σ_m J[l][a][m] ρ[m]`.
    pub fn apply_vector(&self, rho: &Mat<T>) -> Mat<T> {
        Mat::from_fn(self.n, self.d, |l, a| {
            let mut acc = T::zero();
            for m in 0..self.n {
                acc = acc + self.get(l, a, m) * rho.get(m, 0);
            }
            acc
        })
    }

    /// Chain-rule contraction against an inner n×d density:
    /// `out[(l·d + a)][b] = Σ_m J[l][a][m] ζ[m][b]`.
    pub fn contract_density(&self, inner: &Mat<T>) -> Mat<T> {
        let d = self.d;
        Mat::from_fn(self.n * d, d, |row, b| {
            let (l, a) = (row / d, row % d);
            let mut acc = T::zero();
            for m in 0..self.n {
                acc = acc + self.get(l, a, m) * inner.get(m, b);
            }
            acc
        })
    }
}

type SigmaEval<T> = Arc<dyn Fn(&[T]) -> Mat<T> + Send + Sync>;
type SigmaJacFn<T> = Arc<dyn Fn(&[T], usize) -> SigmaJac<T> + Send + Sync>;

/// σ : ℝ^{n×(k+1)} → ℝ^{n×d} with its per-slot Jacobians.
///
/// The state tuple is slot-major: `u[slot·n + m]`, slot 0 the current state,
/// slot i ≥ 1 the state delayed by r_i.
#[derive(Clone)]
pub struct SigmaField<T> {
    name: String,
    n: usize,
    k: usize,
    d: usize,
    eval: SigmaEval<T>,
    jac: SigmaJacFn<T>,
    bounds: SigmaBounds<T>,
}

impl<T: Scalar> SigmaField<T> {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        k: usize,
        d: usize,
        bounds: SigmaBounds<T>,
        eval: impl Fn(&[T]) -> Mat<T> + Send + Sync + 'static,
        jac: impl Fn(&[T], usize) -> SigmaJac<T> + Send + Sync + 'static,
    ) -> Self {
        SigmaField {
            name: name.into(),
            n,
            k,
            d,
            eval: Arc::new(eval),
            jac: Arc::new(jac),
            bounds,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn delay_slots(&self) -> usize {
        self.k
    }

    pub fn driver_dim(&self) -> usize {
        self.d
    }

    pub fn bounds(&self) -> SigmaBounds<T> {
        self.bounds
    }

    pub fn eval(&self, u: &[T]) -> Mat<T> {
        debug_assert_eq!(u.len(), self.n * (self.k + 1));
        (self.eval)(u)
    }

    pub fn jac(&self, u: &[T], slot: usize) -> SigmaJac<T> {
        debug_assert!(slot <= self.k);
        (self.jac)(u, slot)
    }

    /// Central-difference validation of every Jacobian entry at seeded
    /// points; returns the worst absolute deviation.
    pub fn validate_jacobian(&self, seed: u64, points: usize) -> Result<T> {
        let dim = self.n * (self.k + 1);
        let eps = real::<T>(6e-6);
        let tol = real::<T>(1e-6);
        let mut worst = T::zero();
        for p in 0..points as u64 {
            let key = crate::rng::stream_key(seed, p, 0);
            let u: Vec<T> = (0..dim)
                .map(|j| real::<T>(2.0 * crate::rng::uniform(key, j as u64) - 1.0))
                .collect();
            for slot in 0..=self.k {
                let jac = self.jac(&u, slot);
                let scale = T::one() + jac.max_norm();
                for m in 0..self.n {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[slot * self.n + m] = up[slot * self.n + m] + eps;
                    dn[slot * self.n + m] = dn[slot * self.n + m] - eps;
                    let fd = self.eval(&up).sub(&self.eval(&dn)).scale(T::one() / (eps + eps));
                    for l in 0..self.n {
                        for a in 0..self.d {
                            let diff = (fd.get(l, a) - jac.get(l, a, m)).abs();
                            if diff > worst {
                                worst = diff;
                            }
                            if diff > tol * scale {
                                return Err(Error::domain(format!(
                                    "sigma '{}': jacobian mismatch at slot {slot}, entry ({l},{a},{m}): fd {} vs jac {}",
                                    self.name,
                                    fd.get(l, a),
                                    jac.get(l, a, m)
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// The named σ models available to the CLI and the test suites.
pub const SIGMA_MODELS: [&str; 4] = ["constant", "linear", "sine", "bilinear-noncommuting"];

/// Deterministic coefficient patterns keep the registry free of hidden state.
fn coeff(tag: f64, l: usize, a: usize, m: usize) -> f64 {
    (tag + 0.9 * (l + 1) as f64 + 1.3 * (a + 1) as f64 + 1.7 * (m + 1) as f64).cos() * 0.5
}

/// Look up a registered σ model by name for the given dimensions.
pub fn sigma_by_name<T: Scalar>(name: &str, n: usize, d: usize, k: usize) -> Result<SigmaField<T>> {
    if n == 0 || d == 0 {
        return Err(Error::domain("state and driver dimensions must be positive"));
    }
    match name {
        "constant" => {
            let c = Mat::<T>::from_fn(n, d, |l, a| real::<T>(0.3 + coeff(0.0, l, a, 0)));
            let sup = c.max_norm();
            let cc = c.clone();
            Ok(SigmaField::new(
                name,
                n,
                k,
                d,
                SigmaBounds { sup_value: sup, sup_d1: T::zero(), sup_d2: T::zero() },
                move |_| cc.clone(),
                move |_, _| SigmaJac::from_fn(n, d, |_, _, _| T::zero()),
            ))
        }
        "linear" => {
            // σ[l][a] = c₀[l][a] + Σ_slots Σ_m A_slot[l][a][m] u[slot·n + m]
            let offsets = Mat::<T>::from_fn(n, d, |l, a| real::<T>(0.2 * coeff(5.0, l, a, 0)));
            let slope = move |slot: usize, l: usize, a: usize, m: usize| {
                real::<T>(coeff(2.3 * (slot + 1) as f64, l, a, m) / (k + 1) as f64)
            };
            let off = offsets.clone();
            let eval = move |u: &[T]| {
                Mat::from_fn(n, d, |l, a| {
                    let mut acc = off.get(l, a);
                    for slot in 0..=k {
                        for m in 0..n {
                            acc = acc + slope(slot, l, a, m) * u[slot * n + m];
                        }
                    }
                    acc
                })
            };
            let jac = move |_u: &[T], slot: usize| SigmaJac::from_fn(n, d, |l, a, m| slope(slot, l, a, m));
            Ok(SigmaField::new(
                name,
                n,
                k,
                d,
                SigmaBounds { sup_value: T::infinity(), sup_d1: real::<T>(0.5), sup_d2: T::zero() },
                eval,
                jac,
            ))
        }
        "sine" => {
            // σ[l][a] = 0.9 sin(Σ_slots w_slot u[slot·n + l] + φ(l, a)),
            // w_slot = 0.8 / (1 + slot).
            let amp = 0.9;
            let arg = move |u: &[T], l: usize, a: usize| -> f64 {
                let mut s = 0.7 * (l + 1) as f64 + 1.1 * (a + 1) as f64;
                for slot in 0..=k {
                    let w = 0.8 / (1 + slot) as f64;
                    s += w * u[slot * n + l].to_f64().expect("state");
                }
                s
            };
            let eval = move |u: &[T]| Mat::from_fn(n, d, |l, a| real::<T>(amp * arg(u, l, a).sin()));
            let jac = move |u: &[T], slot: usize| {
                let w = 0.8 / (1 + slot) as f64;
                SigmaJac::from_fn(n, d, |l, a, m| {
                    if m == l {
                        real::<T>(amp * w * arg(u, l, a).cos())
                    } else {
                        T::zero()
                    }
                })
            };
            Ok(SigmaField::new(
                name,
                n,
                k,
                d,
                SigmaBounds {
                    sup_value: real::<T>(amp),
                    sup_d1: real::<T>(amp * 0.8),
                    sup_d2: real::<T>(amp * 0.64),
                },
                eval,
                jac,
            ))
        }
        "bilinear-noncommuting" => {
            // σ[l][a] = c₀[l][a] + q[l][a] · u[l] · u[n + (a mod n)] —
            // current state times first-delay state with a deliberately
            // asymmetric weight q and a strongly non-symmetric offset, so
            // transposing the area pairing is visible in the solution.
            if k < 1 {
                return Err(Error::domain("bilinear-noncommuting needs at least one delay"));
            }
            let offsets = Mat::<T>::from_fn(n, d, |l, a| {
                real::<T>(0.4 + 0.3 * (2.1 * (l + 1) as f64 + 4.3 * (a + 1) as f64).sin())
            });
            let weight = move |l: usize, a: usize| {
                real::<T>(1.0 + 0.5 * (l as f64 - a as f64))
            };
            let off = offsets.clone();
            let eval = move |u: &[T]| {
                Mat::from_fn(n, d, |l, a| off.get(l, a) + weight(l, a) * u[l] * u[n + (a % n)])
            };
            let jac = move |u: &[T], slot: usize| {
                SigmaJac::from_fn(n, d, |l, a, m| {
                    if slot == 0 && m == l {
                        weight(l, a) * u[n + (a % n)]
                    } else if slot == 1 && m == a % n {
                        weight(l, a) * u[l]
                    } else {
                        T::zero()
                    }
                })
            };
            Ok(SigmaField::new(
                name,
                n,
                k,
                d,
                SigmaBounds { sup_value: T::infinity(), sup_d1: T::infinity(), sup_d2: real::<T>(1.5) },
                eval,
                jac,
            ))
        }
        other => Err(Error::domain(format!(
            "unknown sigma model '{other}' (registered: {})",
            SIGMA_MODELS.join(", ")
        ))),
    }
}

/// Classical controlled path: value `z` (n×1), density `ζ` (n×d), both over
/// the same grid index span, based on the driver `x`.
#[derive(Clone)]
pub struct Ccp<T> {
    value: GridPath<T>,
    density: GridPath<T>,
    driver: GridPath<T>,
}

impl<T: Scalar> Ccp<T> {
    pub fn new(value: GridPath<T>, density: GridPath<T>, driver: GridPath<T>) -> Result<Self> {
        if value.cols() != 1 {
            return Err(Error::shape("ccp value must be a vector path"));
        }
        if density.rows() != value.rows() || density.cols() != driver.dim() {
            return Err(Error::shape("ccp density must be n×d"));
        }
        if value.start() != density.start() || value.end() != density.end() {
            return Err(Error::domain("ccp value and density spans differ"));
        }
        Ok(Ccp { value, density, driver })
    }

    pub fn value(&self) -> &GridPath<T> {
        &self.value
    }

    pub fn density(&self) -> &GridPath<T> {
        &self.density
    }

    pub fn driver(&self) -> &GridPath<T> {
        &self.driver
    }

    pub fn span(&self) -> (usize, usize) {
        (self.value.start(), self.value.end())
    }

    pub fn state_dim(&self) -> usize {
        self.value.rows()
    }

    pub fn initial(&self) -> Mat<T> {
        self.value.value(self.value.start())
    }

    /// Derived remainder `ρ_{st} = (δz)_{st} − ζ_s (δx)_{st}`.
    pub fn remainder(&self, s: usize, t: usize) -> Mat<T> {
        self.value
            .increment(s, t)
            .sub(&self.density.value(s).matmul(&self.driver.increment(s, t)).expect("n×d times d×1"))
    }

    pub fn remainder_increment(&self) -> Increment2<T> {
        let me = self.clone();
        let (lo, hi) = self.span();
        Increment2::new(self.value.grid().clone(), lo, hi, self.state_dim(), 1, move |s, t| {
            me.remainder(s, t)
        })
    }

    pub fn restrict(&self, lo: usize, hi: usize) -> Result<Self> {
        Ok(Ccp {
            value: self.value.restrict(lo, hi)?,
            density: self.density.restrict(lo, hi)?,
            driver: self.driver.clone(),
        })
    }

    /// Difference of two controlled paths over the same span and driver.
    pub fn sub(&self, other: &Ccp<T>) -> Result<Ccp<T>> {
        if self.span() != other.span() {
            return Err(Error::domain("ccp difference: spans differ"));
        }
        Ok(Ccp {
            value: self.value.sub(&other.value)?,
            density: self.density.sub(&other.density)?,
            driver: self.driver.clone(),
        })
    }

    /// A CCP is a DCP with vanishing delayed densities.
    pub fn embed_dcp(&self, delay_cells: &[usize]) -> Dcp<T> {
        let (lo, hi) = self.span();
        let n = self.state_dim();
        let d = self.driver.dim();
        let mut densities = vec![self.density.clone()];
        for _ in delay_cells {
            densities.push(GridPath::segment_from_fn(
                self.value.grid(),
                lo,
                hi - lo + 1,
                n,
                d,
                |_| Mat::zeros(n, d),
            ));
        }
        let mut delays = vec![0usize];
        delays.extend_from_slice(delay_cells);
        Dcp {
            value: self.value.clone(),
            densities,
            delays,
            driver: self.driver.clone(),
        }
    }
}

/// Delayed controlled path. `value` is (n, w) — w = 1 for vector paths, w = d
/// for σ-composed paths — and each density is ((n·w), d) over the same span.
#[derive(Clone)]
pub struct Dcp<T> {
    value: GridPath<T>,
    densities: Vec<GridPath<T>>,
    /// Delay shifts in cells, ascending, starting with 0.
    delays: Vec<usize>,
    driver: GridPath<T>,
}

impl<T: Scalar> Dcp<T> {
    pub fn new(
        value: GridPath<T>,
        densities: Vec<GridPath<T>>,
        delays: Vec<usize>,
        driver: GridPath<T>,
    ) -> Result<Self> {
        if densities.len() != delays.len() {
            return Err(Error::shape("one density per delay required"));
        }
        if delays.is_empty() || delays[0] != 0 {
            return Err(Error::domain("delay list must start with the zero delay"));
        }
        let (n, w) = (value.rows(), value.cols());
        let d = driver.dim();
        for dens in &densities {
            if dens.rows() != n * w || dens.cols() != d {
                return Err(Error::shape("density must be (n·w)×d"));
            }
            if dens.start() != value.start() || dens.end() != value.end() {
                return Err(Error::domain("density span differs from value span"));
            }
        }
        Ok(Dcp { value, densities, delays, driver })
    }

    pub fn value(&self) -> &GridPath<T> {
        &self.value
    }

    pub fn density(&self, i: usize) -> &GridPath<T> {
        &self.densities[i]
    }

    pub fn densities(&self) -> &[GridPath<T>] {
        &self.densities
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn driver(&self) -> &GridPath<T> {
        &self.driver
    }

    pub fn span(&self) -> (usize, usize) {
        (self.value.start(), self.value.end())
    }

    pub fn value_shape(&self) -> (usize, usize) {
        (self.value.rows(), self.value.cols())
    }

    /// Derived remainder
    /// `ρ_{st} = (δz)_{st} − Σ_i ζ^{(i)}_s (δx)_{s−r_i, t−r_i}`, shaped (n, w).
    pub fn remainder(&self, s: usize, t: usize) -> Mat<T> {
        let (n, w) = self.value_shape();
        let mut acc = self.value.increment(s, t);
        for (dens, &shift) in self.densities.iter().zip(&self.delays) {
            let dx = self.driver.increment(s - shift, t - shift);
            let contrib = dens.value(s).matmul(&dx).expect("(n·w)×d times d×1");
            acc = acc.sub(&Mat::from_vec(n, w, contrib.as_slice().to_vec()));
        }
        acc
    }

    pub fn remainder_increment(&self) -> Increment2<T> {
        let me = self.clone();
        let (lo, hi) = self.span();
        let (n, w) = self.value_shape();
        Increment2::new(self.value.grid().clone(), lo, hi, n, w, move |s, t| me.remainder(s, t))
    }

    pub fn sub(&self, other: &Dcp<T>) -> Result<Dcp<T>> {
        if self.span() != other.span() || self.delays != other.delays {
            return Err(Error::domain("dcp difference: spans or delays differ"));
        }
        let densities = self
            .densities
            .iter()
            .zip(&other.densities)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dcp {
            value: self.value.sub(&other.value)?,
            densities,
            delays: self.delays.clone(),
            driver: self.driver.clone(),
        })
    }
}

/// The four components of the controlled-path norm and their sum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CpNorm<T> {
    pub kappa: T,
    pub value_seminorm: T,
    pub remainder_seminorm: T,
    pub density_sup: T,
    pub density_seminorm: T,
    pub total: T,
    /// False when any underlying scan used the subsample policy.
    pub exact: bool,
}

fn check_kappa<T: Scalar>(kappa: T) -> Result<()> {
    let third = T::one() / real::<T>(3.0);
    if !(kappa > third && kappa < T::one()) {
        return Err(Error::domain(format!("kappa must lie in (1/3, 1), got {kappa}")));
    }
    Ok(())
}

/// `N[z; Q_κ]`: value κ-seminorm + remainder 2κ-seminorm + density sup +
/// density κ-seminorm.
pub fn ccp_norm<T: Scalar>(z: &Ccp<T>, kappa: T) -> Result<CpNorm<T>> {
    check_kappa(kappa)?;
    let two_kappa = kappa + kappa;
    let val = holder_seminorm2(&crate::increments::delta1(z.value()), kappa)?;
    let rem = holder_seminorm2(&z.remainder_increment(), two_kappa)?;
    let dsup = z.density().sup_norm();
    let dsem = holder_seminorm2(&crate::increments::delta1(z.density()), kappa)?;
    Ok(CpNorm {
        kappa,
        value_seminorm: val.value,
        remainder_seminorm: rem.value,
        density_sup: dsup,
        density_seminorm: dsem.value,
        total: val.value + rem.value + dsup + dsem.value,
        exact: val.exact && rem.exact && dsem.exact,
    })
}

/// `N[z; D_κ]`: as [`ccp_norm`] with the density terms summed over delays.
pub fn dcp_norm<T: Scalar>(z: &Dcp<T>, kappa: T) -> Result<CpNorm<T>> {
    check_kappa(kappa)?;
    let two_kappa = kappa + kappa;
    let val = holder_seminorm2(&crate::increments::delta1(z.value()), kappa)?;
    let rem = holder_seminorm2(&z.remainder_increment(), two_kappa)?;
    let mut dsup = T::zero();
    let mut dsem = T::zero();
    let mut exact = val.exact && rem.exact;
    for dens in z.densities() {
        dsup = dsup + dens.sup_norm();
        let s = holder_seminorm2(&crate::increments::delta1(dens), kappa)?;
        dsem = dsem + s.value;
        exact &= s.exact;
    }
    Ok(CpNorm {
        kappa,
        value_seminorm: val.value,
        remainder_seminorm: rem.value,
        density_sup: dsup,
        density_seminorm: dsem,
        total: val.value + rem.value + dsup + dsem,
        exact,
    })
}

/// Composition `T_σ(z, z̃)`: value `σ(z_t, z̃_{t−r_1}, …, z̃_{t−r_k})`, one
/// density per delay obtained by the chain rule, remainder implied.
///
/// `past` must cover `[a − r_k, b − r_1]` and may be `None` only when there
/// are no delays.
pub fn t_sigma<T: Scalar>(
    z: &Ccp<T>,
    past: Option<&Ccp<T>>,
    sigma: &SigmaField<T>,
    delay_cells: &[usize],
) -> Result<Dcp<T>> {
    if sigma.delay_slots() != delay_cells.len() {
        return Err(Error::domain(format!(
            "sigma has {} delay slots but {} delays were given",
            sigma.delay_slots(),
            delay_cells.len()
        )));
    }
    if z.state_dim() != sigma.state_dim() || z.driver().dim() != sigma.driver_dim() {
        return Err(Error::shape("sigma dimensions do not match the controlled path"));
    }
    let (lo, hi) = z.span();
    let k = delay_cells.len();
    if k > 0 {
        let past = past.ok_or_else(|| Error::domain("delayed sigma needs a past path"))?;
        let need_lo = lo.checked_sub(*delay_cells.iter().max().expect("k > 0"))
            .ok_or_else(|| Error::domain("delays reach before the grid start"))?;
        let need_hi = hi - delay_cells.iter().min().expect("k > 0");
        if !past.value().covers_range(need_lo, need_hi) {
            return Err(Error::domain(format!(
                "past path covers [{}, {}] but [{need_lo}, {need_hi}] is required",
                past.value().start(),
                past.value().end()
            )));
        }
    }
    let n = sigma.state_dim();
    let d = sigma.driver_dim();
    let len = hi - lo + 1;
    let grid = z.value().grid();

    let tuple_at = |s: usize| -> Vec<T> {
        let mut u = Vec::with_capacity(n * (k + 1));
        u.extend_from_slice(z.value().at(s));
        if let Some(p) = past {
            for &shift in delay_cells {
                u.extend_from_slice(p.value().at(s - shift));
            }
        }
        u
    };

    let value = GridPath::segment_from_fn(grid, lo, len, n, d, |s| sigma.eval(&tuple_at(s)));
    let mut densities = Vec::with_capacity(k + 1);
    {
        let dens0 = GridPath::segment_from_fn(grid, lo, len, n * d, d, |s| {
            sigma.jac(&tuple_at(s), 0).contract_density(&z.density().value(s))
        });
        densities.push(dens0);
    }
    for (i, &shift) in delay_cells.iter().enumerate() {
        let p = past.expect("checked above");
        let dens = GridPath::segment_from_fn(grid, lo, len, n * d, d, |s| {
            sigma
                .jac(&tuple_at(s), i + 1)
                .contract_density(&p.density().value(s - shift))
        });
        densities.push(dens);
    }
    let mut delays = Vec::with_capacity(k + 1);
    delays.push(0);
    delays.extend_from_slice(delay_cells);
    Dcp::new(value, densities, delays, z.driver().clone())
}

/// Both sides of the local-Lipschitz estimate for T_σ.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzProbe<T> {
    /// `N[T_σ(z1, z̃) − T_σ(z2, z̃); D_{κ,0}]`.
    pub output_diff_norm: T,
    /// `N[z1 − z2; Q_{κ,0}]`.
    pub input_diff_norm: T,
    /// `output / input`, `None` when the inputs coincide (0/0 sentinel).
    pub ratio: Option<T>,
    /// `(1 + N[z̃] + N[z1] + N[z2])²` — the envelope shape without its constant.
    pub envelope_base: T,
}

pub fn t_sigma_lipschitz_probe<T: Scalar>(
    z1: &Ccp<T>,
    z2: &Ccp<T>,
    past: Option<&Ccp<T>>,
    sigma: &SigmaField<T>,
    delay_cells: &[usize],
    kappa: T,
) -> Result<LipschitzProbe<T>> {
    if z1.span() != z2.span() {
        return Err(Error::domain("lipschitz probe: spans differ"));
    }
    let out1 = t_sigma(z1, past, sigma, delay_cells)?;
    let out2 = t_sigma(z2, past, sigma, delay_cells)?;
    let out_norm = dcp_norm(&out1.sub(&out2)?, kappa)?.total;
    let in_norm = ccp_norm(&z1.sub(z2)?, kappa)?.total;
    let mut c = ccp_norm(z1, kappa)?.total + ccp_norm(z2, kappa)?.total;
    if let Some(p) = past {
        c = c + ccp_norm(p, kappa)?.total;
    }
    let envelope_base = (T::one() + c) * (T::one() + c);
    let ratio = if in_norm == T::zero() { None } else { Some(out_norm / in_norm) };
    Ok(LipschitzProbe { output_diff_norm: out_norm, input_diff_norm: in_norm, ratio, envelope_base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::synthetic;

    fn setup(cells: usize) -> (Grid<f64>, GridPath<f64>) {
        let grid = Grid::new(1.0 / cells as f64, cells / 4, cells).unwrap();
        let driver = synthetic::seeded_smooth_path(&grid, 2, 1, 77, 1.0);
        (grid, driver)
    }

    #[test]
    fn all_models_pass_jacobian_validation() {
        for name in SIGMA_MODELS {
            let sigma = sigma_by_name::<f64>(name, 2, 2, 1).unwrap();
            let worst = sigma.validate_jacobian(1234, 50).unwrap();
            assert!(worst.is_finite(), "{name}: {worst}");
        }
        // k = 0 variants (bilinear needs a delay)
        for name in ["constant", "linear", "sine"] {
            let sigma = sigma_by_name::<f64>(name, 3, 2, 0).unwrap();
            sigma.validate_jacobian(99, 20).unwrap();
        }
        assert!(sigma_by_name::<f64>("bilinear-noncommuting", 2, 2, 0).is_err());
        assert!(sigma_by_name::<f64>("no-such-model", 2, 2, 1).is_err());
    }

    #[test]
    fn ccp_norm_of_constant_path_is_zero() {
        let (grid, driver) = setup(32);
        let i0 = grid.index_zero();
        let value = GridPath::segment_from_fn(&grid, i0, 16, 2, 1, |_| Mat::zeros(2, 1));
        let density = GridPath::segment_from_fn(&grid, i0, 16, 2, 2, |_| Mat::zeros(2, 2));
        let z = Ccp::new(value, density, driver).unwrap();
        let norm = ccp_norm(&z, 0.4).unwrap();
        assert_eq!(norm.total, 0.0);
    }

    #[test]
    fn ccp_norm_of_driver_with_identity_density() {
        // z = x, ζ = Id: ρ ≡ 0, total = ‖δx‖_κ + 1.
        let (grid, driver) = setup(32);
        let value = driver.clone();
        let density = GridPath::from_fn(&grid, 2, 2, |_| Mat::identity(2));
        let z = Ccp::new(value, density, driver.clone()).unwrap();
        let kappa = 0.45;
        let norm = ccp_norm(&z, kappa).unwrap();
        let dx = crate::increments::holder_seminorm2(&crate::increments::delta1(&driver), kappa)
            .unwrap()
            .value;
        assert!(norm.remainder_seminorm < 1e-13);
        assert!(norm.density_seminorm < 1e-13);
        assert!((norm.total - (dx + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ccp_norm_matches_direct_enumeration_on_fbm() {
        // random controlled path on an fBm driver, 129-point grid: the scan
        // is exhaustive there and must equal a direct double loop
        let grid = Grid::new(1.0 / 128.0f64, 32, 128).unwrap();
        let spec = crate::fbm::FbmSpec::new(0.45, 2, grid.clone(), 8, crate::fbm::Method::Cholesky)
            .unwrap();
        let driver = crate::fbm::sample_fbm(&spec).unwrap();
        let z = synthetic::random_ccp(&driver, grid.index_zero(), grid.index_end(), 2, 55);
        let kappa = 0.4;
        let norm = ccp_norm(&z, kappa).unwrap();
        assert!(norm.exact);
        let (lo, hi) = z.span();
        let mesh = grid.mesh();
        let mut val = 0.0f64;
        let mut rem = 0.0f64;
        let mut dsem = 0.0f64;
        let mut dsup = 0.0f64;
        for s in lo..=hi {
            dsup = dsup.max(z.density().value(s).max_norm());
            for t in (s + 1)..=hi {
                let gap = (t - s) as f64 * mesh;
                val = val.max(z.value().increment(s, t).max_norm() / gap.powf(kappa));
                rem = rem.max(z.remainder(s, t).max_norm() / gap.powf(2.0 * kappa));
                dsem = dsem.max(z.density().increment(s, t).max_norm() / gap.powf(kappa));
            }
        }
        assert!((norm.total - (val + rem + dsup + dsem)).abs() < 1e-12 * (1.0 + norm.total));
    }

    #[test]
    fn ccp_norm_matches_direct_enumeration() {
        let (grid, driver) = setup(32);
        let z = synthetic::random_ccp(&driver, 0, grid.index_end(), 2, 5);
        let kappa = 0.4;
        let norm = ccp_norm(&z, kappa).unwrap();
        assert!(norm.exact);
        // direct loops
        let (lo, hi) = z.span();
        let mesh = grid.mesh();
        let mut val = 0.0f64;
        let mut rem = 0.0f64;
        let mut dsem = 0.0f64;
        let mut dsup = 0.0f64;
        for s in lo..=hi {
            dsup = dsup.max(z.density().value(s).max_norm());
            for t in (s + 1)..=hi {
                let gap = (t - s) as f64 * mesh;
                val = val.max(z.value().increment(s, t).max_norm() / gap.powf(kappa));
                rem = rem.max(z.remainder(s, t).max_norm() / gap.powf(2.0 * kappa));
                dsem = dsem.max(z.density().increment(s, t).max_norm() / gap.powf(kappa));
            }
        }
        assert!((norm.value_seminorm - val).abs() < 1e-13);
        assert!((norm.remainder_seminorm - rem).abs() < 1e-13);
        assert!((norm.density_sup - dsup).abs() < 1e-13);
        assert!((norm.density_seminorm - dsem).abs() < 1e-13);
        assert!((norm.total - (val + rem + dsup + dsem)).abs() < 1e-12);
    }

    #[test]
    fn kappa_range_enforced() {
        let (grid, driver) = setup(16);
        let z = synthetic::random_ccp(&driver, 0, grid.index_end(), 1, 3);
        assert!(ccp_norm(&z, 0.2).is_err());
        assert!(ccp_norm(&z, 1.0).is_err());
    }

    #[test]
    fn decomposition_consistency() {
        // Reconstructing δz from (density, remainder) reproduces δz.
        let (grid, driver) = setup(24);
        let z = synthetic::random_ccp(&driver, 0, grid.index_end(), 2, 8);
        let (lo, hi) = z.span();
        for s in lo..hi {
            for t in (s + 1)..=hi {
                let rebuilt = z
                    .density()
                    .value(s)
                    .matmul(&driver.increment(s, t))
                    .unwrap()
                    .add(&z.remainder(s, t));
                let dz = z.value().increment(s, t);
                assert!(rebuilt.sub(&dz).max_norm() <= 1e-12 * (1.0 + dz.max_norm()));
            }
        }
    }

    #[test]
    fn embedding_ccp_as_dcp_preserves_norm() {
        let (grid, driver) = setup(32);
        let shift = 8usize;
        let z = synthetic::random_ccp(&driver, shift, grid.index_end(), 2, 13);
        let kappa = 0.38;
        let dcp = z.embed_dcp(&[shift]);
        let a = ccp_norm(&z, kappa).unwrap();
        let b = dcp_norm(&dcp, kappa).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
        assert!((a.remainder_seminorm - b.remainder_seminorm).abs() < 1e-13);
    }

    #[test]
    fn constant_sigma_composition() {
        let (grid, driver) = setup(32);
        let shift = 8usize;
        let i0 = grid.index_zero();
        let z = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 20);
        let past = synthetic::random_ccp(&driver, i0 - shift, grid.index_end() - shift, 2, 21);
        let sigma = sigma_by_name::<f64>("constant", 2, 2, 1).unwrap();
        let out = t_sigma(&z, Some(&past), &sigma, &[shift]).unwrap();
        let c = sigma.eval(&vec![0.0; 4]);
        let (lo, hi) = out.span();
        for s in lo..=hi {
            assert!(out.value().value(s).sub(&c).max_norm() < 1e-15);
            for dens in out.densities() {
                assert_eq!(dens.value(s).max_norm(), 0.0);
            }
        }
        for (s, t) in [(lo, hi), (lo + 1, lo + 5)] {
            assert!(out.remainder(s, t).max_norm() < 1e-15);
        }
    }

    #[test]
    fn linear_sigma_kills_taylor_remainder() {
        // For linear σ the densities are the exact slope contractions and
        // the output remainder is exactly the slope-applied input remainders.
        let (grid, driver) = setup(32);
        let shift = 8usize;
        let i0 = grid.index_zero();
        let z = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 30);
        let past = synthetic::random_ccp(&driver, i0 - shift, grid.index_end() - shift, 2, 31);
        let sigma = sigma_by_name::<f64>("linear", 2, 2, 1).unwrap();
        let out = t_sigma(&z, Some(&past), &sigma, &[shift]).unwrap();
        let (lo, hi) = out.span();
        let u0 = vec![0.0; 4];
        for (s, t) in [(lo, lo + 3), (lo + 2, hi), (hi - 1, hi)] {
            let j0 = sigma.jac(&u0, 0);
            let j1 = sigma.jac(&u0, 1);
            let want = j0
                .apply_vector(&z.remainder(s, t))
                .add(&j1.apply_vector(&past.remainder(s - shift, t - shift)));
            let got = out.remainder(s, t);
            assert!(got.sub(&want).max_norm() <= 1e-12 * (1.0 + want.max_norm()));
        }
    }

    #[test]
    fn taylor_remainder_bound_for_sine_model() {
        // |ρ̂²_{st}| ≤ ½‖σ''‖ (|δz|² + Σ_i |δz̃ shifted|²) pointwise, where
        // ρ̂² = ρ̂ − (first-order remainder pass-through).
        let (grid, driver) = setup(64);
        let shift = 16usize;
        let i0 = grid.index_zero();
        let z = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 40);
        let past = synthetic::random_ccp(&driver, i0 - shift, grid.index_end() - shift, 2, 41);
        let sigma = sigma_by_name::<f64>("sine", 2, 2, 1).unwrap();
        let out = t_sigma(&z, Some(&past), &sigma, &[shift]).unwrap();
        let (lo, hi) = out.span();
        let sup_d2 = sigma.bounds().sup_d2;
        for s in (lo..hi).step_by(5) {
            for t in ((s + 1)..=hi).step_by(7) {
                let mut u = Vec::new();
                u.extend_from_slice(z.value().at(s));
                u.extend_from_slice(past.value().at(s - shift));
                let first_order = sigma
                    .jac(&u, 0)
                    .apply_vector(&z.remainder(s, t))
                    .add(&sigma.jac(&u, 1).apply_vector(&past.remainder(s - shift, t - shift)));
                let rho2 = out.remainder(s, t).sub(&first_order);
                let dz = z.value().increment(s, t).max_norm();
                let dzt = past.value().increment(s - shift, t - shift).max_norm();
                // entrywise bound; the state dimension enters because the
                // second-derivative form contracts over n entries per slot
                let budget = 0.5 * sup_d2 * 2.0 * (dz * dz + dzt * dzt) * 2.0;
                assert!(
                    rho2.max_norm() <= budget + 1e-12,
                    "({s},{t}): {} > {budget}",
                    rho2.max_norm()
                );
            }
        }
    }

    #[test]
    fn t_sigma_initial_value() {
        let (grid, driver) = setup(32);
        let shift = 8usize;
        let i0 = grid.index_zero();
        let z = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 50);
        let past = synthetic::random_ccp(&driver, i0 - shift, grid.index_end() - shift, 2, 51);
        let sigma = sigma_by_name::<f64>("sine", 2, 2, 1).unwrap();
        let out = t_sigma(&z, Some(&past), &sigma, &[shift]).unwrap();
        let mut u = Vec::new();
        u.extend_from_slice(z.value().at(i0));
        u.extend_from_slice(past.value().at(i0 - shift));
        let want = sigma.eval(&u);
        assert!(out.value().value(i0).sub(&want).max_norm() < 1e-15);
    }

    #[test]
    fn t_sigma_coverage_violation() {
        let (grid, driver) = setup(32);
        let i0 = grid.index_zero();
        let z = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 60);
        // past too short: starts exactly at i0 − 4 but shift is 8
        let past = synthetic::random_ccp(&driver, i0 - 4, grid.index_end(), 2, 61);
        let sigma = sigma_by_name::<f64>("sine", 2, 2, 1).unwrap();
        assert!(t_sigma(&z, Some(&past), &sigma, &[8]).is_err());
    }

    #[test]
    fn lipschitz_probe_constant_and_linear() {
        let (grid, driver) = setup(32);
        let shift = 8usize;
        let i0 = grid.index_zero();
        let kappa = 0.4;
        let z1 = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 70);
        let z2 = synthetic::random_ccp(&driver, i0, grid.index_end(), 2, 71);
        let past = synthetic::random_ccp(&driver, i0 - shift, grid.index_end() - shift, 2, 72);

        let constant = sigma_by_name::<f64>("constant", 2, 2, 1).unwrap();
        let probe = t_sigma_lipschitz_probe(&z1, &z2, Some(&past), &constant, &[shift], kappa).unwrap();
        assert_eq!(probe.output_diff_norm, 0.0);
        assert_eq!(probe.ratio, Some(0.0));

        let same = t_sigma_lipschitz_probe(&z1, &z1, Some(&past), &constant, &[shift], kappa).unwrap();
        assert!(same.ratio.is_none());

        // Linear σ: the output difference is the slope applied to the input
        // difference; the ratio is bounded by the slope scale times a small
        // norm-equivalence factor (state dimension here).
        let linear = sigma_by_name::<f64>("linear", 2, 2, 1).unwrap();
        let probe = t_sigma_lipschitz_probe(&z1, &z2, Some(&past), &linear, &[shift], kappa).unwrap();
        let slope_budget = linear.bounds().sup_d1 * 2.0 * 2.0;
        assert!(probe.ratio.unwrap() <= slope_budget, "{probe:?}");
    }
}
