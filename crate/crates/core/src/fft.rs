//! Complex FFT in `f64`: iterative radix-2 for power-of-two lengths and
//! Bluestein's chirp-z reduction for every other length. Only the circulant
//! fBm sampler uses this; sizes there are `2·(steps)`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    #[inline]
    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    #[inline]
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    #[inline]
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    #[inline]
    fn conj(self) -> Complex {
        Complex::new(self.re, -self.im)
    }
}

/// In-place forward DFT: `X_k = Σ_j x_j e^{−2πi jk/n}`.
pub fn fft(x: &mut [Complex]) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_pow2(x, false);
    } else {
        bluestein(x, false);
    }
}

/// In-place inverse DFT with the 1/n normalisation.
#[allow(dead_code)]
pub fn ifft(x: &mut [Complex]) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_pow2(x, true);
    } else {
        bluestein(x, true);
    }
    let inv = 1.0 / n as f64;
    for v in x.iter_mut() {
        v.re *= inv;
        v.im *= inv;
    }
}

fn fft_pow2(x: &mut [Complex], inverse: bool) {
    let n = x.len();
    // bit reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let wlen = Complex::new(ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let mut w = Complex::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = x[i + k];
                let v = x[i + k + len / 2].mul(w);
                x[i + k] = u.add(v);
                x[i + k + len / 2] = u.sub(v);
                w = w.mul(wlen);
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Chirp-z: DFT of arbitrary length n as a circular convolution of length
/// m = next power of two ≥ 2n − 1.
fn bluestein(x: &mut [Complex], inverse: bool) {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp_j = e^{sign·πi j²/n}; j² taken mod 2n to keep the angle exact.
    let chirp: Vec<Complex> = (0..n)
        .map(|j| {
            let q = (j as u128 * j as u128 % (2 * n) as u128) as f64;
            let ang = sign * std::f64::consts::PI * q / n as f64;
            Complex::new(ang.cos(), ang.sin())
        })
        .collect();
    let m = (2 * n - 1).next_power_of_two();
    let mut a = vec![Complex::ZERO; m];
    let mut b = vec![Complex::ZERO; m];
    for j in 0..n {
        a[j] = x[j].mul(chirp[j]);
        b[j] = chirp[j].conj();
    }
    for j in 1..n {
        b[m - j] = chirp[j].conj();
    }
    fft_pow2(&mut a, false);
    fft_pow2(&mut b, false);
    for j in 0..m {
        a[j] = a[j].mul(b[j]);
    }
    fft_pow2(&mut a, true);
    let inv_m = 1.0 / m as f64;
    for j in 0..n {
        let v = Complex::new(a[j].re * inv_m, a[j].im * inv_m);
        x[j] = v.mul(chirp[j]);
    }
}
