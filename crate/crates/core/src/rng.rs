//! Counter-based pseudo-random streams for reproducible Monte Carlo.
//!
//! A stream is addressed by `(seed, trial, component)` and a draw inside a
//! stream by a counter, so trials can be generated independently, in any
//! order, and in parallel, while staying bit-identical run to run.
//!
//! The generator is the splitmix64 output function applied to
//! `key + counter · GOLDEN`: a pure function of (key, counter) with no
//! state. Uniform and Gaussian transforms are fixed in `f64` and converted
//! to the target scalar afterwards, so every scalar type sees the same
//! underlying deviate sequence.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the stream `(seed, trial, component)`.
#[inline]
pub fn stream_key(seed: u64, trial: u64, component: u64) -> u64 {
    let a = mix64(seed ^ 0xA076_1D64_78BD_642F);
    let b = mix64(a ^ trial.wrapping_mul(0xE703_7ED1_A0B4_28DB));
    mix64(b ^ component.wrapping_mul(0x8EBC_6AF0_9C88_C6E3))
}

/// Raw 64-bit draw at `counter` within a stream.
#[inline]
pub fn bits(key: u64, counter: u64) -> u64 {
    mix64(key.wrapping_add(counter.wrapping_mul(GOLDEN)))
}

/// Uniform deviate in the open interval (0, 1): the top 53 bits shifted into
/// the unit interval with a half-ulp offset, so 0 and 1 are never produced.
#[inline]
pub fn uniform(key: u64, counter: u64) -> f64 {
    ((bits(key, counter) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard Gaussian deviate with index `i` within a stream, via Box–Muller
/// on the uniforms at counters `2i` and `2i + 1`. Stateless: deviate `i` is
/// the same no matter how many others are drawn.
#[inline]
pub fn gaussian(key: u64, i: u64) -> f64 {
    let u = uniform(key, 2 * i);
    let v = uniform(key, 2 * i + 1);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}
