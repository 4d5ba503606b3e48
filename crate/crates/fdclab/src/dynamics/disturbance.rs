//! Atmospheric disturbance as a first-order Gauss–Markov process.
//!
//! Surrogate for the Dryden turbulence spectrum: low-pass filtered white
//! noise per axis,
//!
//! ```text
//! w[k+1] = w[k]·e^(-dt/τ) + σ·sqrt(1 - e^(-2dt/τ))·ξ[k],   ξ ~ N(0,1)
//! ```
//!
//! started from its stationary distribution, so the sequence has stationary
//! variance σ² and lag-1 autocorrelation e^(-dt/τ) from the first sample.

use super::WindRates;
use crate::rng::stream_rng;
use rand_distr::{Distribution, Normal};

/// Single-axis Gauss–Markov sequence of length `n`.
pub fn gauss_markov(seed: u64, dt: f64, n: usize, sigma: f64, timescale: f64) -> Vec<f64> {
    assert!(timescale > 0.0, "timescale must be positive");
    assert!(sigma >= 0.0, "intensity must be non-negative");
    let decay = (-dt / timescale).exp();
    let drive = sigma * (1.0 - decay * decay).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream_rng(seed, 0xD0);

    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut w = sigma * unit.sample(&mut rng);
    out.push(w);
    for _ in 1..n {
        w = w * decay + drive * unit.sample(&mut rng);
        out.push(w);
    }
    out
}

/// Three independent wind-rate axes with shared intensity and timescale.
pub fn dryden_disturbance(
    seed: u64,
    dt: f64,
    n: usize,
    intensity: f64,
    timescale: f64,
) -> Vec<WindRates> {
    let x = gauss_markov(crate::rng::mix(seed, 1), dt, n, intensity, timescale);
    let y = gauss_markov(crate::rng::mix(seed, 2), dt, n, intensity, timescale);
    let z = gauss_markov(crate::rng::mix(seed, 3), dt, n, intensity, timescale);
    x.into_iter()
        .zip(y)
        .zip(z)
        .map(|((wx, wy), wz)| WindRates { wx, wy, wz })
        .collect()
}
