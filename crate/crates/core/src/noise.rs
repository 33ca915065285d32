//! Discretized additive white Gaussian noise and the statistics of its
//! time-averaged version.
//!
//! Each (seed, run, step) triple addresses an independent ChaCha8 stream, so
//! realizations never depend on scheduling and the same keys can be reused
//! across channel parameters for common-random-number comparisons.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, TimeGrid, C64};

/// Minimum W′/W accepted by [`NoiseSpec::check_bandwidth`].
pub const MIN_NOISE_BANDWIDTH_RATIO: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Q, noise power per unit length per unit bandwidth.
    pub q: f64,
    pub seed: u64,
    /// Δz.
    pub step_length: f64,
    pub grid: TimeGrid,
}

impl NoiseSpec {
    pub fn new(q: f64, seed: u64, step_length: f64, grid: TimeGrid) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidInput(format!("noise power Q must be non-negative, got {q}")));
        }
        if !(step_length > 0.0 && step_length.is_finite()) {
            return Err(Error::InvalidInput(format!("step length must be positive, got {step_length}")));
        }
        Ok(Self { q, seed, step_length, grid })
    }

    /// Per-sample variance E|η|² = Q/(Δz·dt).
    pub fn sample_variance(&self) -> f64 {
        self.q / (self.step_length * self.grid.dt)
    }

    /// Requires W′ = 2π/dt to exceed the signal band 2π/δt by the margin.
    pub fn check_bandwidth(&self, pulse_width: f64) -> Result<()> {
        let ratio = pulse_width / self.grid.dt;
        if ratio < MIN_NOISE_BANDWIDTH_RATIO * (1.0 - 1e-12) {
            return Err(Error::InvalidInput(format!(
                "noise bandwidth ratio W'/W = {ratio} is below {MIN_NOISE_BANDWIDTH_RATIO}"
            )));
        }
        Ok(())
    }

    /// Fills `out` with η(z_step, t_i) for the given run.
    pub fn fill_step(&self, run: u64, step: u64, out: &mut [C64]) {
        if self.q == 0.0 {
            out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            return;
        }
        let sd = (0.5 * self.sample_variance()).sqrt();
        let mut rng = ChaCha8Rng::from_seed(stream_key(self.seed, run, step));
        for v in out.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v = C64::new(sd * re, sd * im);
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 256-bit ChaCha key derived from (seed, run, step).
pub fn stream_key(seed: u64, run: u64, step: u64) -> [u8; 32] {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ run.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let c = splitmix64(b ^ step.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
    let words = [a ^ c, splitmix64(c), splitmix64(c ^ 0xA5A5_A5A5_A5A5_A5A5), b];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    key
}

/// One step of noise for run 0.
pub fn sample_noise_step(spec: &NoiseSpec, step: u64) -> ComplexField {
    sample_noise_step_for_run(spec, 0, step)
}

pub fn sample_noise_step_for_run(spec: &NoiseSpec, run: u64, step: u64) -> ComplexField {
    let mut field = ComplexField::zeros(spec.grid);
    spec.fill_step(run, step, field.values_mut());
    field
}

/// All per-step noise fields of one run.
#[derive(Clone, Debug)]
pub struct NoiseRealization {
    pub seed: u64,
    pub run: u64,
    pub steps: Vec<ComplexField>,
}

impl NoiseRealization {
    pub fn generate(spec: &NoiseSpec, run: u64, steps: usize) -> Self {
        Self {
            seed: spec.seed,
            run,
            steps: (0..steps as u64).map(|j| sample_noise_step_for_run(spec, run, j)).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }
}

/// K(u) = (1/2τ_a)(1 − |u|/2τ_a) for |u| ≤ 2τ_a, else 0.
pub fn averaged_noise_covariance(lag: f64, tau_a: f64) -> f64 {
    let w = 2.0 * tau_a;
    let u = lag.abs();
    if u >= w {
        0.0
    } else {
        (1.0 - u / w) / w
    }
}

/// sin(x)/x.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// K_ω = sinc²(ωτ_a).
pub fn spectral_filter_gain(omega: f64, tau_a: f64) -> f64 {
    let s = sinc(omega * tau_a);
    s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_power_is_silent() {
        let g = TimeGrid::centered(64, 0.1).unwrap();
        let spec = NoiseSpec::new(0.0, 1, 0.01, g).unwrap();
        assert_eq!(sample_noise_step(&spec, 3).max_abs(), 0.0);
    }

    #[test]
    fn sample_variance_matches() {
        // 10⁶ samples, Q=1, Δz=0.01, dt=0.05 → E|η|² = 2000.
        let g = TimeGrid::centered(1 << 20, 0.05).unwrap();
        let spec = NoiseSpec::new(1.0, 42, 0.01, g).unwrap();
        let f = sample_noise_step(&spec, 0);
        let n = f.len() as f64;
        let m = f.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        assert!((m - 2000.0).abs() < 3.0 * 2000.0 / n.sqrt(), "mean |eta|^2 = {m}");
        let re_var = f.values().iter().map(|v| v.re * v.re).sum::<f64>() / n;
        assert!((re_var - 1000.0).abs() < 3.0 * 1000.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn steps_are_uncorrelated() {
        let g = TimeGrid::centered(1 << 16, 0.05).unwrap();
        let spec = NoiseSpec::new(1.0, 7, 0.01, g).unwrap();
        let a = sample_noise_step(&spec, 0);
        let b = sample_noise_step(&spec, 1);
        let n = a.len() as f64;
        let cross: C64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y.conj()).sum::<C64>() / n;
        let se = spec.sample_variance() / n.sqrt();
        assert!(cross.re.abs() < 3.0 * se && cross.im.abs() < 3.0 * se);
    }

    #[test]
    fn keys_are_deterministic_and_distinct() {
        let g = TimeGrid::centered(32, 0.1).unwrap();
        let spec = NoiseSpec::new(1.0, 5, 0.1, g).unwrap();
        assert_eq!(sample_noise_step_for_run(&spec, 2, 3), sample_noise_step_for_run(&spec, 2, 3));
        assert_ne!(stream_key(5, 2, 3), stream_key(5, 3, 2));
        assert_ne!(stream_key(5, 0, 1), stream_key(6, 0, 1));
    }

    #[test]
    fn triangle_kernel_values() {
        let tau = 0.3;
        assert!((averaged_noise_covariance(0.0, tau) - 1.0 / (2.0 * tau)).abs() < 1e-15);
        assert_eq!(averaged_noise_covariance(2.0 * tau, tau), 0.0);
        let h = 1e-4;
        let integral: f64 = (-8000..=8000).map(|i| averaged_noise_covariance(i as f64 * h, tau) * h).sum();
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gain_values() {
        assert_eq!(spectral_filter_gain(0.0, 0.1), 1.0);
        assert!(spectral_filter_gain(PI / 0.1, 0.1) < 1e-30);
        let g = spectral_filter_gain(2.0 * PI, 0.1);
        assert!((g - 0.8751).abs() < 1e-3);
        assert_eq!(spectral_filter_gain(3.0, 0.0), 1.0);
    }

    #[test]
    fn bandwidth_guard() {
        let g = TimeGrid::centered(64, 0.25).unwrap();
        let spec = NoiseSpec::new(1.0, 0, 0.1, g).unwrap();
        assert!(spec.check_bandwidth(1.0).is_err());
        assert!(spec.check_bandwidth(2.0).is_ok());
    }
}
