//! Uniform time grids, sampled complex envelopes and the FFT plumbing shared
//! by the solver, the detector and the kernel evaluator.
//!
//! Spectral ordering follows `rustfft`: bin `k` holds the amplitude of the
//! mode `exp(+i ω_k t)` with ω_k = 2πk/(n dt) for k < n/2 and negative
//! frequencies above. The channel equations are written for modes
//! `exp(-i ω t)`, so the physical ω of a kernel equals `-ω_k`; the helpers
//! below that expose "ω-power" operators return the physical convention.

use std::f64::consts::PI;
use std::io::{self, BufRead, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const BINARY_MAGIC: &[u8; 8] = b"KLFIELD1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub samples: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(start: f64, samples: usize, dt: f64) -> Result<Self> {
        if samples < 2 || !samples.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "sample_count must be a power of two >= 2, got {samples}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if !start.is_finite() {
            return Err(Error::InvalidInput("grid start must be finite".into()));
        }
        Ok(Self { start, samples, dt })
    }

    /// Grid symmetric about t = 0 with a sample exactly at the origin.
    pub fn centered(samples: usize, dt: f64) -> Result<Self> {
        Self::new(-((samples / 2) as f64) * dt, samples, dt)
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|i| self.time(i)).collect()
    }

    /// Periodic window length `n·dt`.
    pub fn duration(&self) -> f64 {
        self.samples as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }

    /// Implied noise bandwidth W′ = 2π/dt.
    pub fn noise_bandwidth(&self) -> f64 {
        2.0 * PI / self.dt
    }

    /// Angular frequency of each FFT bin, in `rustfft` order.
    pub fn angular_frequencies(&self) -> Vec<f64> {
        let n = self.samples;
        let scale = 2.0 * PI / (n as f64 * self.dt);
        (0..n)
            .map(|k| {
                let kk = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                kk * scale
            })
            .collect()
    }

    /// Index of the sample nearest to `t`, if inside the window.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = ((t - self.start) / self.dt).round();
        if x < 0.0 || x >= self.samples as f64 {
            None
        } else {
            Some(x as usize)
        }
    }
}

/// A complex envelope sampled on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: TimeGrid,
    values: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: TimeGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.samples {
            return Err(Error::InvalidInput(format!(
                "field has {} samples but grid expects {}",
                values.len(),
                grid.samples
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![C64::new(0.0, 0.0); grid.samples] }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> C64) -> Self {
        let values = (0..grid.samples).map(|i| f(grid.time(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// ∫|ψ|² dt by the rectangle rule (exact for periodic band-limited data).
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dt
    }

    /// L² norm, sqrt(∫|ψ|² dt).
    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Relative L² distance ‖self − other‖/‖other‖.
    pub fn relative_distance(&self, other: &ComplexField) -> f64 {
        let num: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = other.values.iter().map(|b| b.norm_sqr()).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:e},{:e},{:e}", self.grid.time(i), v.re, v.im)?;
        }
        Ok(())
    }

    /// Reads a `t,re,im` CSV. The grid is recovered from the first two rows.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Serialization(format!("line {}: expected 3 columns", lineno + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Serialization(format!("line {}: {e}", lineno + 1)))
            };
            times.push(parse(cols[0])?);
            values.push(C64::new(parse(cols[1])?, parse(cols[2])?));
        }
        if times.len() < 2 {
            return Err(Error::Serialization("csv field needs at least two rows".into()));
        }
        let grid = TimeGrid::new(times[0], times.len(), times[1] - times[0])?;
        Self::new(grid, values)
    }

    /// Little-endian record: magic, u64 sample count, f64 dt, f64 start,
    /// then interleaved (re, im) f64 pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.grid.samples as u64).to_le_bytes())?;
        w.write_all(&self.grid.dt.to_le_bytes())?;
        w.write_all(&self.grid.start.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Serialization("bad field record magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let samples = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let start = f64::from_le_bytes(next(&mut r)?);
        let grid = TimeGrid::new(start, samples, dt)?;
        let mut values = Vec::with_capacity(samples);
        for _ in 0..samples {
            let re = f64::from_le_bytes(next(&mut r)?);
            let im = f64::from_le_bytes(next(&mut r)?);
            values.push(C64::new(re, im));
        }
        Self::new(grid, values)
    }
}

/// Cached forward/inverse FFT plans for one grid size.
#[derive(Clone)]
pub struct Spectral {
    grid: TimeGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    omega: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: TimeGrid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.samples);
        let inverse = planner.plan_fft_inverse(grid.samples);
        Self { omega: grid.angular_frequencies(), grid, forward, inverse }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// FFT-bin angular frequencies ω_k (modes `exp(+iω_k t)`).
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn scratch(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len())]
    }

    pub fn forward(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.forward.process_with_scratch(data, scratch);
    }

    /// Inverse transform including the 1/n normalization.
    pub fn inverse(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.inverse.process_with_scratch(data, scratch);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    /// Multiplies the spectrum of `data` by `mask` (FFT order) in place.
    pub fn apply_mask(&self, data: &mut [C64], mask: &[C64], scratch: &mut [C64]) {
        self.forward(data, scratch);
        data.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        self.inverse(data, scratch);
    }

    /// Applies (i∂_t)^p spectrally, i.e. multiplication by the physical ω^p
    /// (ω = -ω_k), zeroing bins with |ω| > `cutoff`.
    pub fn apply_omega_power(&self, data: &mut [C64], p: u32, cutoff: f64, scratch: &mut [C64]) {
        self.forward(data, scratch);
        for (v, &w) in data.iter_mut().zip(&self.omega) {
            if w.abs() > cutoff {
                *v = C64::new(0.0, 0.0);
            } else {
                *v *= (-w).powi(p as i32);
            }
        }
        self.inverse(data, scratch);
    }
}
